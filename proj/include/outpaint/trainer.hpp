#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "outpaint/discriminator.hpp"
#include "outpaint/generator.hpp"
#include "outpaint/params.hpp"
#include "outpaint/scenery.hpp"

namespace outpaint {

struct WganLosses {
  double loss_d = 0.0;  // mean(fake) - mean(real), minimised by the critic
  double loss_g = 0.0;  // -mean(fake)
};

WganLosses wgan_losses(std::span<const double> d_real, std::span<const double> d_fake);

// Mean binary cross-entropy of post-sigmoid predictions a [P, K] against
// multi-hot labels. Entries of a must lie strictly inside (0, 1).
double aux_classification_loss(const Tensor& a, const std::vector<CategoryVector>& y);

// Accumulates the parameter gradient of (weight / 2) * mean_b |grad_x D(x_b)|^2
// into the critic's parameters and returns mean_b |grad_x D(x_b)|^2.
double r1_penalty_grad(Discriminator& discriminator, const Tensor& real, double weight);

struct TrainingConfig {
  int batch_size = 4;
  int steps = 5000;
  double lr_g = 2e-3;
  double lr_d = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double r1_gamma = 10.0;
  int r1_interval = 16;
  // Penalty on the squared critic output for real images; keeps the
  // unbounded WGAN scores from drifting.
  double drift = 1e-3;
  // Exponential moving average of the generator weights, half-life in
  // thousands of images, ramped up over the first ema_rampup of training.
  // ema_kimg <= 0 turns it off (the average then equals the live weights).
  double ema_kimg = 10.0;
  double ema_rampup = 0.05;
  bool categorical = false;
  double label_threshold = 0.01;
  std::uint64_t seed = 0;
  // Synthetic scenery records used when no dataset directory is given.
  int dataset_size = 4096;
  int log_every = 100;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  void validate() const;
  std::string to_json() const;
  static TrainingConfig from_json(const std::string& text);
  static TrainingConfig load(const std::filesystem::path& path);
};

struct StepMetrics {
  long step = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double d_real = 0.0;
  double d_fake = 0.0;
  double r1 = 0.0;  // squared input-gradient norm; 0 on non-lazy steps
  double cls_real = 0.0;
  double cls_fake = 0.0;

  std::string to_json() const;
};

class Trainer {
 public:
  explicit Trainer(TrainingConfig config);

  const TrainingConfig& config() const { return config_; }
  Generator& generator() { return generator_; }
  // Averaged weights; what checkpoints and sampling should use.
  Generator& ema_generator() { return ema_; }
  Discriminator& discriminator() { return discriminator_; }
  long step() const { return step_; }

  // Where a JSON diagnostic goes if a step produces non-finite values.
  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

  // One critic update followed by one generator update. `batch` holds
  // batch_size records; their labels condition the fakes in categorical mode.
  StepMetrics train_step(const std::vector<const DatasetRecord*>& batch);

  // Runs config.steps steps drawing batches uniformly from `data`.
  std::vector<StepMetrics> run(const std::vector<DatasetRecord>& data,
                               const std::function<void(const StepMetrics&)>& on_log = {});

 private:
  Tensor stack_images(const std::vector<const DatasetRecord*>& batch) const;
  Tensor stack_labels(const std::vector<const DatasetRecord*>& batch) const;
  Tensor sample_z(int n);
  void update_ema(int batch);
  [[noreturn]] void diverged(const StepMetrics& m, const std::string& where);

  TrainingConfig config_;
  Generator generator_;
  Generator ema_;
  Discriminator discriminator_;
  Adam opt_g_;
  Adam opt_d_;
  std::mt19937_64 rng_;
  long step_ = 0;
  std::filesystem::path dump_dir_;
};

}  // namespace outpaint
