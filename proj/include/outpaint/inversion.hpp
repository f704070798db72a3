#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "outpaint/autodiff.hpp"
#include "outpaint/generator.hpp"
#include "outpaint/perceptual.hpp"

namespace outpaint {

// Moments of the Gaussianized latent space.
struct PriorStats {
  Tensor mu;         // [d]
  Tensor sigma;      // [d, d], shrunk
  Tensor sigma_inv;  // [d, d]
  long sample_count = 0;

  int dim() const { return mu.numel() ? static_cast<int>(mu.numel()) : 0; }
  void save(const std::filesystem::path& file) const;
  static PriorStats load(const std::filesystem::path& file);
};

// Empirical mean and unbiased covariance of the rows of v [N, d], with
// sigma += eps I, eps = 1e-4 * trace(sigma) / d, inverted by Cholesky.
PriorStats prior_from_samples(const Tensor& v);
// v = LRU_5(F(z)) over `sample_count` standard-normal z.
PriorStats estimate_prior(const LatentDecoder& decoder, long sample_count = 100000, std::uint64_t seed = 0);

double prior_loss(const GaussianizedCode& v, const PriorStats& stats);
ad::Var prior_loss(const ad::Var& v, const PriorStats& stats);  // summed over rows

// Mean squared error over pixels with mask > 0.5 (all channels).
// composed [N, 3, H, W], reference [3, H, W], mask [H, W]; returns the sum of
// the N per-image values.
ad::Var masked_mse(const ad::Var& composed, const Tensor& reference, const Tensor& mask);
// Perceptual distance of mask*composed vs mask*reference, summed over N.
ad::Var masked_percept(const ad::Var& composed, const Tensor& reference, const Tensor& mask,
                       const PerceptualMetric& metric);

struct ReconLosses {
  double mse = 0.0;
  double percept = 0.0;
};
ReconLosses recon_losses(const Tensor& reference, const Tensor& composed, const Tensor& mask,
                         const PerceptualMetric& metric = default_perceptual_metric());

// -sum_{i<j} |w_i - w_j|_1 over the rows of w [m, d].
ad::Var diversity_loss(const ad::Var& w);
double diversity_loss(const std::vector<StyleCode>& codes);

using FullDecodeFn = std::function<ad::Var(const ad::Var& w)>;
inline constexpr double kModeSeekingEps = 1e-5;
// sum_{i<j} |G(w_i) - G(w_j)|_1 / (|w_i - w_j|_1 + eps); G maps w [m, d] to
// images [m, ...].
ad::Var mode_seeking_loss(const ad::Var& w, const FullDecodeFn& decode);
double mode_seeking_loss(const std::vector<StyleCode>& codes, const FullDecodeFn& decode);

struct Lambdas {
  double mse = 0.01;
  double percept = 1.0;
  double prior = 0.001;
  double div = 0.001;
  double ms = 0.001;
};

struct InversionProblem {
  Tensor reference;  // [3, H, W], values outside the mask are ignored
  Tensor mask;       // [H, W], 1 = known
  int m = 1;
  Lambdas lambdas;
  // Categorical models: one label per grid cell, row-major.
  std::vector<CategoryVector> categories;
  int steps = 800;
  double lr = 0.05;
  std::uint64_t seed = 0;

  // Throws on inconsistencies; returns true when the mask covers the canvas.
  bool validate(const LatentDecoder& decoder) const;
};

// Raw (unweighted) term values; reconstruction and prior terms are summed
// over the m codes.
struct ObjectiveTerms {
  double mse = 0.0;
  double percept = 0.0;
  double prior = 0.0;
  double div = 0.0;
  double ms = 0.0;
  double total = 0.0;  // weighted sum

  double weighted_sum(const Lambdas& l) const {
    return l.mse * mse + l.percept * percept + l.prior * prior + l.div * div + l.ms * ms;
  }
};

struct Objective {
  ad::Var total;
  ad::Var images;  // decoded full images [m, 3, H, W]
  ObjectiveTerms terms;
};

// Labels tensor [m * n * n, K] for a categorical problem, else empty.
Tensor problem_labels(const InversionProblem& problem, const LatentDecoder& decoder);

// w [m, d]: style codes, or w_inter for categorical decoders.
Objective total_objective(const InversionProblem& problem, const ad::Var& w, const LatentDecoder& decoder,
                          const PriorStats& stats,
                          const PerceptualMetric& metric = default_perceptual_metric());

struct InversionResult {
  std::vector<StyleCode> codes;     // final w (w_inter when categorical)
  std::vector<Tensor> generated;    // decoded full images
  std::vector<Tensor> composed;     // reference inside the mask, generated outside
  std::vector<ObjectiveTerms> trace;  // before every step, plus the final state
  ObjectiveTerms initial;
  ObjectiveTerms final;
  bool full_reconstruction = false;
  double seconds = 0.0;
};

struct InversionHooks {
  // Called after every step; returning false cancels with CancelledError.
  std::function<bool(int step, const ObjectiveTerms&)> on_step;
};

// Learning-rate multiplier at progress t in [0, 1]: linear warm-up over the
// first 5%, cosine ramp-down over the last 25%.
double lr_schedule(double t);

InversionResult invert(const InversionProblem& problem, const LatentDecoder& decoder, const PriorStats& stats,
                       const PerceptualMetric& metric = default_perceptual_metric(),
                       const InversionHooks& hooks = {});

struct MomentReport {
  std::vector<double> mean, variance, skewness, excess_kurtosis;
  double max_abs_skewness = 0.0;
  double max_abs_excess_kurtosis = 0.0;
  double mean_abs_skewness = 0.0;
  double mean_abs_excess_kurtosis = 0.0;
  bool degenerate = false;  // some dimension has (near) zero variance
};

struct GaussianityReport {
  MomentReport w;
  MomentReport v;
  std::string to_json() const;
};

// Per-dimension moments of samples [N, d]; needs N >= 1000.
MomentReport moment_report(const Tensor& samples);
// Moments of style samples w and of their Gaussianized image v = LRU_5(w).
GaussianityReport gaussianity_check(const Tensor& w_samples);

}  // namespace outpaint
