#pragma once

#include <cstdint>
#include <vector>

#include "outpaint/autodiff.hpp"
#include "outpaint/params.hpp"

namespace outpaint {

struct DiscriminatorConfig {
  int image_h = 64;
  int image_w = 64;
  int from_rgb = 8;
  // Conv stages; each halves the resolution after its conv.
  std::vector<int> channels{16, 32, 32, 64};
  int hidden = 64;
  bool categorical = false;
  int num_classes = 8;
  int grid_n = 2;

  int feature_h() const { return image_h >> channels.size(); }
  int feature_w() const { return image_w >> channels.size(); }
  void validate() const;
};

// Convolutional critic over full images. In categorical mode an auxiliary
// head classifies every grid cell from the critic's last feature map (one
// hidden layer, shared across cells).
class Discriminator {
 public:
  struct Output {
    ad::Var score;         // [N, 1]
    ad::Var class_logits;  // [N * n * n, K], (b, row, col) order; categorical only
  };

  Discriminator(DiscriminatorConfig config, std::uint64_t seed);
  Discriminator(DiscriminatorConfig config, ParamSet params);

  const DiscriminatorConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Output forward(const ad::Var& images) const;

 private:
  void build(std::uint64_t seed);

  DiscriminatorConfig config_;
  ParamSet params_;
};

}  // namespace outpaint
