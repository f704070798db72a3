#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "outpaint/autodiff.hpp"

namespace outpaint {

// Perceptual image distance. Implementations must be symmetric, nonnegative,
// and zero on identical inputs.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual std::string id() const = 0;
  // a, b [N, 3, H, W] -> per-pair distances [N].
  virtual ad::Var distance(const ad::Var& a, const ad::Var& b) const = 0;

  double operator()(const Tensor& a, const Tensor& b) const;  // single [3, H, W] pair
};

// Default backend: a frozen random conv pyramid. Each level is a 3x3 conv
// followed by tanh (smooth, so finite differences of the inversion objective
// behave); levels after the first start with a 2x average pool. The
// distance sums, over levels, the spatial mean of the squared difference of
// channel-unit-normalised features.
class RandomPyramidMetric final : public PerceptualMetric {
 public:
  explicit RandomPyramidMetric(std::uint64_t seed = 0x9e3779b97f4a7c15ull,
                               std::vector<int> channels = {16, 32, 32});

  std::string id() const override;
  ad::Var distance(const ad::Var& a, const ad::Var& b) const override;

  // Per-level features before normalisation, for the embedder and tests.
  std::vector<ad::Var> features(const ad::Var& x) const;

 private:
  std::uint64_t seed_;
  std::vector<int> channels_;
  std::vector<ad::Var> weights_;
};

const PerceptualMetric& default_perceptual_metric();

}  // namespace outpaint
