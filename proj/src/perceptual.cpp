#include "outpaint/perceptual.hpp"

#include <cmath>
#include <random>

#include "outpaint/errors.hpp"

namespace outpaint {

namespace {
constexpr double kNormEps = 1e-10;
}

double PerceptualMetric::operator()(const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape()) throw ShapeError("perceptual distance needs equal shapes");
  Shape s = a.shape();
  s.insert(s.begin(), 1);
  return distance(ad::constant(a.reshaped(s)), ad::constant(b.reshaped(s))).value()[0];
}

RandomPyramidMetric::RandomPyramidMetric(std::uint64_t seed, std::vector<int> channels)
    : seed_(seed), channels_(std::move(channels)) {
  std::mt19937_64 rng(seed_);
  int cin = 3;
  for (int c : channels_) {
    weights_.push_back(ad::constant(Tensor::randn({c, cin, 3, 3}, rng)));
    cin = c;
  }
}

std::string RandomPyramidMetric::id() const {
  std::string s = "random-pyramid-" + std::to_string(seed_);
  for (int c : channels_) s += "-" + std::to_string(c);
  return s;
}

std::vector<ad::Var> RandomPyramidMetric::features(const ad::Var& x) const {
  if (x.value().rank() != 4 || x.shape()[1] != 3) throw ShapeError("perceptual input must be [N, 3, H, W]");
  std::vector<ad::Var> out;
  ad::Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (l > 0) h = ad::avgpool2x(h);
    const int cin = weights_[l].shape()[1];
    h = ad::tanh(ad::conv2d(h, weights_[l], std::sqrt(1.0 / (cin * 9))));
    out.push_back(h);
  }
  return out;
}

ad::Var RandomPyramidMetric::distance(const ad::Var& a, const ad::Var& b) const {
  if (a.shape() != b.shape()) throw ShapeError("perceptual distance needs equal shapes");
  const auto fa = features(a), fb = features(b);
  std::vector<ad::Var> levels;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    ad::Var d = ad::sub(ad::channel_unit_normalize(fa[l], kNormEps), ad::channel_unit_normalize(fb[l], kNormEps));
    const auto& s = d.shape();
    levels.push_back(ad::mul_scalar(ad::sum_per_sample(ad::square(d)), 1.0 / (s[2] * s[3])));
  }
  return ad::add_n(levels);
}

const PerceptualMetric& default_perceptual_metric() {
  static const RandomPyramidMetric metric;
  return metric;
}

}  // namespace outpaint
