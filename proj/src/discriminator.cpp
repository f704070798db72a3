#include "outpaint/discriminator.hpp"

#include <cmath>
#include <random>

#include "outpaint/errors.hpp"

namespace outpaint {

namespace {
constexpr double kSlope = 0.2;
const double kGain = std::sqrt(2.0);

std::string stage(int l, const char* what) { return "stage." + std::to_string(l) + "." + what; }
}  // namespace

void DiscriminatorConfig::validate() const {
  if (channels.empty()) throw ConfigError("discriminator needs at least one stage");
  const int div = 1 << channels.size();
  if (image_h % div || image_w % div)
    throw ConfigError("image size not divisible by 2^stages");
  if (categorical) {
    if (num_classes < 1 || grid_n < 1) throw ConfigError("auxiliary head needs classes and a grid");
    int fh = feature_h();
    while (fh > grid_n && fh % 2 == 0) fh /= 2;
    if (fh != grid_n || feature_h() != feature_w())
      throw ConfigError("final feature map cannot be pooled onto the patch grid");
  }
}

Discriminator::Discriminator(DiscriminatorConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

Discriminator::Discriminator(DiscriminatorConfig config, ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  Discriminator reference(config_, 0);
  const auto& want = reference.params_.items();
  const auto& have = params_.items();
  if (want.size() != have.size()) throw ShapeError("discriminator tensor count mismatch");
  for (std::size_t k = 0; k < want.size(); ++k)
    if (want[k].name != have[k].name || want[k].var.shape() != have[k].var.shape())
      throw ShapeError("discriminator tensor " + have[k].name + " does not match " + want[k].name);
}

void Discriminator::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& c = config_;
  params_.add("from_rgb.weight", Tensor::randn({c.from_rgb, 3, 1, 1}, rng));
  params_.add("from_rgb.bias", Tensor::zeros({c.from_rgb}));
  int cin = c.from_rgb;
  for (std::size_t l = 0; l < c.channels.size(); ++l) {
    params_.add(stage(static_cast<int>(l), "weight"), Tensor::randn({c.channels[l], cin, 3, 3}, rng));
    params_.add(stage(static_cast<int>(l), "bias"), Tensor::zeros({c.channels[l]}));
    cin = c.channels[l];
  }
  const int flat = cin * c.feature_h() * c.feature_w();
  params_.add("critic.0.weight", Tensor::randn({c.hidden, flat}, rng));
  params_.add("critic.0.bias", Tensor::zeros({c.hidden}));
  params_.add("critic.1.weight", Tensor::randn({1, c.hidden}, rng));
  params_.add("critic.1.bias", Tensor::zeros({1}));
  if (c.categorical) {
    params_.add("aux.0.weight", Tensor::randn({c.hidden, cin}, rng));
    params_.add("aux.0.bias", Tensor::zeros({c.hidden}));
    params_.add("aux.1.weight", Tensor::randn({c.num_classes, c.hidden}, rng));
    params_.add("aux.1.bias", Tensor::zeros({c.num_classes}));
  }
}

Discriminator::Output Discriminator::forward(const ad::Var& images) const {
  const auto& c = config_;
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != c.image_h || s[3] != c.image_w)
    throw ShapeError("discriminator expects [N,3," + std::to_string(c.image_h) + "," +
                     std::to_string(c.image_w) + "], got " + shape_str(s));
  ad::Var x = ad::conv2d(images, params_.get("from_rgb.weight"), 1.0 / std::sqrt(3.0));
  x = ad::leaky_relu(ad::add_channel_bias(x, params_.get("from_rgb.bias")), kSlope, kGain);
  for (std::size_t l = 0; l < c.channels.size(); ++l) {
    const int cin = x.value().dim(1);
    x = ad::conv2d(x, params_.get(stage(static_cast<int>(l), "weight")), 1.0 / std::sqrt(cin * 9.0));
    x = ad::leaky_relu(ad::add_channel_bias(x, params_.get(stage(static_cast<int>(l), "bias"))),
                       kSlope, kGain);
    x = ad::avgpool2x(x);
  }
  const ad::Var features = x;
  const int n = s[0];
  const int flat = static_cast<int>(features.value().numel()) / n;
  ad::Var h = ad::reshape(features, {n, flat});
  h = ad::linear(h, params_.get("critic.0.weight"), params_.get("critic.0.bias"),
                 1.0 / std::sqrt(flat), 1.0);
  h = ad::leaky_relu(h, kSlope, kGain);
  Output out;
  out.score = ad::linear(h, params_.get("critic.1.weight"), params_.get("critic.1.bias"),
                         1.0 / std::sqrt(c.hidden), 1.0);
  if (c.categorical) {
    ad::Var cells = features;
    while (cells.value().dim(2) > c.grid_n) cells = ad::avgpool2x(cells);
    ad::Var a = ad::cells_to_rows(cells);
    const int width = a.value().dim(1);
    a = ad::linear(a, params_.get("aux.0.weight"), params_.get("aux.0.bias"),
                   1.0 / std::sqrt(width), 1.0);
    a = ad::leaky_relu(a, kSlope, kGain);
    out.class_logits = ad::linear(a, params_.get("aux.1.weight"), params_.get("aux.1.bias"),
                                  1.0 / std::sqrt(c.hidden), 1.0);
  }
  return out;
}

}  // namespace outpaint
