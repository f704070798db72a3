#pragma once

#include <random>

#include "outpaint/composer.hpp"
#include "outpaint/generator.hpp"
#include "outpaint/inversion.hpp"
#include "test_util.hpp"

namespace outpaint::testing {

// z -> w is the identity; synthesis is tanh of a fixed random affine map of
// [v, c] onto the patch pixels. Smooth everywhere, tiny, and deterministic.
class TinyDecoder final : public LatentDecoder {
 public:
  explicit TinyDecoder(int dim = 4, GridSpec grid = {2, 4, 4}, std::uint64_t seed = 1, bool categorical = false,
                       int classes = 3)
      : dim_(dim), grid_(grid), categorical_(categorical), classes_(classes) {
    std::mt19937_64 rng(seed);
    const int pixels = 3 * grid.patch_h * grid.patch_w;
    weight_ = ad::constant(Tensor::randn({pixels, dim + 2}, rng));
    bias_ = ad::constant(Tensor::randn({pixels}, rng, 0.1));
    fuse_ = ad::constant(Tensor::randn({dim, classes}, rng, 0.5));
  }

  int latent_dim() const override { return dim_; }
  int style_dim() const override { return dim_; }
  const GridSpec& grid() const override { return grid_; }
  bool categorical() const override { return categorical_; }
  int num_classes() const override { return categorical_ ? classes_ : 0; }

  ad::Var map(const ad::Var& z) const override { return z; }

  ad::Var fuse(const ad::Var& w_inter, const Tensor& labels) const override {
    if (!categorical_) return LatentDecoder::fuse(w_inter, labels);
    return ad::add(w_inter, ad::linear(ad::constant(labels), fuse_, ad::Var(), 1.0, 0.0));
  }

  ad::Var synthesize(const ad::Var& v, const Tensor& coords) const override {
    const int n = v.shape()[0];
    ad::Var x = ad::concat_cols(v, ad::constant(coords));
    ad::Var y = ad::tanh(ad::linear(x, weight_, bias_, 1.0 / std::sqrt(dim_ + 2.0), 1.0));
    return ad::reshape(y, {n, 3, grid_.patch_h, grid_.patch_w});
  }

 private:
  int dim_;
  GridSpec grid_;
  bool categorical_;
  int classes_;
  ad::Var weight_, bias_, fuse_;
};

// Every code entry becomes `p` pixels: |G(a) - G(b)|_1 = p |a - b|_1.
inline ad::Var broadcast_decode(const ad::Var& w, int p) {
  ad::Var out = w;
  for (int k = 1; k < p; ++k) out = ad::concat_cols(out, w);
  return out;
}

// Random reference on the decoder's canvas with the left half known.
inline InversionProblem tiny_problem(const LatentDecoder& dec, int m, std::uint64_t seed) {
  InversionProblem p;
  const GridSpec& g = dec.grid();
  p.reference = random_tensor({3, g.height(), g.width()}, seed, -0.8, 0.8);
  p.mask = Tensor({g.height(), g.width()});
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width() / 2; ++x) p.mask[y * g.width() + x] = 1.0;
  p.m = m;
  p.seed = seed;
  return p;
}

// Relative error (vector 2-norm) of the analytic objective gradient at w0
// against central differences with step h.
inline double objective_gradient_error(const InversionProblem& p, const LatentDecoder& dec, const PriorStats& prior,
                                const Tensor& w0, double h) {
  ad::Var w = ad::parameter(w0);
  ad::backward(total_objective(p, w, dec, prior).total);
  double num2 = 0, err2 = 0;
  for (std::size_t k = 0; k < w0.numel(); ++k) {
    Tensor up = w0, down = w0;
    up[k] += h;
    down[k] -= h;
    const double numeric = (total_objective(p, ad::constant(up), dec, prior).terms.total -
                            total_objective(p, ad::constant(down), dec, prior).terms.total) /
                           (2 * h);
    num2 += numeric * numeric;
    err2 += (w.grad()[k] - numeric) * (w.grad()[k] - numeric);
  }
  return std::sqrt(err2 / num2);
}

// Left half L, right half R, one vertical seam at x = 2W across all rows.
struct SeamCase {
  Tensor image;
  std::vector<Tensor> halfway;
  BlendPlan plan;
};

inline SeamCase constant_seam(double l, double r, double h, int ov) {
  const int width = 4 * ov, height = 4;
  SeamCase sc{Tensor({3, height, width}), {Tensor({3, height, 2 * ov}, h)}, {}};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) sc.image[(c * height + y) * width + x] = x < 2 * ov ? l : r;
  Seam s;
  s.position = 2 * ov;
  s.span_begin = 0;
  s.span_end = height;
  s.overlap = ov;
  sc.plan.seams.push_back(s);
  return sc;
}

inline double max_column_jump(const Tensor& img) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  double worst = 0;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x + 1 < W; ++x)
        worst = std::max(worst, std::abs(img[(c * H + y) * W + x + 1] - img[(c * H + y) * W + x]));
  return worst;
}

}  // namespace outpaint::testing
