#include <gtest/gtest.h>

#include "outpaint/autodiff.hpp"
#include "outpaint/params.hpp"
#include "test_util.hpp"

namespace outpaint {
namespace {

using testing::grad_check;
using testing::random_tensor;
using V = std::vector<ad::Var>;

constexpr double kTol = 1e-7;

TEST(AutodiffGrad, Elementwise) {
  const Tensor a = random_tensor({3, 4}, 1), b = random_tensor({3, 4}, 2, 0.5, 1.5);
  EXPECT_LT(grad_check([](const V& x) { return ad::add(x[0], x[1]); }, {a, b}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::sub(x[0], x[1]); }, {a, b}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::mul(x[0], x[1]); }, {a, b}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::div(x[0], x[1]); }, {a, b}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::tanh(x[0]); }, {a}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::sigmoid(x[0]); }, {a}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::square(x[0]); }, {a}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::abs(x[1]); }, {a, b}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::leaky_relu(x[0], 0.2, 1.4); }, {a}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::mul_scalar(ad::add_scalar(x[0], 2), 3); }, {a}),
            kTol);
}

TEST(AutodiffGrad, ScalarBroadcast) {
  const Tensor a = random_tensor({2, 3}, 1), s = random_tensor({1}, 2, 0.5, 1.0);
  EXPECT_LT(grad_check([](const V& x) { return ad::div(x[0], x[1]); }, {a, s}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::mul(x[0], x[1]); }, {a, s}), kTol);
}

TEST(AutodiffGrad, ReductionsAndShape) {
  const Tensor a = random_tensor({2, 3, 2, 2}, 3), b = random_tensor({2, 1, 2, 2}, 4);
  EXPECT_LT(grad_check([](const V& x) { return ad::mean(ad::square(x[0])); }, {a}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::sum_per_sample(x[0]); }, {a}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::concat_channels(x[0], x[1]); }, {a, b}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::cells_to_rows(x[0]); }, {a}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::rows(ad::reshape(x[0], {4, 6}), {3, 0, 3}); },
                       {a}),
            kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::assemble_grid(x[0], 1); }, {a}), kTol);
  const Tensor p = random_tensor({8, 2, 3, 3}, 5);
  EXPECT_LT(grad_check([](const V& x) { return ad::assemble_grid(x[0], 2); }, {p}), kTol);
  const Tensor one = random_tensor({1, 2, 3}, 6);
  EXPECT_LT(grad_check([](const V& x) { return ad::broadcast0(x[0], 3); }, {one}), kTol);
  const Tensor c = random_tensor({3, 2}, 7), d = random_tensor({3, 4}, 8);
  EXPECT_LT(grad_check([](const V& x) { return ad::concat_cols(x[0], x[1]); }, {c, d}), kTol);
  EXPECT_LT(grad_check([](const V& x) { return ad::add_n({x[0], x[0], x[1]}); }, {c, c}), kTol);
}

TEST(AutodiffGrad, Layers) {
  const Tensor x = random_tensor({3, 5}, 1), w = random_tensor({4, 5}, 2), b = random_tensor({4}, 3);
  EXPECT_LT(grad_check([](const V& v) { return ad::linear(v[0], v[1], v[2], 0.7, 1.3); }, {x, w, b}),
            kTol);

  const Tensor img = random_tensor({2, 3, 5, 4}, 4), k = random_tensor({2, 3, 3, 3}, 5);
  EXPECT_LT(grad_check([](const V& v) { return ad::conv2d(v[0], v[1], 0.5); }, {img, k}), kTol);
  const Tensor s = random_tensor({2, 3}, 6, 0.5, 1.5);
  EXPECT_LT(grad_check([](const V& v) { return ad::scale_channels(v[0], v[1]); }, {img, s}), kTol);
  EXPECT_LT(grad_check([](const V& v) { return ad::demod_coefficients(v[0], v[1], 0.3); }, {k, s}),
            kTol);
  const Tensor bias = random_tensor({3}, 7);
  EXPECT_LT(grad_check([](const V& v) { return ad::add_channel_bias(v[0], v[1], 2.0); }, {img, bias}),
            kTol);
  EXPECT_LT(grad_check([](const V& v) { return ad::upsample2x(v[0]); }, {img}), kTol);
  const Tensor even = random_tensor({2, 2, 4, 6}, 8);
  EXPECT_LT(grad_check([](const V& v) { return ad::avgpool2x(v[0]); }, {even}), kTol);
  EXPECT_LT(grad_check([](const V& v) { return ad::channel_unit_normalize(v[0], 1e-6); }, {img}),
            1e-6);
}

TEST(AutodiffGrad, ModulatedConvComposition) {
  const Tensor img = random_tensor({2, 3, 4, 4}, 1), k = random_tensor({4, 3, 3, 3}, 2);
  const Tensor s = random_tensor({2, 3}, 3, 0.5, 1.5);
  auto f = [](const V& v) {
    const double gain = 1.0 / std::sqrt(27.0);
    ad::Var y = ad::conv2d(ad::scale_channels(v[0], v[2]), v[1], gain);
    return ad::scale_channels(y, ad::demod_coefficients(v[1], v[2], gain));
  };
  EXPECT_LT(grad_check(f, {img, k, s}), kTol);
}

TEST(AutodiffGrad, Losses) {
  const Tensor x = random_tensor({3, 4}, 1), mu = random_tensor({4}, 2);
  Tensor m({4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m[i * 4 + j] = (i == j ? 2.0 : 0.3);
  EXPECT_LT(grad_check([&](const V& v) { return ad::quad_form_rows(v[0], mu, m); }, {x}), kTol);
  Tensor y({3, 4});
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = (i % 3 == 0) ? 1.0 : 0.0;
  EXPECT_LT(grad_check([&](const V& v) { return ad::bce_with_logits(v[0], y); }, {x}), kTol);
}

TEST(Autodiff, QuadFormValue) {
  // sigma = diag(2,1) -> inverse diag(0.5, 1); diff (2,1) -> 4*0.5 + 1 = 3
  Tensor inv({2, 2}, {0.5, 0.0, 0.0, 1.0});
  ad::Var x = ad::constant(Tensor({1, 2}, {2.0, 1.0}));
  EXPECT_DOUBLE_EQ(ad::quad_form_rows(x, Tensor({2}), inv).item(), 3.0);
}

TEST(Autodiff, ConstantsDoNotRecordGraph) {
  ad::Var a = ad::constant(Tensor({2}, 1.0));
  ad::Var b = ad::mul(a, a);
  EXPECT_FALSE(b.requires_grad());
  EXPECT_TRUE(b.node()->parents.empty());
}

TEST(Autodiff, GradientsAccumulateAcrossSharedUse) {
  ad::Var a = ad::parameter(Tensor({1}, 3.0));
  ad::backward(ad::add(ad::mul(a, a), a));  // d/da (a^2 + a) = 2a + 1
  EXPECT_DOUBLE_EQ(a.grad()[0], 7.0);
}

TEST(Adam, MinimisesQuadratic) {
  ad::Var x = ad::parameter(Tensor({2}, {3.0, -2.0}));
  Adam opt({x}, 0.1);
  for (int i = 0; i < 500; ++i) {
    x.zero_grad();
    ad::backward(ad::sum(ad::square(x)));
    opt.step();
  }
  EXPECT_LT(x.value().max_abs(), 1e-2);
}

}  // namespace
}  // namespace outpaint
