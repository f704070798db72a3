#include <gtest/gtest.h>

#include <vector>

#include "outpaint/kernels.hpp"
#include "test_util.hpp"

namespace outpaint {
namespace {

using testing::random_tensor;

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

class ConvKernelTest : public ::testing::TestWithParam<kernels::ConvDims> {};

TEST_P(ConvKernelTest, ParallelMatchesReference) {
  const auto d = GetParam();
  const Tensor x = random_tensor({static_cast<int>(d.in_size())}, 1);
  const Tensor w = random_tensor({static_cast<int>(d.weight_size())}, 2);
  const Tensor gy = random_tensor({static_cast<int>(d.out_size())}, 3);

  std::vector<double> y(d.out_size()), y_ref(d.out_size());
  kernels::conv2d_forward(d, x.span(), w.span(), y);
  kernels::reference::conv2d_forward(d, x.span(), w.span(), y_ref);
  EXPECT_LT(max_diff(y, y_ref), 1e-12);

  std::vector<double> gx(d.in_size()), gx_ref(d.in_size());
  kernels::conv2d_backward_input(d, gy.span(), w.span(), gx);
  kernels::reference::conv2d_backward_input(d, gy.span(), w.span(), gx_ref);
  EXPECT_LT(max_diff(gx, gx_ref), 1e-12);

  std::vector<double> gw(d.weight_size()), gw_ref(d.weight_size());
  kernels::conv2d_backward_weight(d, x.span(), gy.span(), gw);
  kernels::reference::conv2d_backward_weight(d, x.span(), gy.span(), gw_ref);
  EXPECT_LT(max_diff(gw, gw_ref), 1e-11);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvKernelTest,
                         ::testing::Values(kernels::ConvDims{2, 3, 5, 7, 4, 3},
                                           kernels::ConvDims{3, 4, 4, 4, 2, 1},
                                           kernels::ConvDims{1, 2, 1, 1, 3, 3},
                                           kernels::ConvDims{2, 5, 8, 6, 3, 5}));

TEST(ConvKernel, SampleResultIndependentOfBatch) {
  const kernels::ConvDims batch{5, 6, 8, 8, 4, 3};
  const kernels::ConvDims single{1, 6, 8, 8, 4, 3};
  const Tensor x = random_tensor({static_cast<int>(batch.in_size())}, 11);
  const Tensor w = random_tensor({static_cast<int>(batch.weight_size())}, 12);
  std::vector<double> y(batch.out_size()), y1(single.out_size());
  kernels::conv2d_forward(batch, x.span(), w.span(), y);
  const long stride = single.in_size();
  kernels::conv2d_forward(single, x.span().subspan(3 * stride, stride), w.span(), y1);
  for (long k = 0; k < single.out_size(); ++k) ASSERT_EQ(y[3 * single.out_size() + k], y1[k]);
}

TEST(ResampleKernel, UpsampleMatchesReference) {
  for (auto [h, w] : {std::pair{1, 1}, std::pair{4, 4}, std::pair{3, 5}}) {
    const int planes = 3;
    const Tensor x = random_tensor({planes * h * w}, 5);
    const Tensor gy = random_tensor({planes * 4 * h * w}, 6);
    std::vector<double> y(planes * 4 * h * w), y_ref(y.size());
    kernels::upsample2x_forward(planes, h, w, x.span(), y);
    kernels::reference::upsample2x_forward(planes, h, w, x.span(), y_ref);
    EXPECT_LT(max_diff(y, y_ref), 1e-13);
    std::vector<double> gx(planes * h * w), gx_ref(gx.size());
    kernels::upsample2x_backward(planes, h, w, gy.span(), gx);
    kernels::reference::upsample2x_backward(planes, h, w, gy.span(), gx_ref);
    EXPECT_LT(max_diff(gx, gx_ref), 1e-13);
  }
}

TEST(ResampleKernel, UpsamplePreservesConstants) {
  std::vector<double> x(9, 0.7), y(36);
  kernels::upsample2x_forward(1, 3, 3, x, y);
  for (double v : y) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(ResampleKernel, AvgPoolMatchesReference) {
  const int planes = 4, h = 6, w = 8;
  const Tensor x = random_tensor({planes * h * w}, 8);
  const Tensor gy = random_tensor({planes * h * w / 4}, 9);
  std::vector<double> y(planes * h * w / 4), y_ref(y.size());
  kernels::avgpool2x_forward(planes, h, w, x.span(), y);
  kernels::reference::avgpool2x_forward(planes, h, w, x.span(), y_ref);
  EXPECT_LT(max_diff(y, y_ref), 1e-14);
  std::vector<double> gx(planes * h * w), gx_ref(gx.size());
  kernels::avgpool2x_backward(planes, h, w, gy.span(), gx);
  kernels::reference::avgpool2x_backward(planes, h, w, gy.span(), gx_ref);
  EXPECT_LT(max_diff(gx, gx_ref), 1e-14);
}

}  // namespace
}  // namespace outpaint
