#pragma once

#include <span>

// Dense image kernels behind the autodiff ops. The default namespace holds the
// OpenMP + GEMM versions; `reference` holds plain serial loops with identical
// semantics, used by the tests as an oracle and by the benchmark as baseline.
//
// All tensors are NCHW, row-major. Outputs are overwritten, never accumulated.

namespace outpaint::kernels {

// Stride-1 convolution with zero padding k/2 (odd k), weight [cout, cin, k, k].
struct ConvDims {
  int n = 1;
  int cin = 1;
  int h = 1;
  int w = 1;
  int cout = 1;
  int k = 3;

  long in_size() const { return static_cast<long>(n) * cin * h * w; }
  long out_size() const { return static_cast<long>(n) * cout * h * w; }
  long weight_size() const { return static_cast<long>(cout) * cin * k * k; }
};

void conv2d_forward(const ConvDims& d, std::span<const double> x,
                    std::span<const double> weight, std::span<double> y);
void conv2d_backward_input(const ConvDims& d, std::span<const double> gy,
                           std::span<const double> weight, std::span<double> gx);
void conv2d_backward_weight(const ConvDims& d, std::span<const double> x,
                            std::span<const double> gy, std::span<double> gw);

// Bilinear 2x upsampling, half-pixel centers, edge-clamped. `planes` = n*c.
void upsample2x_forward(int planes, int h, int w, std::span<const double> x,
                        std::span<double> y);
void upsample2x_backward(int planes, int h, int w, std::span<const double> gy,
                         std::span<double> gx);

// 2x2 average pooling; h and w must be even.
void avgpool2x_forward(int planes, int h, int w, std::span<const double> x,
                       std::span<double> y);
void avgpool2x_backward(int planes, int h, int w, std::span<const double> gy,
                        std::span<double> gx);

namespace reference {

void conv2d_forward(const ConvDims& d, std::span<const double> x,
                    std::span<const double> weight, std::span<double> y);
void conv2d_backward_input(const ConvDims& d, std::span<const double> gy,
                           std::span<const double> weight, std::span<double> gx);
void conv2d_backward_weight(const ConvDims& d, std::span<const double> x,
                            std::span<const double> gy, std::span<double> gw);
void upsample2x_forward(int planes, int h, int w, std::span<const double> x,
                        std::span<double> y);
void upsample2x_backward(int planes, int h, int w, std::span<const double> gy,
                         std::span<double> gx);
void avgpool2x_forward(int planes, int h, int w, std::span<const double> x,
                       std::span<double> y);
void avgpool2x_backward(int planes, int h, int w, std::span<const double> gy,
                        std::span<double> gx);

}  // namespace reference
}  // namespace outpaint::kernels
