#include <algorithm>
#include <cmath>

#include "outpaint/kernels.hpp"

namespace outpaint::kernels::reference {

namespace {

long idx(int n, int c, int y, int x, int C, int H, int W) {
  return ((static_cast<long>(n) * C + c) * H + y) * W + x;
}

double sample_clamped(const double* plane, int h, int w, int y, int x) {
  y = std::clamp(y, 0, h - 1);
  x = std::clamp(x, 0, w - 1);
  return plane[y * w + x];
}

// Weight of source pixel `s` for output pixel `o` along one axis of length n.
double axis_weight(int o, int s, int n) {
  const double src = (o + 0.5) / 2.0 - 0.5;
  const int lo = static_cast<int>(std::floor(src));
  const double frac = src - lo;
  double wgt = 0.0;
  if (std::clamp(lo, 0, n - 1) == s) wgt += 1.0 - frac;
  if (std::clamp(lo + 1, 0, n - 1) == s) wgt += frac;
  return wgt;
}

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> x,
                    std::span<const double> weight, std::span<double> y) {
  const int pad = d.k / 2;
  for (int n = 0; n < d.n; ++n)
    for (int o = 0; o < d.cout; ++o)
      for (int r = 0; r < d.h; ++r)
        for (int c = 0; c < d.w; ++c) {
          double acc = 0.0;
          for (int i = 0; i < d.cin; ++i)
            for (int ky = 0; ky < d.k; ++ky)
              for (int kx = 0; kx < d.k; ++kx) {
                const int sy = r + ky - pad, sx = c + kx - pad;
                if (sy < 0 || sy >= d.h || sx < 0 || sx >= d.w) continue;
                acc += weight[((static_cast<long>(o) * d.cin + i) * d.k + ky) * d.k + kx] *
                       x[idx(n, i, sy, sx, d.cin, d.h, d.w)];
              }
          y[idx(n, o, r, c, d.cout, d.h, d.w)] = acc;
        }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> gy,
                           std::span<const double> weight, std::span<double> gx) {
  const int pad = d.k / 2;
  std::fill(gx.begin(), gx.begin() + d.in_size(), 0.0);
  for (int n = 0; n < d.n; ++n)
    for (int o = 0; o < d.cout; ++o)
      for (int r = 0; r < d.h; ++r)
        for (int c = 0; c < d.w; ++c) {
          const double g = gy[idx(n, o, r, c, d.cout, d.h, d.w)];
          for (int i = 0; i < d.cin; ++i)
            for (int ky = 0; ky < d.k; ++ky)
              for (int kx = 0; kx < d.k; ++kx) {
                const int sy = r + ky - pad, sx = c + kx - pad;
                if (sy < 0 || sy >= d.h || sx < 0 || sx >= d.w) continue;
                gx[idx(n, i, sy, sx, d.cin, d.h, d.w)] +=
                    g * weight[((static_cast<long>(o) * d.cin + i) * d.k + ky) * d.k + kx];
              }
        }
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> x,
                            std::span<const double> gy, std::span<double> gw) {
  const int pad = d.k / 2;
  std::fill(gw.begin(), gw.begin() + d.weight_size(), 0.0);
  for (int n = 0; n < d.n; ++n)
    for (int o = 0; o < d.cout; ++o)
      for (int r = 0; r < d.h; ++r)
        for (int c = 0; c < d.w; ++c) {
          const double g = gy[idx(n, o, r, c, d.cout, d.h, d.w)];
          for (int i = 0; i < d.cin; ++i)
            for (int ky = 0; ky < d.k; ++ky)
              for (int kx = 0; kx < d.k; ++kx) {
                const int sy = r + ky - pad, sx = c + kx - pad;
                if (sy < 0 || sy >= d.h || sx < 0 || sx >= d.w) continue;
                gw[((static_cast<long>(o) * d.cin + i) * d.k + ky) * d.k + kx] +=
                    g * x[idx(n, i, sy, sx, d.cin, d.h, d.w)];
              }
        }
}

void upsample2x_forward(int planes, int h, int w, std::span<const double> x,
                        std::span<double> y) {
  for (int p = 0; p < planes; ++p) {
    const double* src = x.data() + static_cast<long>(p) * h * w;
    for (int oy = 0; oy < 2 * h; ++oy)
      for (int ox = 0; ox < 2 * w; ++ox) {
        const double sy = (oy + 0.5) / 2.0 - 0.5, sx = (ox + 0.5) / 2.0 - 0.5;
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        y[(static_cast<long>(p) * 2 * h + oy) * 2 * w + ox] =
            (1 - fy) * (1 - fx) * sample_clamped(src, h, w, y0, x0) +
            (1 - fy) * fx * sample_clamped(src, h, w, y0, x0 + 1) +
            fy * (1 - fx) * sample_clamped(src, h, w, y0 + 1, x0) +
            fy * fx * sample_clamped(src, h, w, y0 + 1, x0 + 1);
      }
  }
}

void upsample2x_backward(int planes, int h, int w, std::span<const double> gy,
                         std::span<double> gx) {
  // Adjoint of the forward map, built from per-axis weights.
  for (int p = 0; p < planes; ++p)
    for (int sy = 0; sy < h; ++sy)
      for (int sx = 0; sx < w; ++sx) {
        double acc = 0.0;
        for (int oy = 0; oy < 2 * h; ++oy) {
          const double wy = axis_weight(oy, sy, h);
          if (wy == 0.0) continue;
          for (int ox = 0; ox < 2 * w; ++ox) {
            const double wx = axis_weight(ox, sx, w);
            if (wx == 0.0) continue;
            acc += wy * wx * gy[(static_cast<long>(p) * 2 * h + oy) * 2 * w + ox];
          }
        }
        gx[(static_cast<long>(p) * h + sy) * w + sx] = acc;
      }
}

void avgpool2x_forward(int planes, int h, int w, std::span<const double> x,
                       std::span<double> y) {
  for (int p = 0; p < planes; ++p)
    for (int r = 0; r < h / 2; ++r)
      for (int c = 0; c < w / 2; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            acc += x[(static_cast<long>(p) * h + 2 * r + dy) * w + 2 * c + dx];
        y[(static_cast<long>(p) * (h / 2) + r) * (w / 2) + c] = acc / 4.0;
      }
}

void avgpool2x_backward(int planes, int h, int w, std::span<const double> gy,
                        std::span<double> gx) {
  for (int p = 0; p < planes; ++p)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        gx[(static_cast<long>(p) * h + r) * w + c] =
            gy[(static_cast<long>(p) * (h / 2) + r / 2) * (w / 2) + c / 2] / 4.0;
}

}  // namespace outpaint::kernels::reference
