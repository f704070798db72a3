#include "outpaint/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "resample_taps.hpp"

namespace outpaint::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// col layout: rows = cin*k*k, cols = n*h*w (sample-major).
void im2col(const ConvDims& d, const double* x, double* col) {
  const int pad = d.k / 2;
  const long hw = static_cast<long>(d.h) * d.w;
  const long cols = d.n * hw;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cin; ++c) {
      const double* plane = x + (static_cast<long>(n) * d.cin + c) * hw;
      for (int ky = 0; ky < d.k; ++ky) {
        for (int kx = 0; kx < d.k; ++kx) {
          const long row = (static_cast<long>(c) * d.k + ky) * d.k + kx;
          double* dst = col + row * cols + n * hw;
          for (int y = 0; y < d.h; ++y) {
            const int sy = y + ky - pad;
            double* drow = dst + static_cast<long>(y) * d.w;
            if (sy < 0 || sy >= d.h) {
              std::fill(drow, drow + d.w, 0.0);
              continue;
            }
            const double* srow = plane + static_cast<long>(sy) * d.w;
            for (int xx = 0; xx < d.w; ++xx) {
              const int sx = xx + kx - pad;
              drow[xx] = (sx >= 0 && sx < d.w) ? srow[sx] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvDims& d, const double* col, double* x) {
  const int pad = d.k / 2;
  const long hw = static_cast<long>(d.h) * d.w;
  const long cols = d.n * hw;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cin; ++c) {
      double* plane = x + (static_cast<long>(n) * d.cin + c) * hw;
      std::fill(plane, plane + hw, 0.0);
      for (int ky = 0; ky < d.k; ++ky) {
        for (int kx = 0; kx < d.k; ++kx) {
          const long row = (static_cast<long>(c) * d.k + ky) * d.k + kx;
          const double* src = col + row * cols + n * hw;
          for (int y = 0; y < d.h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= d.h) continue;
            const double* srow = src + static_cast<long>(y) * d.w;
            double* drow = plane + static_cast<long>(sy) * d.w;
            for (int xx = 0; xx < d.w; ++xx) {
              const int sx = xx + kx - pad;
              if (sx >= 0 && sx < d.w) drow[sx] += srow[xx];
            }
          }
        }
      }
    }
  }
}

// [n, c, hw] <-> [c, n*hw]
void nchw_to_cn(int n, int c, long hw, const double* src, double* dst) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(src + (static_cast<long>(i) * c + ch) * hw, hw, dst + ch * n * hw + i * hw);
}

void cn_to_nchw(int n, int c, long hw, const double* src, double* dst) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(src + ch * n * hw + i * hw, hw, dst + (static_cast<long>(i) * c + ch) * hw);
}

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> x,
                    std::span<const double> weight, std::span<double> y) {
  // One GEMM per sample: a sample's output never depends on the batch it
  // was computed in, which keeps patch synthesis bit-identical across batch
  // sizes.
  const long hw = static_cast<long>(d.h) * d.w;
  const long kdim = static_cast<long>(d.cin) * d.k * d.k;
  const ConvDims one{1, d.cin, d.h, d.w, d.cout, d.k};
  const ConstMap wmat(weight.data(), d.cout, kdim);
#pragma omp parallel
  {
    std::vector<double> col(d.k == 1 ? 0 : kdim * hw);
#pragma omp for schedule(static)
    for (int n = 0; n < d.n; ++n) {
      const double* xs = x.data() + static_cast<long>(n) * d.cin * hw;
      double* ys = y.data() + static_cast<long>(n) * d.cout * hw;
      const double* src = xs;
      if (d.k != 1) {
        im2col(one, xs, col.data());
        src = col.data();
      }
      Map(ys, d.cout, hw).noalias() = wmat * ConstMap(src, kdim, hw);
    }
  }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> gy,
                           std::span<const double> weight, std::span<double> gx) {
  const long hw = static_cast<long>(d.h) * d.w;
  const long kdim = static_cast<long>(d.cin) * d.k * d.k;
  const long cols = d.n * hw;
  std::vector<double> g(static_cast<long>(d.cout) * cols);
  nchw_to_cn(d.n, d.cout, hw, gy.data(), g.data());
  std::vector<double> gcol(kdim * cols);
  Map(gcol.data(), kdim, cols).noalias() =
      ConstMap(weight.data(), d.cout, kdim).transpose() * ConstMap(g.data(), d.cout, cols);
  if (d.k == 1)
    cn_to_nchw(d.n, d.cin, hw, gcol.data(), gx.data());
  else
    col2im(d, gcol.data(), gx.data());
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> x,
                            std::span<const double> gy, std::span<double> gw) {
  const long hw = static_cast<long>(d.h) * d.w;
  const long kdim = static_cast<long>(d.cin) * d.k * d.k;
  const long cols = d.n * hw;
  std::vector<double> col(kdim * cols);
  if (d.k == 1)
    nchw_to_cn(d.n, d.cin, hw, x.data(), col.data());
  else
    im2col(d, x.data(), col.data());
  std::vector<double> g(static_cast<long>(d.cout) * cols);
  nchw_to_cn(d.n, d.cout, hw, gy.data(), g.data());
  Map(gw.data(), d.cout, kdim).noalias() =
      ConstMap(g.data(), d.cout, cols) * ConstMap(col.data(), kdim, cols).transpose();
}

void upsample2x_forward(int planes, int h, int w, std::span<const double> x,
                        std::span<double> y) {
  const auto ty = detail::upsample_taps(h);
  const auto tx = detail::upsample_taps(w);
  const int oh = 2 * h, ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = x.data() + static_cast<long>(p) * h * w;
    double* dst = y.data() + static_cast<long>(p) * oh * ow;
    std::vector<double> rows(static_cast<long>(h) * ow);
    for (int r = 0; r < h; ++r)
      for (int o = 0; o < ow; ++o) {
        const auto& t = tx[o];
        rows[r * ow + o] = t.w0 * src[r * w + t.i0] + t.w1 * src[r * w + t.i1];
      }
    for (int o = 0; o < oh; ++o) {
      const auto& t = ty[o];
      for (int c = 0; c < ow; ++c)
        dst[o * ow + c] = t.w0 * rows[t.i0 * ow + c] + t.w1 * rows[t.i1 * ow + c];
    }
  }
}

void upsample2x_backward(int planes, int h, int w, std::span<const double> gy,
                         std::span<double> gx) {
  const auto ty = detail::upsample_taps(h);
  const auto tx = detail::upsample_taps(w);
  const int oh = 2 * h, ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = gy.data() + static_cast<long>(p) * oh * ow;
    double* dst = gx.data() + static_cast<long>(p) * h * w;
    std::vector<double> rows(static_cast<long>(h) * ow, 0.0);
    for (int o = 0; o < oh; ++o) {
      const auto& t = ty[o];
      for (int c = 0; c < ow; ++c) {
        rows[t.i0 * ow + c] += t.w0 * src[o * ow + c];
        rows[t.i1 * ow + c] += t.w1 * src[o * ow + c];
      }
    }
    std::fill(dst, dst + static_cast<long>(h) * w, 0.0);
    for (int r = 0; r < h; ++r)
      for (int o = 0; o < ow; ++o) {
        const auto& t = tx[o];
        dst[r * w + t.i0] += t.w0 * rows[r * ow + o];
        dst[r * w + t.i1] += t.w1 * rows[r * ow + o];
      }
  }
}

void avgpool2x_forward(int planes, int h, int w, std::span<const double> x,
                       std::span<double> y) {
  const int oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = x.data() + static_cast<long>(p) * h * w;
    double* dst = y.data() + static_cast<long>(p) * oh * ow;
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        const double* s = src + 2 * r * w + 2 * c;
        dst[r * ow + c] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  }
}

void avgpool2x_backward(int planes, int h, int w, std::span<const double> gy,
                        std::span<double> gx) {
  const int oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = gy.data() + static_cast<long>(p) * oh * ow;
    double* dst = gx.data() + static_cast<long>(p) * h * w;
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        const double g = 0.25 * src[r * ow + c];
        double* s = dst + 2 * r * w + 2 * c;
        s[0] = g;
        s[1] = g;
        s[w] = g;
        s[w + 1] = g;
      }
  }
}

}  // namespace outpaint::kernels
