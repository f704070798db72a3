#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace outpaint::kernels::detail {

struct Tap {
  int i0;
  int i1;
  double w0;
  double w1;
};

// Source taps for 2x bilinear upsampling with half-pixel centers:
// src = (o + 0.5) / 2 - 0.5, clamped to the edge.
inline std::vector<Tap> upsample_taps(int n) {
  std::vector<Tap> taps(2 * n);
  for (int o = 0; o < 2 * n; ++o) {
    const double src = (o + 0.5) / 2.0 - 0.5;
    const int lo = static_cast<int>(std::floor(src));
    const double frac = src - lo;
    taps[o] = {std::clamp(lo, 0, n - 1), std::clamp(lo + 1, 0, n - 1), 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace outpaint::kernels::detail
