#pragma once

#include <cmath>

#include "depthnerf/image.hpp"

namespace reference {

// Direct 2-D SSIM on one channel: every window position recomputes its own
// weighted moments from an explicitly built 11×11 Gaussian kernel.
inline double ssim_channel(const depthnerf::Image& a, const depthnerf::Image& b, int ch = 0) {
  constexpr int n = 11;
  double k[n][n], total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      k[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      total += k[i][j];
    }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double sum = 0.0;
  int count = 0;
  for (int r = 0; r + n <= a.height; ++r)
    for (int c = 0; c + n <= a.width; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          mx += k[i][j] / total * a.at(r + i, c + j, ch);
          my += k[i][j] / total * b.at(r + i, c + j, ch);
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double w = k[i][j] / total;
          const double dx = a.at(r + i, c + j, ch) - mx, dy = b.at(r + i, c + j, ch) - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          cov += w * dx * dy;
        }
      sum += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return sum / count;
}

inline double ssim(const depthnerf::Image& a, const depthnerf::Image& b) {
  double s = 0.0;
  for (int ch = 0; ch < a.channels; ++ch) s += ssim_channel(a, b, ch);
  return s / a.channels;
}

}  // namespace reference
