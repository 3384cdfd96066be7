#pragma once

// PSNR, single-scale SSIM and AbsRel, plus the report that collects them.

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthnerf/image.hpp"

namespace depthnerf {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10·log10(1/MSE) for images in [0, 1]; +inf when the images are identical.
inline double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("psnr: image shapes differ");
  if (a.data.empty()) throw std::invalid_argument("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = 0.5 * (size - 1);
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

/// Separable Gaussian filter over all fully-contained window positions.
inline std::vector<double> filter_valid(const std::vector<double>& img, int w, int h,
                                        const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * img[static_cast<std::size_t>(r) * w + c + i];
      tmp[static_cast<std::size_t>(r) * ow + c] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(r + i) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = s;
    }
  return out;
}

inline double ssim_channel(const Image& a, const Image& b, int ch, const SsimParams& p) {
  const int w = a.width, h = a.height;
  const std::size_t n = a.pixel_count();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.data[i * a.channels + ch];
    y[i] = b.data[i * b.channels + ch];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = gaussian_kernel(p.window, p.sigma);
  const auto mx = filter_valid(x, w, h, k);
  const auto my = filter_valid(y, w, h, k);
  const auto sxx = filter_valid(xx, w, h, k);
  const auto syy = filter_valid(yy, w, h, k);
  const auto sxy = filter_valid(xy, w, h, k);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace detail

/// Mean SSIM over all valid window positions; multi-channel images average
/// the per-channel values.
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  if (!a.same_shape(b)) throw DimensionError("ssim: image shapes differ");
  if (a.width < p.window || a.height < p.window)
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(p.window) +
                                "x" + std::to_string(p.window) + " window");
  if (a.data == b.data) return 1.0;
  double s = 0.0;
  for (int c = 0; c < a.channels; ++c) s += detail::ssim_channel(a, b, c, p);
  return s / a.channels;
}

/// Mean of |pred - gt| / gt over pixels where gt > 0 (and the optional
/// mask is non-zero). Not symmetric in its arguments.
inline double abs_rel(const Image& pred, const Image& gt, const Image* mask = nullptr) {
  if (!pred.same_shape(gt)) throw DimensionError("abs_rel: depth map shapes differ");
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (!(gt.data[i] > 0.0)) continue;
    if (mask && !(mask->data[i] != 0.0)) continue;
    s += std::abs(pred.data[i] - gt.data[i]) / gt.data[i];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("abs_rel: no valid depth pixels");
  return s / static_cast<double>(count);
}

inline std::size_t valid_depth_count(const Image& gt) {
  std::size_t n = 0;
  for (double v : gt.data) n += v > 0.0 ? 1 : 0;
  return n;
}

struct FrameMetrics {
  std::size_t frame = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double abs_rel = 0.0;
  std::size_t valid_pixels = 0;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;
  double psnr = 0.0;
  double ssim = 0.0;
  double abs_rel = 0.0;
  std::size_t valid_pixels = 0;
  /// Filled externally when perceptual scores are available.
  std::optional<double> lpips;

  void aggregate() {
    psnr = ssim = abs_rel = 0.0;
    valid_pixels = 0;
    if (frames.empty()) return;
    for (const auto& f : frames) {
      psnr += f.psnr;
      ssim += f.ssim;
      abs_rel += f.abs_rel;
      valid_pixels += f.valid_pixels;
    }
    const double n = static_cast<double>(frames.size());
    psnr /= n;
    ssim /= n;
    abs_rel /= n;
  }
};

inline FrameMetrics score_frame(std::size_t index, const Image& pred_color, const Image& gt_color,
                                const Image& pred_depth, const Image& gt_depth) {
  FrameMetrics m;
  m.frame = index;
  m.psnr = psnr(pred_color, gt_color);
  m.ssim = ssim(pred_color, gt_color);
  m.valid_pixels = valid_depth_count(gt_depth);
  m.abs_rel = m.valid_pixels ? abs_rel(pred_depth, gt_depth) : 0.0;
  return m;
}

/// JSON has no infinity; identical-image PSNR is written as the string "inf".
inline nlohmann::json metric_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

inline double metric_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
  }
  return j.get<double>();
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : r.frames)
    frames.push_back({{"frame", f.frame},
                      {"psnr", metric_json(f.psnr)},
                      {"ssim", metric_json(f.ssim)},
                      {"abs_rel", metric_json(f.abs_rel)},
                      {"valid_pixels", f.valid_pixels}});
  return {{"psnr", metric_json(r.psnr)},
          {"ssim", metric_json(r.ssim)},
          {"abs_rel", metric_json(r.abs_rel)},
          {"valid_pixels", r.valid_pixels},
          {"lpips", r.lpips ? nlohmann::json(*r.lpips) : nlohmann::json(nullptr)},
          {"frames", frames}};
}

namespace detail {
inline std::string fmt(double v, int prec) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}
}  // namespace detail

namespace detail {
/// Pads to `width` display columns; counts UTF-8 code points, not bytes.
inline std::string pad(const std::string& s, std::size_t width, bool left) {
  std::size_t cols = 0;
  for (unsigned char c : s) cols += (c & 0xC0) != 0x80;
  const std::string fill(width > cols ? width - cols : 0, ' ');
  return left ? s + fill : fill + s;
}
}  // namespace detail

/// Aligned plain-text table, one row per labelled result.
inline std::string metrics_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t label_w = 6;
  for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());
  std::ostringstream os;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c,
                 const std::string& d) {
    os << detail::pad(a, label_w, true) << "  " << detail::pad(b, 8, false) << "  "
       << detail::pad(c, 7, false) << "  " << detail::pad(d, 8, false) << "\n";
  };
  row("Method", "PSNR↑", "SSIM↑", "AbsRel↓");
  os << std::string(label_w + 31, '-') << "\n";
  for (const auto& [label, r] : rows)
    row(label, detail::fmt(r.psnr, 2), detail::fmt(r.ssim, 4), detail::fmt(r.abs_rel, 4));
  return os.str();
}

/// Table for one report: a row per frame followed by the mean.
inline std::string metrics_table(const EvalReport& r) {
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& f : r.frames) {
    EvalReport one;
    one.psnr = f.psnr;
    one.ssim = f.ssim;
    one.abs_rel = f.abs_rel;
    rows.emplace_back("frame " + std::to_string(f.frame), one);
  }
  rows.emplace_back("mean", r);
  return metrics_table(rows);
}

}  // namespace depthnerf
