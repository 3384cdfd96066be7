#pragma once

// Segment boundaries along a ray: NeRF-style uniform stratified sampling over
// the full bounds, and three depth-guided strategies that only place
// segments near the measured surface.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthnerf/camera.hpp"

namespace depthnerf {

enum class SamplingStrategy { Uniform, StratifiedLocal, GaussianLocal, Adaptive };

inline std::string to_string(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::Uniform:
      return "uniform";
    case SamplingStrategy::StratifiedLocal:
      return "stratified";
    case SamplingStrategy::GaussianLocal:
      return "gaussian";
    case SamplingStrategy::Adaptive:
      return "adaptive";
  }
  return "uniform";
}

inline SamplingStrategy sampling_strategy_from_string(const std::string& s) {
  if (s == "uniform") return SamplingStrategy::Uniform;
  if (s == "stratified" || s == "stratified_local") return SamplingStrategy::StratifiedLocal;
  if (s == "gaussian" || s == "gaussian_local") return SamplingStrategy::GaussianLocal;
  if (s == "adaptive") return SamplingStrategy::Adaptive;
  throw std::invalid_argument("unknown sampling strategy '" + s + "'");
}

struct SamplerConfig {
  SamplingStrategy strategy = SamplingStrategy::Adaptive;
  int n_samples = 16;
  double alpha_n = 0.5;
  double alpha_f = 0.5;
  double varsigma = 0.3;
  double lambda_r = 0.09;
  double lambda_m = 0.1;
  double global_near = 2.0;
  double global_far = 6.0;

  void validate() const {
    if (n_samples < 2) throw std::invalid_argument("n_samples must be at least 2");
    if (!(alpha_n > 0.0) || !(alpha_f > 0.0))
      throw std::invalid_argument("alpha_n and alpha_f must be positive");
    if (!(varsigma > 0.0)) throw std::invalid_argument("varsigma must be positive");
    if (!(lambda_m > 0.0)) throw std::invalid_argument("lambda_m must be positive");
    if (!(lambda_r >= 0.0)) throw std::invalid_argument("lambda_r must be non-negative");
    if (!(global_near > 0.0 && global_near < global_far))
      throw std::invalid_argument("need 0 < global_near < global_far");
  }
};

inline constexpr double kMinGap = 1e-6;

/// Sorted boundaries t_0 < ... < t_N of N segments along one ray.
struct SegmentSet {
  std::vector<double> boundaries;
  /// Set when a depth-guided strategy fell back to uniform sampling because
  /// the ray carried no usable depth.
  bool fallback = false;

  std::size_t count() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  double delta(std::size_t i) const { return boundaries[i + 1] - boundaries[i]; }
  double midpoint(std::size_t i) const { return 0.5 * (boundaries[i] + boundaries[i + 1]); }
};

/// splitmix64 finalizer; mixes (seed, stream ids) into independent seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

/// Default random source for the samplers. Anything exposing uniform() in
/// [0, 1) and normal() ~ N(0, 1) can stand in for it.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return uniform_(engine_); }
  double normal() { return normal_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Per-ray stream so that results do not depend on batching or threading.
inline RandomStream ray_stream(std::uint64_t seed, std::uint64_t ray_id, std::uint64_t epoch) {
  return RandomStream(stream_seed(seed, ray_id, epoch));
}

/// Sorts, clamps into [lo, hi] and separates neighbours by at least `gap`,
/// nudging forward first and backward only if the far end overflowed.
inline void enforce_min_gap(std::vector<double>& t, double lo, double hi, double gap = kMinGap) {
  if (t.empty()) return;
  if (hi - lo < gap * static_cast<double>(t.size())) {
    throw std::invalid_argument("interval too short for the requested segment count");
  }
  std::sort(t.begin(), t.end());
  for (double& v : t) v = std::clamp(v, lo, hi);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < t.size(); ++j) {
    if (t[j] - t[j - 1] < gap) {
      t[j] = t[j - 1] + gap;
      while (t[j] - t[j - 1] < gap) t[j] = std::nextafter(t[j], inf);
    }
  }
  if (t.back() > hi) {
    t.back() = hi;
    for (std::size_t j = t.size() - 1; j-- > 0;) {
      if (t[j + 1] - t[j] < gap) {
        t[j] = t[j + 1] - gap;
        while (t[j + 1] - t[j] < gap) t[j] = std::nextafter(t[j], -inf);
      }
    }
  }
}

inline bool depth_is_valid(double depth) { return std::isfinite(depth) && depth > 0.0; }

namespace detail {
template <class Rng>
std::vector<double> stratified(int n_samples, double lo, double hi, Rng& rng) {
  const std::size_t count = static_cast<std::size_t>(n_samples) + 1;
  const double width = (hi - lo) / static_cast<double>(count);
  std::vector<double> t(count);
  for (std::size_t j = 0; j < count; ++j) t[j] = lo + (static_cast<double>(j) + rng.uniform()) * width;
  enforce_min_gap(t, lo, hi);
  return t;
}
}  // namespace detail

/// N+1 boundaries, one uniform draw in each of N+1 equal bins over the
/// global bounds.
template <class Rng>
SegmentSet sample_uniform(const SamplerConfig& cfg, const Ray&, Rng& rng) {
  return {detail::stratified(cfg.n_samples, cfg.global_near, cfg.global_far, rng), false};
}

template <class Rng>
SegmentSet sample_stratified_local(const SamplerConfig& cfg, const Ray& ray, double depth, Rng& rng) {
  if (!depth_is_valid(depth)) {
    SegmentSet s = sample_uniform(cfg, ray, rng);
    s.fallback = true;
    return s;
  }
  const double lo = std::max(cfg.global_near, depth - cfg.alpha_n);
  const double hi = std::min(cfg.global_far, depth + cfg.alpha_f);
  if (hi - lo < kMinGap * (cfg.n_samples + 1)) {
    SegmentSet s = sample_uniform(cfg, ray, rng);
    s.fallback = true;
    return s;
  }
  return {detail::stratified(cfg.n_samples, lo, hi, rng), false};
}

template <class Rng>
SegmentSet sample_gaussian_local(const SamplerConfig& cfg, const Ray& ray, double depth,
                                 double spread, Rng& rng) {
  if (!depth_is_valid(depth)) {
    SegmentSet s = sample_uniform(cfg, ray, rng);
    s.fallback = true;
    return s;
  }
  if (!(spread > 0.0)) throw std::invalid_argument("gaussian spread must be positive");
  std::vector<double> t(static_cast<std::size_t>(cfg.n_samples) + 1);
  for (double& v : t) v = depth + spread * rng.normal();
  enforce_min_gap(t, cfg.global_near, cfg.global_far);
  return {std::move(t), false};
}

/// Depth- and epoch-dependent spread: (D/4)·(exp(-λ_r·epoch) + λ_m).
inline double adaptive_spread(double depth, double epoch, double lambda_r, double lambda_m) {
  return 0.25 * depth * (std::exp(-lambda_r * epoch) + lambda_m);
}

template <class Rng>
SegmentSet sample_adaptive(const SamplerConfig& cfg, const Ray& ray, double depth, double epoch,
                           Rng& rng) {
  if (!depth_is_valid(depth)) {
    SegmentSet s = sample_uniform(cfg, ray, rng);
    s.fallback = true;
    return s;
  }
  return sample_gaussian_local(cfg, ray, depth,
                               adaptive_spread(depth, epoch, cfg.lambda_r, cfg.lambda_m), rng);
}

/// Dispatches on cfg.strategy. `depth` is ignored by the uniform strategy.
template <class Rng>
SegmentSet sample_segments(const SamplerConfig& cfg, const Ray& ray, double depth, double epoch,
                           Rng& rng) {
  switch (cfg.strategy) {
    case SamplingStrategy::Uniform:
      return sample_uniform(cfg, ray, rng);
    case SamplingStrategy::StratifiedLocal:
      return sample_stratified_local(cfg, ray, depth, rng);
    case SamplingStrategy::GaussianLocal:
      return sample_gaussian_local(cfg, ray, depth, cfg.varsigma, rng);
    case SamplingStrategy::Adaptive:
      return sample_adaptive(cfg, ray, depth, epoch, rng);
  }
  return sample_uniform(cfg, ray, rng);
}

}  // namespace depthnerf
