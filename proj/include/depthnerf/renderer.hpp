#pragma once

// Quadrature compositing of per-segment (density, rgb) into per-ray color,
// depth and depth variance, in a differentiable batched form for training
// and a plain per-ray form for inference.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthnerf/autodiff.hpp"
#include "depthnerf/camera.hpp"
#include "depthnerf/encoding.hpp"
#include "depthnerf/field.hpp"
#include "depthnerf/image.hpp"
#include "depthnerf/sampling.hpp"

namespace depthnerf {

/// Representative position of a segment in the depth sums.
enum class DepthPoint { Midpoint, Lower };

inline std::string to_string(DepthPoint p) { return p == DepthPoint::Midpoint ? "midpoint" : "lower"; }
inline DepthPoint depth_point_from_string(const std::string& s) {
  if (s == "midpoint") return DepthPoint::Midpoint;
  if (s == "lower") return DepthPoint::Lower;
  throw std::invalid_argument("unknown depth point '" + s + "'");
}

inline double segment_point(const SegmentSet& s, std::size_t i, DepthPoint p) {
  return p == DepthPoint::Midpoint ? s.midpoint(i) : s.boundaries[i];
}

struct RenderResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double depth_var = 0.0;
  std::vector<double> weights;
  double residual = 1.0;  // transmittance left after the last segment
};

/// `density` has one value per segment; `rgb` holds three per segment.
inline RenderResult composite(const SegmentSet& segments, std::span<const double> density,
                              std::span<const double> rgb, const Vec3& background,
                              DepthPoint point = DepthPoint::Midpoint) {
  const std::size_t n = segments.count();
  if (density.size() != n || rgb.size() != 3 * n)
    throw DimensionError("composite: " + std::to_string(n) + " segments but " +
                         std::to_string(density.size()) + " densities and " +
                         std::to_string(rgb.size()) + " color values");
  RenderResult r;
  r.weights.resize(n);
  double optical = 0.0;  // running sum of τ_j·δ_j
  for (std::size_t i = 0; i < n; ++i) {
    const double delta = segments.delta(i);
    assert(delta >= 0.0);
    const double td = density[i] * delta;
    const double trans = std::exp(-optical);
    const double w = trans * (1.0 - std::exp(-td));
    r.weights[i] = w;
    r.color += w * Vec3(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
    r.depth += w * segment_point(segments, i, point);
    optical += td;
  }
  r.residual = std::exp(-optical);
  r.color += r.residual * background;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = r.depth - segment_point(segments, i, point);
    r.depth_var += r.weights[i] * d * d;
  }
  return r;
}

struct CompositeTensors {
  Tensor color;      // R × 3
  Tensor depth;      // R × 1
  Tensor depth_var;  // R × 1
  Tensor weights;    // R × N
  Tensor residual;   // R × 1
};

/// Batched, differentiable compositing over R rays with N segments each.
/// `density` is (R·N) × 1 and `rgb` is (R·N) × 3 in ray-major order;
/// `deltas` and `points` are R × N constants.
inline CompositeTensors composite(Tape& tape, const Tensor& density, const Tensor& rgb,
                                  const Matrix& deltas, const Matrix& points,
                                  const Vec3& background) {
  const std::size_t rays = deltas.rows();
  const std::size_t n = deltas.cols();
  if (!deltas.same_shape(points) || density.rows() != rays * n || density.cols() != 1 ||
      rgb.rows() != rays * n || rgb.cols() != 3)
    throw DimensionError("composite batch shapes disagree: deltas " + deltas.shape_string() +
                         ", density " + density.value().shape_string() + ", rgb " +
                         rgb.value().shape_string());
  using namespace ad;
  Tensor tau = reshape(density, rays, n);
  Tensor td = mul(tau, tape.constant(deltas));
  Tensor alpha = add_scalar(neg(exp(neg(td))), 1.0);
  Tensor trans = exp(neg(cumsum_exclusive(td)));
  Tensor w = mul(trans, alpha);
  Tensor residual = exp(neg(sum(td, Axis::Cols)));

  Tensor color;
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor ck = reshape(slice_cols(rgb, k, 1), rays, n);
    Tensor contrib = add(sum(mul(w, ck), Axis::Cols), scale(residual, background[k]));
    color = k == 0 ? contrib : concat(color, contrib);
  }
  Tensor pts = tape.constant(points);
  Tensor depth = sum(mul(w, pts), Axis::Cols);
  Tensor diff = sub(broadcast_cols(depth, n), pts);
  Tensor var = sum(mul(w, square(diff)), Axis::Cols);
  return {color, depth, var, w, residual};
}

/// Network inputs and quadrature constants for a batch of rays that share a
/// segment count.
struct SampleBatch {
  Matrix ipe;     // (R·N) × ipe_dim
  Matrix dir;     // (R·N) × dir_dim
  Matrix deltas;  // R × N
  Matrix points;  // R × N
};

inline SampleBatch build_batch(std::span<const Ray> rays, std::span<const SegmentSet> segments,
                               const FieldConfig& fc, IpeAttenuation attenuation,
                               DepthPoint point) {
  if (rays.size() != segments.size()) throw DimensionError("ray and segment counts differ");
  const std::size_t r_count = rays.size();
  const std::size_t n = r_count == 0 ? 0 : segments[0].count();
  SampleBatch b;
  b.ipe = Matrix(r_count * n, fc.ipe_dim());
  b.dir = Matrix(r_count * n, fc.dir_dim());
  b.deltas = Matrix(r_count, n);
  b.points = Matrix(r_count, n);
  std::vector<double> dir_enc(fc.dir_dim());
  for (std::size_t r = 0; r < r_count; ++r) {
    const SegmentSet& s = segments[r];
    if (s.count() != n) throw DimensionError("all rays in a batch need the same segment count");
    encode_direction(rays[r].direction, fc.dir_bands, fc.append_raw_direction, dir_enc);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = r * n + i;
      const FrustumGaussian g = frustum_gaussian(rays[r], s.boundaries[i], s.boundaries[i + 1]);
      integrated_pe(g.mu, g.sigma_diag, fc.ipe_bands, attenuation,
                    std::span<double>(b.ipe.data() + row * b.ipe.cols(), b.ipe.cols()));
      std::copy(dir_enc.begin(), dir_enc.end(), b.dir.data() + row * b.dir.cols());
      b.deltas(r, i) = s.delta(i);
      b.points(r, i) = segment_point(s, i, point);
    }
  }
  return b;
}

struct RenderOptions {
  SamplerConfig sampler;
  IpeAttenuation attenuation = IpeAttenuation::Lifted;
  DepthPoint depth_point = DepthPoint::Midpoint;
  Vec3 background = Vec3::Zero();
  std::size_t chunk_rays = 1024;
  std::uint64_t seed = 0;
  /// Epoch fed to the adaptive spread.
  double epoch = 0.0;
  /// Guide depth for depth-guided strategies; rays without it sample uniformly.
  const Image* guide_depth = nullptr;
};

struct RenderedImage {
  Image color;      // 3 channels
  Image depth;      // meters
  Image depth_var;  // m^2
};

/// Renders every pixel of a frame without recording a tape. Results depend
/// only on (params, geometry, options), not on chunk_rays.
inline RenderedImage render_image(const FieldParams& params, const Intrinsics& k, const Pose& pose,
                                  const RenderOptions& opt) {
  const auto rays = rays_for_frame(k, pose, opt.sampler.global_near, opt.sampler.global_far);
  RenderedImage out{Image(k.width, k.height, 3), Image(k.width, k.height, 1),
                    Image(k.width, k.height, 1)};
  const std::size_t chunk = std::max<std::size_t>(1, opt.chunk_rays);
  std::vector<SegmentSet> segs;
  for (std::size_t start = 0; start < rays.size(); start += chunk) {
    const std::size_t end = std::min(rays.size(), start + chunk);
    segs.clear();
    for (std::size_t r = start; r < end; ++r) {
      const double d = opt.guide_depth ? opt.guide_depth->data[r] : 0.0;
      RandomStream rng = ray_stream(opt.seed, r, static_cast<std::uint64_t>(opt.epoch));
      segs.push_back(sample_segments(opt.sampler, rays[r], d, opt.epoch, rng));
    }
    const std::span<const Ray> ray_span(rays.data() + start, end - start);
    const SampleBatch b = build_batch(ray_span, segs, params.config, opt.attenuation, opt.depth_point);
    const FieldValues fv = evaluate_field(params, b.ipe, b.dir);
    const std::size_t n = segs.front().count();
    for (std::size_t r = 0; r < segs.size(); ++r) {
      const RenderResult res =
          composite(segs[r], std::span<const double>(fv.density.data() + r * n, n),
                    std::span<const double>(fv.rgb.data() + 3 * r * n, 3 * n), opt.background,
                    opt.depth_point);
      const std::size_t p = start + r;
      for (int c = 0; c < 3; ++c) out.color.data[3 * p + c] = res.color[c];
      out.depth.data[p] = res.depth;
      out.depth_var.data[p] = res.depth_var;
    }
  }
  return out;
}

}  // namespace depthnerf
