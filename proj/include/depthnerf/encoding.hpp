#pragma once

// Gaussian approximation of conical frustum segments and the integrated
// positional encoding built on it, plus the frequency encoding of view
// directions.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthnerf/camera.hpp"

namespace depthnerf {

struct FrustumGaussian {
  Vec3 mu = Vec3::Zero();
  Vec3 sigma_diag = Vec3::Zero();
  double t0 = 0.0;
  double t1 = 0.0;
};

/// Moments of a conical frustum along its own axis.
struct FrustumMoments {
  double mean_t = 0.0;    // mean distance along the ray
  double var_t = 0.0;     // variance along the ray
  double var_r = 0.0;     // variance along each perpendicular axis
};

inline constexpr double kMinSegment = 1e-9;

/// Closed-form moments of the uniform distribution inside the frustum
/// between t0 and t1 of a cone whose radius grows as `radius`·t.
inline FrustumMoments frustum_moments(double t0, double t1, double radius) {
  if (t1 - t0 < kMinSegment) t1 = t0 + kMinSegment;
  const double mid = 0.5 * (t0 + t1);
  const double half = 0.5 * (t1 - t0);
  const double mid2 = mid * mid;
  const double half2 = half * half;
  const double half4 = half2 * half2;
  const double denom = 3.0 * mid2 + half2;
  FrustumMoments m;
  m.mean_t = mid + 2.0 * mid * half2 / denom;
  m.var_t = half2 / 3.0 - (4.0 / 15.0) * (half4 * (12.0 * mid2 - half2)) / (denom * denom);
  m.var_r = radius * radius * (mid2 / 4.0 + 5.0 * half2 / 12.0 - 4.0 * half4 / (15.0 * denom));
  return m;
}

/// Lifts the segment [t0, t1) of `ray` to a world-space Gaussian with
/// diagonal covariance.
inline FrustumGaussian frustum_gaussian(const Ray& ray, double t0, double t1) {
  if (t1 - t0 < kMinSegment) t1 = t0 + kMinSegment;
  const FrustumMoments m = frustum_moments(t0, t1, ray.radius);
  const Vec3& d = ray.direction;
  const Vec3 dd = d.cwiseProduct(d);
  const double norm2 = std::max(d.squaredNorm(), 1e-30);
  FrustumGaussian g;
  g.mu = ray.origin + m.mean_t * d;
  g.sigma_diag = m.var_t * dd + m.var_r * (Vec3::Ones() - dd / norm2);
  g.sigma_diag = g.sigma_diag.cwiseMax(0.0);
  g.t0 = t0;
  g.t1 = t1;
  return g;
}

/// How the covariance enters the attenuation factor of band l.
///  - Lifted: exp(-2^(2l-1)·Σ_kk), the covariance carried through the
///    frequency lift 2^l (its variance scales by 4^l).
///  - Literal: exp(-2^(l-1)·Σ_kk), the exponent exactly as commonly printed.
enum class IpeAttenuation { Lifted, Literal };

inline double ipe_attenuation_scale(int band, IpeAttenuation mode) {
  return mode == IpeAttenuation::Lifted ? std::ldexp(1.0, 2 * band - 1)
                                        : std::ldexp(1.0, band - 1);
}

inline std::size_t ipe_width(int bands) { return 6 * static_cast<std::size_t>(bands); }
inline std::size_t direction_width(int bands, bool append_raw) {
  return 6 * static_cast<std::size_t>(bands) + (append_raw ? 3 : 0);
}

/// Writes the 6·L integrated positional encoding of (mu, diag Σ) into `out`:
/// the sine block for all (band, axis) pairs, then the cosine block, each
/// ordered band-major.
inline void integrated_pe(const Vec3& mu, const Vec3& sigma_diag, int bands,
                          IpeAttenuation mode, std::span<double> out) {
  if (bands < 1) throw std::invalid_argument("encoding needs at least one band");
  if (out.size() != ipe_width(bands)) throw std::invalid_argument("IPE output width mismatch");
  const std::size_t half = 3 * static_cast<std::size_t>(bands);
  for (int l = 0; l < bands; ++l) {
    const double freq = std::ldexp(1.0, l);
    const double att = ipe_attenuation_scale(l, mode);
    for (int k = 0; k < 3; ++k) {
      const double w = std::exp(-att * sigma_diag[k]);
      const double x = freq * mu[k];
      out[3 * l + k] = std::sin(x) * w;
      out[half + 3 * l + k] = std::cos(x) * w;
    }
  }
}

inline std::vector<double> integrated_pe(const FrustumGaussian& g, int bands,
                                         IpeAttenuation mode = IpeAttenuation::Lifted) {
  std::vector<double> out(ipe_width(bands));
  integrated_pe(g.mu, g.sigma_diag, bands, mode, out);
  return out;
}

/// Classic (non-integrated) positional encoding, same layout as integrated_pe.
inline std::vector<double> positional_encoding(const Vec3& x, int bands) {
  std::vector<double> out(ipe_width(bands));
  const std::size_t half = 3 * static_cast<std::size_t>(bands);
  for (int l = 0; l < bands; ++l)
    for (int k = 0; k < 3; ++k) {
      out[3 * l + k] = std::sin(std::ldexp(1.0, l) * x[k]);
      out[half + 3 * l + k] = std::cos(std::ldexp(1.0, l) * x[k]);
    }
  return out;
}

namespace detail {
inline std::atomic<bool>& non_unit_direction_warned() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace detail

/// [d (optional), sin block, cos block] of a unit view direction. A direction
/// that is not unit length is normalized, with a single warning per process.
inline void encode_direction(Vec3 d, int bands, bool append_raw, std::span<double> out) {
  if (bands < 1) throw std::invalid_argument("encoding needs at least one band");
  if (out.size() != direction_width(bands, append_raw))
    throw std::invalid_argument("direction encoding width mismatch");
  if (std::abs(d.norm() - 1.0) > 1e-9) {
    if (!detail::non_unit_direction_warned().exchange(true))
      std::cerr << "warning: non-unit view direction normalized before encoding\n";
    d.normalize();
  }
  std::size_t o = 0;
  if (append_raw)
    for (int k = 0; k < 3; ++k) out[o++] = d[k];
  const std::size_t half = 3 * static_cast<std::size_t>(bands);
  for (int l = 0; l < bands; ++l)
    for (int k = 0; k < 3; ++k) {
      const double x = std::ldexp(1.0, l) * d[k];
      out[o + 3 * l + k] = std::sin(x);
      out[o + half + 3 * l + k] = std::cos(x);
    }
}

inline std::vector<double> encode_direction(const Vec3& d, int bands, bool append_raw = true) {
  std::vector<double> out(direction_width(bands, append_raw));
  encode_direction(d, bands, append_raw, out);
  return out;
}

inline std::string to_string(IpeAttenuation m) {
  return m == IpeAttenuation::Lifted ? "lifted" : "literal";
}
inline IpeAttenuation ipe_attenuation_from_string(const std::string& s) {
  if (s == "lifted") return IpeAttenuation::Lifted;
  if (s == "literal") return IpeAttenuation::Literal;
  throw std::invalid_argument("unknown IPE attenuation mode '" + s + "'");
}

}  // namespace depthnerf
