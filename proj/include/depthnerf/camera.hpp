#pragma once

// Pinhole cameras, rigid camera-to-world poses and per-pixel cone rays.
// Camera frame convention: +x right, +y up, the camera looks down -z.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace depthnerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  /// Cone radius per unit distance along the ray: the pixel width on the
  /// normalized image plane scaled by 2/sqrt(12), which matches the variance
  /// of a square pixel footprint.
  double pixel_radius() const { return (1.0 / fx) * 2.0 / std::sqrt(12.0); }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("focal lengths must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
    if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
      throw std::invalid_argument("principal point must lie inside the image");
  }

  /// Symmetric camera with the given horizontal field of view.
  static Intrinsics from_fov(int width, int height, double fov_x_radians) {
    Intrinsics k;
    k.width = width;
    k.height = height;
    k.fx = 0.5 * width / std::tan(0.5 * fov_x_radians);
    k.fy = k.fx;
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    return k;
  }
};

/// Camera-to-world rigid transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static Pose from_matrix(const Mat4& m) {
    Pose p;
    p.rotation = m.topLeftCorner<3, 3>();
    p.translation = m.topRightCorner<3, 1>();
    return p;
  }

  bool is_rigid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }

  /// Viewing direction (-z of the camera frame) in world coordinates.
  Vec3 forward() const { return -rotation.col(2); }

  /// Camera at `eye` looking at `target`. `up` is a hint; a fallback axis is
  /// used when it is parallel to the viewing direction.
  static Pose look_at(const Vec3& eye, const Vec3& target, Vec3 up = Vec3::UnitZ()) {
    const Vec3 fwd = (target - eye).normalized();
    if (std::abs(fwd.dot(up.normalized())) > 1.0 - 1e-9) up = Vec3::UnitY();
    const Vec3 right = fwd.cross(up).normalized();
    const Vec3 true_up = right.cross(fwd);
    Pose p;
    p.rotation.col(0) = right;
    p.rotation.col(1) = true_up;
    p.rotation.col(2) = -fwd;
    p.translation = eye;
    return p;
  }
};

struct Pixel {
  int row = 0;
  int col = 0;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double radius = 0.0;
  Pixel pixel;
  double near = 0.0;
  double far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

/// Unit direction in the camera frame for a (sub)pixel position.
inline Vec3 camera_direction(const Intrinsics& k, double x, double y) {
  return Vec3((x - k.cx) / k.fx, -(y - k.cy) / k.fy, -1.0).normalized();
}

inline Ray ray_for_pixel(const Intrinsics& k, const Pose& pose, int row, int col, double near,
                         double far) {
  Ray r;
  r.origin = pose.translation;
  r.direction = (pose.rotation * camera_direction(k, col + 0.5, row + 0.5)).normalized();
  r.radius = k.pixel_radius();
  r.pixel = {row, col};
  r.near = near;
  r.far = far;
  return r;
}

/// One ray per pixel through the pixel center, in row-major pixel order.
inline std::vector<Ray> rays_for_frame(const Intrinsics& k, const Pose& pose, double near,
                                       double far) {
  if (!(near < far)) throw std::invalid_argument("near bound must be below far bound");
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(k.width) * k.height);
  for (int row = 0; row < k.height; ++row)
    for (int col = 0; col < k.width; ++col) rays.push_back(ray_for_pixel(k, pose, row, col, near, far));
  return rays;
}

/// Projects a world point to continuous pixel coordinates (x = col, y = row).
/// Returns false for points behind the camera.
inline bool project(const Intrinsics& k, const Pose& pose, const Vec3& world, double& x,
                    double& y) {
  const Vec3 cam = pose.rotation.transpose() * (world - pose.translation);
  if (cam.z() >= 0.0) return false;
  const double depth = -cam.z();
  x = k.cx + k.fx * cam.x() / depth;
  y = k.cy - k.fy * cam.y() / depth;
  return true;
}

/// Cameras on the upper (z >= 0) hemisphere of the given radius, all looking
/// at the origin. Positions are drawn uniformly over the spherical cap between
/// `min_elevation` and `max_elevation` (radians).
inline std::vector<Pose> hemisphere_poses(int n, double radius, std::uint64_t seed,
                                          double min_elevation = 0.15,
                                          double max_elevation = 1.3) {
  if (n < 1) throw std::invalid_argument("pose count must be at least 1");
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double zlo = std::sin(min_elevation);
  const double zhi = std::sin(max_elevation);
  std::vector<Pose> poses;
  poses.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    // Uniform on the sphere restricted to a z band: z uniform, azimuth uniform.
    const double z = zlo + (zhi - zlo) * unit(rng);
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 eye = radius * Vec3(s * std::cos(phi), s * std::sin(phi), z);
    poses.push_back(Pose::look_at(eye, Vec3::Zero()));
  }
  return poses;
}

}  // namespace depthnerf
