#pragma once

// Synthetic RGB-D data: an analytic ray tracer over spheres, boxes and
// bounded planes gives exact metric depth, an inverse-depth noise model
// perturbs it, and frame sets round-trip through a manifest directory.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "depthnerf/camera.hpp"
#include "depthnerf/image.hpp"
#include "depthnerf/sampling.hpp"

namespace depthnerf {

struct Checker {
  Vec3 color_a{0.9, 0.9, 0.9};
  Vec3 color_b{0.1, 0.1, 0.1};
  double cell = 0.25;  // meters per cell along each world axis
};
struct Solid {
  Vec3 color{0.8, 0.8, 0.8};
};
using Texture = std::variant<Solid, Checker>;

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};
struct AxisBox {
  Vec3 min = -Vec3::Ones();
  Vec3 max = Vec3::Ones();
};
/// Square patch of half-size `extent`, centered at `point`.
struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double extent = 1.0;
};
using Shape = std::variant<Sphere, AxisBox, Plane>;

struct Primitive {
  Shape shape;
  Texture texture;
};

struct Scene {
  std::string name;
  std::vector<Primitive> primitives;
  Vec3 background = Vec3::Zero();
  Vec3 light_dir = Vec3(0.3, 0.5, 0.8).normalized();
  double ambient = 0.25;
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::UnitZ();
};

namespace geometry {

inline std::optional<Hit> intersect(const Sphere& s, const Vec3& o, const Vec3& d) {
  const Vec3 oc = o - s.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  // Stable root pair: q = -b - sign(b)·sq, roots c/q and q.
  const double q = b > 0.0 ? -b - sq : -b + sq;
  double t0 = q;
  double t1 = q != 0.0 ? c / q : q;
  if (t0 > t1) std::swap(t0, t1);
  const double t = t0 > 0.0 ? t0 : t1;
  if (!(t > 0.0)) return std::nullopt;
  return Hit{t, (o + t * d - s.center).normalized()};
}

inline std::optional<Hit> intersect(const AxisBox& b, const Vec3& o, const Vec3& d) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  int axis_in = -1, axis_out = -1;
  for (int k = 0; k < 3; ++k) {
    if (d[k] == 0.0) {
      if (o[k] < b.min[k] || o[k] > b.max[k]) return std::nullopt;
      continue;
    }
    double ta = (b.min[k] - o[k]) / d[k];
    double tb = (b.max[k] - o[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    if (ta > tmin) { tmin = ta; axis_in = k; }
    if (tb < tmax) { tmax = tb; axis_out = k; }
  }
  if (tmax < tmin || tmax <= 0.0) return std::nullopt;
  const bool outside = tmin > 0.0;
  const double t = outside ? tmin : tmax;
  const int axis = outside ? axis_in : axis_out;
  Vec3 n = Vec3::Zero();
  n[axis] = d[axis] > 0.0 ? -1.0 : 1.0;
  if (!outside) n = -n;
  return Hit{t, n};
}

inline void plane_basis(const Vec3& n, Vec3& u, Vec3& v) {
  const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  u = n.cross(helper).normalized();
  v = n.cross(u);
}

inline std::optional<Hit> intersect(const Plane& p, const Vec3& o, const Vec3& d) {
  const Vec3 n = p.normal.normalized();
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = n.dot(p.point - o) / denom;
  if (!(t > 0.0)) return std::nullopt;
  Vec3 u, v;
  plane_basis(n, u, v);
  const Vec3 rel = o + t * d - p.point;
  if (std::abs(rel.dot(u)) > p.extent || std::abs(rel.dot(v)) > p.extent) return std::nullopt;
  return Hit{t, denom < 0.0 ? n : Vec3(-n)};
}

inline std::optional<Hit> intersect(const Shape& s, const Vec3& o, const Vec3& d) {
  return std::visit([&](const auto& prim) { return intersect(prim, o, d); }, s);
}

inline Vec3 albedo(const Texture& tex, const Vec3& p) {
  if (const auto* solid = std::get_if<Solid>(&tex)) return solid->color;
  const auto& ch = std::get<Checker>(tex);
  // Small offset keeps cell boundaries off faces that sit on multiples of the cell size.
  const long parity = static_cast<long>(std::floor((p.x() + 1e-4) / ch.cell)) +
                      static_cast<long>(std::floor((p.y() + 2e-4) / ch.cell)) +
                      static_cast<long>(std::floor((p.z() + 3e-4) / ch.cell));
  return (parity & 1L) ? ch.color_a : ch.color_b;
}

}  // namespace geometry

/// Nearest hit over all primitives, with its primitive index.
inline std::optional<std::pair<Hit, std::size_t>> trace(const Scene& scene, const Vec3& o,
                                                        const Vec3& d) {
  std::optional<std::pair<Hit, std::size_t>> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    auto h = geometry::intersect(scene.primitives[i].shape, o, d);
    if (h && (!best || h->t < best->first.t)) best = std::make_pair(*h, i);
  }
  return best;
}

struct RgbdFrame {
  Image color;  // 3 channels in [0, 1]
  Image depth;  // meters along the unit ray, 0 = hole
  Pose pose;
  Intrinsics intrinsics;
  std::string split = "train";
};

struct Dataset {
  std::string scene;
  Intrinsics intrinsics;
  double near = 2.0;
  double far = 6.0;
  Vec3 background = Vec3::Zero();
  std::vector<RgbdFrame> frames;

  std::vector<std::size_t> indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (split == "all" || frames[i].split == split) out.push_back(i);
    return out;
  }
};

/// Ray-traces color and exact depth for each pose. Misses get the background
/// color and depth 0.
inline std::vector<RgbdFrame> render_scene(const Scene& scene, const std::vector<Pose>& poses,
                                           const Intrinsics& k) {
  if (scene.primitives.empty()) throw std::invalid_argument("scene has no primitives");
  std::vector<RgbdFrame> frames;
  frames.reserve(poses.size());
  for (const Pose& pose : poses) {
    RgbdFrame f{Image(k.width, k.height, 3), Image(k.width, k.height, 1), pose, k, "train"};
    for (int row = 0; row < k.height; ++row)
      for (int col = 0; col < k.width; ++col) {
        const Ray ray = ray_for_pixel(k, pose, row, col, 0.0, 1.0);
        Vec3 c = scene.background;
        double depth = 0.0;
        if (auto hit = trace(scene, ray.origin, ray.direction)) {
          const Vec3 p = ray.at(hit->first.t);
          const Vec3 a = geometry::albedo(scene.primitives[hit->second].texture, p);
          const double lambert = std::max(0.0, hit->first.normal.dot(scene.light_dir));
          c = a * (scene.ambient + (1.0 - scene.ambient) * lambert);
          depth = hit->first.t;
        }
        for (int ch = 0; ch < 3; ++ch) f.color.at(row, col, ch) = c[ch];
        f.depth.at(row, col) = depth;
      }
    frames.push_back(std::move(f));
  }
  return frames;
}

/// Built-in scenes. All fit inside a 1 m ball around the origin.
inline Scene make_scene(const std::string& name) {
  Scene s;
  s.name = name;
  if (name == "cube") {
    Checker tex{Vec3(0.95, 0.75, 0.2), Vec3(0.15, 0.3, 0.8), 0.2};
    s.primitives.push_back({AxisBox{Vec3(-0.6, -0.6, -0.6), Vec3(0.6, 0.6, 0.6)}, tex});
  } else if (name == "plane") {
    Checker tex{Vec3(0.9, 0.9, 0.9), Vec3(0.2, 0.5, 0.3), 0.25};
    s.primitives.push_back({Plane{Vec3::Zero(), Vec3::UnitZ(), 1.0}, tex});
  } else if (name == "spheres") {
    s.primitives.push_back({Plane{Vec3(0, 0, -0.5), Vec3::UnitZ(), 1.0},
                            Checker{Vec3(0.8, 0.8, 0.8), Vec3(0.3, 0.3, 0.3), 0.25}});
    s.primitives.push_back({Sphere{Vec3(0.3, 0.2, 0.0), 0.45}, Solid{Vec3(0.85, 0.2, 0.2)}});
    s.primitives.push_back({AxisBox{Vec3(-0.7, -0.6, -0.5), Vec3(-0.2, -0.1, 0.1)},
                            Checker{Vec3(0.2, 0.8, 0.3), Vec3(0.9, 0.9, 0.2), 0.15}});
  } else {
    throw std::invalid_argument("unknown scene '" + name + "' (expected cube, plane or spheres)");
  }
  return s;
}

struct DatasetSpec {
  std::string scene = "cube";
  int train_views = 8;
  int test_views = 2;
  int resolution = 64;
  double fov_degrees = 25.0;
  double radius = 4.0;
  double near = 2.0;
  double far = 6.0;
  std::uint64_t seed = 0;
};

inline Dataset generate_dataset(const DatasetSpec& spec) {
  const Scene scene = make_scene(spec.scene);
  Dataset ds;
  ds.scene = spec.scene;
  ds.intrinsics = Intrinsics::from_fov(spec.resolution, spec.resolution,
                                       spec.fov_degrees * std::numbers::pi / 180.0);
  ds.near = spec.near;
  ds.far = spec.far;
  ds.background = scene.background;
  const auto poses = hemisphere_poses(spec.train_views + spec.test_views, spec.radius, spec.seed);
  ds.frames = render_scene(scene, poses, ds.intrinsics);
  for (int i = spec.train_views; i < spec.train_views + spec.test_views; ++i)
    ds.frames[static_cast<std::size_t>(i)].split = "test";
  return ds;
}

struct NoiseModel {
  double inv_depth_sigma = 0.01;  // 1/m
  std::uint64_t seed = 0;
};

/// D' = 1/(1/D + η), η ~ N(0, σ²), on valid pixels; holes stay 0. Results
/// are clamped into (0, far]. `stream` separates frames sharing one model.
inline RgbdFrame apply_noise(const RgbdFrame& frame, const NoiseModel& model, double far,
                             std::uint64_t stream = 0) {
  if (!(model.inv_depth_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  RgbdFrame out = frame;
  if (model.inv_depth_sigma == 0.0) return out;
  std::mt19937_64 rng(stream_seed(model.seed, stream, 0x6e6f697365ULL));
  std::normal_distribution<double> eta(0.0, model.inv_depth_sigma);
  for (double& d : out.depth.data) {
    if (!(d > 0.0)) continue;
    const double inv = 1.0 / d + eta(rng);
    d = inv > 1.0 / far ? 1.0 / inv : far;
  }
  return out;
}

inline void apply_noise(Dataset& ds, const NoiseModel& model) {
  for (std::size_t i = 0; i < ds.frames.size(); ++i)
    ds.frames[i] = apply_noise(ds.frames[i], model, ds.far, i);
}

// ---------------------------------------------------------------------------
// Persistence: manifest.json + rgb/####.png + depth/####.pfm

inline nlohmann::json to_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width},
          {"height", k.height}};
}

inline Intrinsics intrinsics_from_json(const nlohmann::json& j) {
  Intrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

/// 4×4 camera-to-world matrix, row-major nested arrays.
inline nlohmann::json to_json(const Pose& p) {
  const Mat4 m = p.matrix();
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  return rows;
}

inline Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() < 3) throw IoError("transform_matrix must be a 4x4 array");
  Mat4 m = Mat4::Identity();
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw IoError("transform_matrix rows need 4 entries");
    for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
  }
  return Pose::from_matrix(m);
}

inline std::string frame_stem(std::size_t i) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "depth");
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const auto& f = ds.frames[i];
    const std::string color_path = "rgb/" + frame_stem(i) + ".png";
    const std::string depth_path = "depth/" + frame_stem(i) + ".pfm";
    write_png(dir / color_path, f.color);
    write_pfm(dir / depth_path, f.depth);
    frames.push_back({{"color_path", color_path},
                      {"depth_path", depth_path},
                      {"split", f.split},
                      {"transform_matrix", to_json(f.pose)}});
  }
  nlohmann::json manifest = {{"scene", ds.scene},
                             {"near", ds.near},
                             {"far", ds.far},
                             {"background", {ds.background[0], ds.background[1], ds.background[2]}},
                             {"intrinsics", to_json(ds.intrinsics)},
                             {"frames", frames}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("missing manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    std::ifstream is(manifest_path);
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unreadable manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.scene = j.value("scene", std::string());
    ds.near = j.at("near").get<double>();
    ds.far = j.at("far").get<double>();
    const auto& bg = j.at("background");
    ds.background = Vec3(bg.at(0).get<double>(), bg.at(1).get<double>(), bg.at(2).get<double>());
    ds.intrinsics = intrinsics_from_json(j.at("intrinsics"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid manifest " + manifest_path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError("invalid intrinsics in " + manifest_path.string() + ": " + e.what());
  }
  if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty())
    throw IoError("manifest lists no frames: " + manifest_path.string());
  for (const auto& jf : j["frames"]) {
    RgbdFrame f;
    f.intrinsics = ds.intrinsics;
    std::string color_path, depth_path;
    try {
      color_path = jf.at("color_path").get<std::string>();
      depth_path = jf.at("depth_path").get<std::string>();
      f.split = jf.value("split", std::string("train"));
      f.pose = pose_from_json(jf.at("transform_matrix"));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("invalid frame entry in " + manifest_path.string() + ": " + e.what());
    }
    if (!fs::exists(dir / color_path)) throw IoError("missing image file: " + (dir / color_path).string());
    if (!fs::exists(dir / depth_path)) throw IoError("missing depth file: " + (dir / depth_path).string());
    f.color = read_png(dir / color_path);
    f.depth = read_pfm(dir / depth_path);
    if (f.color.width != ds.intrinsics.width || f.color.height != ds.intrinsics.height)
      throw IoError("dimension mismatch: " + (dir / color_path).string());
    if (f.depth.width != ds.intrinsics.width || f.depth.height != ds.intrinsics.height ||
        f.depth.channels != 1)
      throw IoError("dimension mismatch: " + (dir / depth_path).string());
    ds.frames.push_back(std::move(f));
  }
  return ds;
}

}  // namespace depthnerf
