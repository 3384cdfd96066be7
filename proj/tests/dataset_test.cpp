#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "depthnerf/dataset.hpp"

using namespace depthnerf;
namespace fs = std::filesystem;

namespace {

double box_sdf(const AxisBox& b, const Vec3& p) {
  const Vec3 c = 0.5 * (b.min + b.max), h = 0.5 * (b.max - b.min);
  const Vec3 q = (p - c).cwiseAbs() - h;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double sphere_sdf(const Sphere& s, const Vec3& p) { return (p - s.center).norm() - s.radius; }

// Sphere tracing against the unbounded union of the scene's boxes and spheres.
double march(const Scene& scene, const Ray& ray) {
  double t = 0.0;
  for (int i = 0; i < 10000 && t < 20.0; ++i) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& prim : scene.primitives) {
      if (auto* b = std::get_if<AxisBox>(&prim.shape)) d = std::min(d, box_sdf(*b, ray.at(t)));
      if (auto* s = std::get_if<Sphere>(&prim.shape)) d = std::min(d, sphere_sdf(*s, ray.at(t)));
    }
    if (d < 1e-9) return t;
    t += d;
  }
  return 0.0;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("depthnerf_dataset_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(RayTracer, CubeDepthMatchesSphereTracing) {
  DatasetSpec spec;
  spec.resolution = 24;
  spec.train_views = 4;
  spec.test_views = 0;
  const Dataset ds = generate_dataset(spec);
  const Scene scene = make_scene("cube");
  std::size_t hits = 0;
  for (const auto& f : ds.frames)
    for (int r = 0; r < ds.intrinsics.height; ++r)
      for (int c = 0; c < ds.intrinsics.width; ++c) {
        const double ref = march(scene, ray_for_pixel(ds.intrinsics, f.pose, r, c, 0, 1));
        const double got = f.depth.at(r, c);
        if (ref == 0.0) {
          EXPECT_EQ(got, 0.0);
        } else {
          ++hits;
          EXPECT_NEAR(got, ref, 2e-4);
        }
      }
  EXPECT_GT(hits, 100u);
}

TEST(RayTracer, SpheresSceneAgreesWhereMarchingApplies) {
  Scene scene = make_scene("spheres");
  scene.primitives.erase(scene.primitives.begin());  // drop the bounded plane
  const Intrinsics k = Intrinsics::from_fov(20, 20, 0.7);
  const auto frames = render_scene(scene, hemisphere_poses(3, 4.0, 2), k);
  for (const auto& f : frames)
    for (int r = 0; r < k.height; ++r)
      for (int c = 0; c < k.width; ++c) {
        const double ref = march(scene, ray_for_pixel(k, f.pose, r, c, 0, 1));
        EXPECT_NEAR(f.depth.at(r, c), ref, ref == 0.0 ? 0.0 : 2e-4);
      }
}

TEST(RayTracer, PlaneSeenHeadOnHasExactDepth) {
  Scene scene = make_scene("plane");
  const Intrinsics k = Intrinsics::from_fov(9, 9, 0.3);
  const Pose pose = Pose::look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY());
  const auto frames = render_scene(scene, {pose}, k);
  EXPECT_EQ(frames[0].depth.at(4, 4), 2.0);
  const Ray corner = ray_for_pixel(k, pose, 0, 0, 0, 1);
  EXPECT_NEAR(frames[0].depth.at(0, 0), 2.0 / -corner.direction.z(), 1e-12);
}

TEST(RayTracer, MissesGetBackground) {
  Scene scene = make_scene("cube");
  scene.background = Vec3(0.1, 0.2, 0.3);
  const Intrinsics k = Intrinsics::from_fov(5, 5, 0.2);
  const auto frames = render_scene(scene, {Pose::look_at(Vec3(0, 0, 4), Vec3(5, 0, 4))}, k);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      EXPECT_EQ(frames[0].depth.at(r, c), 0.0);
      EXPECT_EQ(frames[0].color.at(r, c, 2), 0.3);
    }
}

TEST(Noise, InverseDepthStdMatches) {
  RgbdFrame f;
  f.color = Image(1000, 1000, 3);
  f.depth = Image(1000, 1000, 1);
  for (std::size_t i = 0; i < f.depth.data.size(); ++i) f.depth.data[i] = i % 10 == 0 ? 0.0 : 3.0;
  const RgbdFrame noisy = apply_noise(f, {0.01, 3}, 6.0);
  double s = 0, ss = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < f.depth.data.size(); ++i) {
    if (i % 10 == 0) {
      EXPECT_EQ(noisy.depth.data[i], 0.0);
      continue;
    }
    const double e = 1.0 / noisy.depth.data[i] - 1.0 / 3.0;
    s += e;
    ss += e * e;
    ++n;
  }
  const double mean = s / n, sd = std::sqrt(ss / n - mean * mean);
  EXPECT_EQ(n, 900000u);
  EXPECT_NEAR(sd, 0.01, 1e-4);
  EXPECT_NEAR(mean, 0.0, 5.0 * 0.01 / std::sqrt(static_cast<double>(n)));
}

TEST(Noise, ZeroSigmaIsIdentityAndSeedsAreStable) {
  DatasetSpec spec;
  spec.resolution = 16;
  spec.train_views = 2;
  spec.test_views = 0;
  const Dataset ds = generate_dataset(spec);
  EXPECT_EQ(apply_noise(ds.frames[0], {0.0, 1}, 6.0).depth.data, ds.frames[0].depth.data);
  EXPECT_EQ(apply_noise(ds.frames[0], {0.01, 1}, 6.0).depth.data,
            apply_noise(ds.frames[0], {0.01, 1}, 6.0).depth.data);
  EXPECT_NE(apply_noise(ds.frames[0], {0.01, 1}, 6.0, 0).depth.data,
            apply_noise(ds.frames[0], {0.01, 1}, 6.0, 1).depth.data);
  EXPECT_THROW(apply_noise(ds.frames[0], {-1.0, 1}, 6.0), std::invalid_argument);
}

TEST(Noise, ResultsStayWithinFar) {
  RgbdFrame f;
  f.color = Image(50, 50, 3);
  f.depth = Image(50, 50, 1);
  for (double& d : f.depth.data) d = 5.9;
  for (double d : apply_noise(f, {0.5, 1}, 6.0).depth.data) {
    EXPECT_GT(d, 0.0);
    EXPECT_LE(d, 6.0);
  }
}

TEST(DatasetSplit, TrainAndTestViews) {
  DatasetSpec spec;
  spec.resolution = 8;
  spec.train_views = 5;
  spec.test_views = 3;
  const Dataset ds = generate_dataset(spec);
  EXPECT_EQ(ds.indices("train").size(), 5u);
  EXPECT_EQ(ds.indices("test"), (std::vector<std::size_t>{5, 6, 7}));
  EXPECT_EQ(ds.indices("all").size(), 8u);
}

TEST(DatasetIo, RoundTrip) {
  DatasetSpec spec;
  spec.scene = "spheres";
  spec.resolution = 12;
  spec.train_views = 2;
  spec.test_views = 1;
  const Dataset ds = generate_dataset(spec);
  const fs::path dir = temp_dir("roundtrip");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  ASSERT_EQ(back.frames.size(), 3u);
  EXPECT_EQ(back.scene, "spheres");
  EXPECT_EQ(back.frames[2].split, "test");
  EXPECT_EQ(back.intrinsics.fx, ds.intrinsics.fx);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(back.frames[i].pose.matrix().isApprox(ds.frames[i].pose.matrix(), 1e-15));
    for (std::size_t p = 0; p < ds.frames[i].depth.data.size(); ++p)
      EXPECT_EQ(back.frames[i].depth.data[p], static_cast<float>(ds.frames[i].depth.data[p]));
    for (std::size_t p = 0; p < ds.frames[i].color.data.size(); ++p)
      EXPECT_NEAR(back.frames[i].color.data[p], ds.frames[i].color.data[p], 0.5 / 255.0 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, ErrorsNameTheFile) {
  const fs::path dir = temp_dir("errors");
  try {
    load_dataset(dir);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.json"), std::string::npos);
  }
  DatasetSpec spec;
  spec.resolution = 8;
  spec.train_views = 1;
  spec.test_views = 0;
  save_dataset(generate_dataset(spec), dir);
  fs::remove(dir / "depth" / "0000.pfm");
  try {
    load_dataset(dir);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("0000.pfm"), std::string::npos);
  }
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(load_dataset(dir), IoError);
  fs::remove_all(dir);
}

TEST(DatasetIo, CorruptImageRejected) {
  const fs::path dir = temp_dir("corrupt");
  DatasetSpec spec;
  spec.resolution = 8;
  spec.train_views = 1;
  spec.test_views = 0;
  save_dataset(generate_dataset(spec), dir);
  std::ofstream(dir / "rgb" / "0000.png", std::ios::binary) << "garbage";
  EXPECT_THROW(load_dataset(dir), IoError);
  fs::remove_all(dir);
}

TEST(Scenes, UnknownNameThrows) { EXPECT_THROW(make_scene("teapot"), std::invalid_argument); }
