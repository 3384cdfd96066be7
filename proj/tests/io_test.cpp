#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "depthnerf/checkpoint.hpp"
#include "depthnerf/config.hpp"
#include "depthnerf/image.hpp"

using namespace depthnerf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("depthnerf_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DEPTHNERF_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kTinyConfig =
    R"({"width": 8, "color_width": 4, "ipe_bands": 3, "dir_bands": 2, "n_samples": 4,
        "batch_rays": 64, "epochs": 2})";

TrainState small_state(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.field.width = 6;
  cfg.field.color_width = 4;
  cfg.seed = seed;
  TrainState s = init_train_state(cfg);
  s.epoch = 3;
  s.iteration = 42;
  s.adam.step = 42;
  for (std::size_t i = 0; i < s.adam.m.size(); ++i) {
    s.adam.m[i].values()[0] = 0.25 * (i + 1);
    s.adam.v[i].values()[0] = 1e-9 * (i + 1);
  }
  return s;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  TrainConfig c;
  c.sampler.strategy = SamplingStrategy::GaussianLocal;
  c.sampler.n_samples = 32;
  c.lr = 1e-3;
  c.variance_weight_detached = false;
  c.ipe_attenuation = IpeAttenuation::Literal;
  const TrainConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, UnknownKeyNamed) {
  try {
    config_from_json(nlohmann::json{{"lr", 1e-3}, {"learning_rate", 1e-3}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(Config, BadValuesRejected) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"epochs", "ten"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"sampler", "importance"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, FileErrors) {
  const fs::path dir = scratch("config");
  EXPECT_THROW(read_json_file((dir / "absent.json").string()), IoError);
  write_text(dir / "bad.json", "{ nope");
  EXPECT_THROW(read_json_file((dir / "bad.json").string()), ConfigError);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsExact) {
  const fs::path dir = scratch("ckpt");
  TrainConfig cfg;
  cfg.field.width = 6;
  cfg.field.color_width = 4;
  cfg.sampler.n_samples = 24;
  const TrainState s = small_state(9);
  save_checkpoint(dir / "a.ckpt", cfg, s);
  const Checkpoint c = load_checkpoint(dir / "a.ckpt");
  EXPECT_TRUE(c.state.params == s.params);
  EXPECT_EQ(c.state.epoch, 3);
  EXPECT_EQ(c.state.iteration, 42);
  EXPECT_EQ(c.state.adam.step, 42);
  for (std::size_t i = 0; i < s.adam.m.size(); ++i) {
    EXPECT_EQ(c.state.adam.m[i], s.adam.m[i]);
    EXPECT_EQ(c.state.adam.v[i], s.adam.v[i]);
  }
  EXPECT_EQ(to_json(c.config), to_json(cfg));
  save_checkpoint(dir / "b.ckpt", c.config, c.state);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "a.ckpt.tmp"));
  fs::remove_all(dir);
}

TEST(Checkpoint, FutureVersionAndCorruptionRejected) {
  const fs::path dir = scratch("ckpt_bad");
  TrainConfig cfg;
  cfg.field.width = 6;
  cfg.field.color_width = 4;
  save_checkpoint(dir / "a.ckpt", cfg, small_state(1));
  std::string bytes = slurp(dir / "a.ckpt");
  std::string future = bytes;
  future[4] = 2;
  std::ofstream(dir / "future.ckpt", std::ios::binary) << future;
  try {
    load_checkpoint(dir / "future.ckpt");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), IoError);
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << "XXXX" + bytes.substr(4);
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST(Pfm, RoundTripAndHeader) {
  const fs::path dir = scratch("pfm");
  Image img(3, 2, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.5 * i + 1.25;
  write_pfm(dir / "d.pfm", img);
  const std::string bytes = slurp(dir / "d.pfm");
  EXPECT_EQ(bytes.substr(0, 3), "Pf\n");
  EXPECT_NE(bytes.find("-1"), std::string::npos);
  const Image back = read_pfm(dir / "d.pfm");
  EXPECT_EQ(back.data, img.data);
  fs::remove_all(dir);
}

TEST(Png, QuantizesToEightBits) {
  const fs::path dir = scratch("png");
  Image img(4, 3, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = (i % 17) / 16.0;
  write_png(dir / "c.png", img);
  const Image back = read_png(dir / "c.png");
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255 + 1e-12);
  EXPECT_THROW(read_png(dir / "none.png"), IoError);
  fs::remove_all(dir);
}

TEST(Cli, UsageErrors) {
  const fs::path dir = scratch("cli_usage");
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("train --dataset " + (dir / "missing").string() + " --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run_cli("generate --scene teapot --out " + (dir / "g").string()), 2);
  EXPECT_EQ(run_cli("--help"), 0);
  fs::remove_all(dir);
}

TEST(Cli, DataErrors) {
  const fs::path dir = scratch("cli_data");
  fs::create_directories(dir / "empty");
  EXPECT_EQ(run_cli("train --dataset " + (dir / "empty").string() + " --out " + (dir / "o").string()), 3);
  std::ofstream(dir / "bad.ckpt") << "junk";
  ASSERT_EQ(run_cli("generate --res 12 --views 1 --test-views 0 --out " + (dir / "ds").string()), 0);
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "bad.ckpt").string() + " --dataset " + (dir / "ds").string()), 3);
  fs::remove_all(dir);
}

TEST(Cli, ConfigErrors) {
  const fs::path dir = scratch("cli_config");
  ASSERT_EQ(run_cli("generate --res 12 --views 1 --test-views 0 --out " + (dir / "ds").string()), 0);
  write_text(dir / "cfg.json", R"({"n_sample": 8})");
  EXPECT_EQ(run_cli("train --dataset " + (dir / "ds").string() + " --config " + (dir / "cfg.json").string() +
                    " --out " + (dir / "o").string()),
            2);
  write_text(dir / "cfg.json", R"({"lr": -1})");
  EXPECT_EQ(run_cli("train --dataset " + (dir / "ds").string() + " --config " + (dir / "cfg.json").string() +
                    " --out " + (dir / "o").string()),
            2);
  EXPECT_EQ(run_cli("train --dataset " + (dir / "ds").string() + " --sampler importance --out " +
                    (dir / "o").string()),
            2);
  fs::remove_all(dir);
}

TEST(Cli, GenerateIsDeterministic) {
  const fs::path dir = scratch("cli_gen");
  for (const char* name : {"a", "b"})
    ASSERT_EQ(run_cli("generate --scene spheres --res 16 --views 2 --test-views 1 --seed 4 --noise-sigma 0.01 --out " +
                      (dir / name).string()),
              0);
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir / "a");
    EXPECT_EQ(slurp(entry.path()), slurp(dir / "b" / rel)) << rel;
  }
  fs::remove_all(dir);
}

TEST(Cli, TrainRenderEvalAndResume) {
  const fs::path dir = scratch("cli_train");
  const std::string ds = (dir / "ds").string();
  ASSERT_EQ(run_cli("generate --res 12 --views 2 --test-views 1 --out " + ds), 0);
  write_text(dir / "cfg.json", kTinyConfig);
  const std::string common = " --dataset " + ds + " --config " + (dir / "cfg.json").string() + " --deterministic";
  ASSERT_EQ(run_cli("train" + common + " --out " + (dir / "full").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "full" / "config.json"));
  EXPECT_TRUE(fs::exists(dir / "full" / "checkpoints" / "epoch_0001.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "full" / "checkpoints" / "epoch_0002.ckpt"));

  std::ifstream progress(dir / "full" / "progress.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(progress, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "iter", "l_p", "l_g", "lr", "wall_time"}) EXPECT_TRUE(j.contains(key)) << key;
    ++lines;
  }
  EXPECT_EQ(lines, 2 * ((2 * 144 + 63) / 64));

  ASSERT_EQ(run_cli("train" + common + " --epochs 1 --out " + (dir / "half").string()), 0);
  ASSERT_EQ(run_cli("train" + common + " --epochs 2 --resume " +
                    (dir / "half" / "final.ckpt").string() + " --out " + (dir / "half").string()),
            0);
  EXPECT_EQ(slurp(dir / "full" / "final.ckpt"), slurp(dir / "half" / "final.ckpt"));

  const std::string ckpt = (dir / "full" / "final.ckpt").string();
  ASSERT_EQ(run_cli("render --checkpoint " + ckpt + " --poses " + ds + " --out " + (dir / "render").string()), 0);
  for (const char* f : {"0000_color.png", "0000_depth.pfm", "0000_error.png", "0002_color.png"})
    EXPECT_TRUE(fs::exists(dir / "render" / f)) << f;
  EXPECT_EQ(read_png(dir / "render" / "0000_color.png").width, 12);

  nlohmann::json poses{{"intrinsics", {{"fx", 20.0}, {"fy", 20.0}, {"cx", 5.0}, {"cy", 4.0}, {"width", 10}, {"height", 8}}},
                       {"poses", {to_json(Pose::look_at(Vec3(0, -4, 1), Vec3::Zero()))}}};
  write_text(dir / "poses.json", poses.dump());
  ASSERT_EQ(run_cli("render --checkpoint " + ckpt + " --poses " + (dir / "poses.json").string() + " --out " +
                    (dir / "render2").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "render2" / "0000_color.png"));
  EXPECT_FALSE(fs::exists(dir / "render2" / "0000_error.png"));

  ASSERT_EQ(run_cli("eval --checkpoint " + ckpt + " --dataset " + ds + " --out " + (dir / "eval.json").string()), 0);
  const auto report = nlohmann::json::parse(slurp(dir / "eval.json"));
  EXPECT_EQ(report["frames"].size(), 1u);
  EXPECT_EQ(report["split"], "test");
  fs::remove_all(dir);
}
