// depthnerf: generate | train | render | eval | experiments run <name>
//
// Exit codes: 0 ok, 2 usage or config error, 3 data error, 4 divergence.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "depthnerf/checkpoint.hpp"
#include "depthnerf/config.hpp"
#include "depthnerf/dataset.hpp"
#include "depthnerf/evaluation.hpp"
#include "depthnerf/experiments.hpp"
#include "depthnerf/training.hpp"

namespace fs = std::filesystem;
using namespace depthnerf;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int default_threads() {
  if (const char* env = std::getenv("DEPTHNERF_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("DEPTHNERF_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void require_dir(const std::string& path, const std::string& what) {
  if (!fs::is_directory(path)) throw UsageError(what + " not found: " + path);
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  DatasetSpec spec;
  std::string out;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 1;
};

void cmd_generate(const GenerateArgs& a) {
  Dataset ds = generate_dataset(a.spec);
  if (a.noise_sigma > 0.0) apply_noise(ds, NoiseModel{a.noise_sigma, a.noise_seed});
  save_dataset(ds, a.out);
  std::cout << "wrote " << ds.frames.size() << " frames to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset, config, out, resume;
  std::optional<std::string> sampler;
  std::optional<int> epochs, threads, n_samples;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool eval_with_depth = false;
};

void cmd_train(const TrainArgs& a) {
  require_dir(a.dataset, "dataset");
  TrainConfig cfg;
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    resume = load_checkpoint(a.resume);
    cfg = resume->config;
  }
  if (!a.config.empty()) {
    require_file(a.config, "config");
    apply_json(cfg, read_json_file(a.config));
  }
  try {
    if (a.sampler) cfg.sampler.strategy = sampling_strategy_from_string(*a.sampler);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.n_samples) cfg.sampler.n_samples = *a.n_samples;
  if (a.seed) cfg.seed = *a.seed;
  cfg.threads = a.threads ? *a.threads : default_threads();
  if (a.deterministic) cfg.deterministic = true;
  if (a.eval_with_depth) cfg.eval_with_depth = true;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  const Dataset ds = load_dataset(a.dataset);
  const fs::path out(a.out);
  fs::create_directories(out / "checkpoints");
  write_json(out / "config.json", to_json(cfg));

  TrainState state = resume ? std::move(resume->state) : init_train_state(cfg);
  if (resume && !(state.params.config.width == cfg.field.width &&
                  state.params.config.ipe_bands == cfg.field.ipe_bands &&
                  state.params.config.dir_bands == cfg.field.dir_bands &&
                  state.params.config.color_width == cfg.field.color_width))
    throw ConfigError("field shape settings differ from the resumed checkpoint");
  std::ofstream progress(out / "progress.jsonl", resume ? std::ios::app : std::ios::trunc);
  TrainCallbacks cb;
  cb.on_step = [&](const StepReport& s) {
    const nlohmann::json j{{"epoch", s.epoch}, {"iter", s.iteration}, {"l_p", s.l_p},
                           {"l_g", s.l_g},     {"lr", s.lr},          {"wall_time", s.wall_time}};
    std::cout << j.dump() << "\n";
    progress << j.dump() << "\n";
  };
  cb.on_epoch = [&](const TrainState& s) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d.ckpt", s.epoch);
    save_checkpoint(out / "checkpoints" / name, cfg, s);
    save_checkpoint(out / "final.ckpt", cfg, s);
    progress.flush();
  };
  train(ds, cfg, state, cb);
  if (state.epoch == cfg.epochs && !fs::exists(out / "final.ckpt"))
    save_checkpoint(out / "final.ckpt", cfg, state);
}

// ---------------------------------------------------------------------------

struct PoseSource {
  Intrinsics intrinsics;
  std::vector<Pose> poses;
  std::vector<const Image*> gt_depth;  // null when unavailable
  std::optional<Dataset> dataset;
  Vec3 background = Vec3::Zero();
};

/// A dataset directory, or a JSON file {intrinsics, poses: [4x4 ...]}.
PoseSource load_poses(const std::string& path) {
  PoseSource src;
  if (fs::is_directory(path)) {
    src.dataset = load_dataset(path);
    src.intrinsics = src.dataset->intrinsics;
    src.background = src.dataset->background;
    for (const auto& f : src.dataset->frames) {
      src.poses.push_back(f.pose);
      src.gt_depth.push_back(&f.depth);
    }
    return src;
  }
  require_file(path, "pose source");
  nlohmann::json j;
  try {
    std::ifstream is(path);
    j = nlohmann::json::parse(is);
    src.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    if (j.contains("background"))
      src.background = Vec3(j["background"][0].get<double>(), j["background"][1].get<double>(),
                            j["background"][2].get<double>());
    for (const auto& p : j.at("poses")) {
      src.poses.push_back(pose_from_json(p));
      src.gt_depth.push_back(nullptr);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid pose file " + path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError("invalid pose file " + path + ": " + e.what());
  }
  return src;
}

struct RenderArgs {
  std::string checkpoint, poses, out;
  bool eval_with_depth = false;
};

void cmd_render(const RenderArgs& a) {
  require_file(a.checkpoint, "checkpoint");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const PoseSource src = load_poses(a.poses);
  const fs::path out(a.out);
  fs::create_directories(out);
  const bool with_depth = a.eval_with_depth || ck.config.eval_with_depth;
  for (std::size_t i = 0; i < src.poses.size(); ++i) {
    Dataset shell;
    shell.background = src.background;
    RenderOptions o = eval_render_options(ck.config, shell, with_depth, final_epoch(ck.config));
    o.seed = stream_seed(o.seed, i);
    if (with_depth) o.guide_depth = src.gt_depth[i];
    const RenderedImage r = render_image(ck.state.params, src.intrinsics, src.poses[i], o);
    const std::string stem = frame_stem(i);
    write_png(out / (stem + "_color.png"), r.color);
    write_pfm(out / (stem + "_depth.pfm"), r.depth);
    if (src.gt_depth[i]) {
      Image err(r.depth.width, r.depth.height, 1);
      double max_err = 0.0;
      for (std::size_t p = 0; p < err.pixel_count(); ++p) {
        const double gt = src.gt_depth[i]->data[p];
        err.data[p] = gt > 0.0 ? std::abs(r.depth.data[p] - gt) : 0.0;
        max_err = std::max(max_err, err.data[p]);
      }
      write_png(out / (stem + "_error.png"), heat_map(err, max_err));
    }
  }
  std::cout << "rendered " << src.poses.size() << " poses to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, dataset, out, split = "test";
  bool eval_with_depth = false;
};

void cmd_eval(const EvalArgs& a) {
  require_file(a.checkpoint, "checkpoint");
  require_dir(a.dataset, "dataset");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.dataset);
  const bool with_depth = a.eval_with_depth || ck.config.eval_with_depth;
  const auto frames = eval_frames(ds, a.split);
  const EvalReport report =
      evaluate(ck.state.params, ds, ck.config, frames, with_depth, final_epoch(ck.config)).report;
  nlohmann::json j = to_json(report);
  j["split"] = a.split;
  j["eval_with_depth"] = with_depth;
  if (!a.out.empty()) {
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_json(out, j);
  }
  std::cout << metrics_table(report);
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::string name, out, dataset, config;
  DatasetSpec spec;
  std::optional<int> epochs, threads;
  double noise_sigma = 0.01;
  bool deterministic = false;
};

void cmd_experiment(const ExperimentArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "config");
    apply_json(cfg, read_json_file(a.config));
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.threads = a.threads ? *a.threads : default_threads();
  if (a.deterministic) cfg.deterministic = true;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto dataset = [&] {
    if (a.dataset.empty()) return generate_dataset(a.spec);
    require_dir(a.dataset, "dataset");
    return load_dataset(a.dataset);
  };
  RunOptions opt;
  opt.on_step = [](const std::string& run, const StepReport& s) {
    std::cout << nlohmann::json{{"run", run},  {"epoch", s.epoch}, {"iter", s.iteration},
                                {"l_p", s.l_p}, {"l_g", s.l_g},     {"wall_time", s.wall_time}}
                     .dump()
              << "\n";
  };
  std::vector<RunResult> runs;
  if (a.name == "sampling") runs = exp_sampling_ablation(dataset(), cfg, opt);
  else if (a.name == "samples") runs = exp_sample_count(dataset(), cfg, {16, 64, 128}, opt);
  else if (a.name == "views") runs = exp_view_count(a.spec, cfg, {8, 30, 100}, opt);
  else if (a.name == "noise") runs = exp_noise(dataset(), cfg, a.noise_sigma, 7, opt);
  else throw UsageError("unknown experiment '" + a.name + "' (sampling, samples, views, noise)");
  write_results(a.out, a.name, runs);
  std::cout << "train views\n" << results_table(runs, false);
  std::cout << "test views\n" << results_table(runs, true);
  if (a.name == "samples")
    for (const auto& r : runs) std::cout << r.name << " wall_time " << r.wall_time << " s\n";
}

void add_spec_options(CLI::App* app, DatasetSpec& spec) {
  app->add_option("--scene", spec.scene, "cube, plane or spheres")->capture_default_str();
  app->add_option("--views", spec.train_views, "training views")->capture_default_str();
  app->add_option("--test-views", spec.test_views, "held-out views")->capture_default_str();
  app->add_option("--res", spec.resolution, "image width and height")->capture_default_str();
  app->add_option("--fov", spec.fov_degrees, "horizontal field of view, degrees")->capture_default_str();
  app->add_option("--seed", spec.seed, "pose and noise seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-supervised radiance field training on synthetic RGB-D scenes"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "ray-trace a synthetic RGB-D dataset");
  add_spec_options(generate, gen.spec);
  generate->add_option("--out", gen.out, "output directory")->required();
  generate->add_option("--noise-sigma", gen.noise_sigma, "inverse-depth noise, 1/m");
  generate->add_option("--noise-seed", gen.noise_seed);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "fit a field to a dataset");
  train_cmd->add_option("--dataset", tr.dataset)->required();
  train_cmd->add_option("--config", tr.config, "flat JSON config");
  train_cmd->add_option("--out", tr.out)->required();
  train_cmd->add_option("--sampler", tr.sampler, "uniform, stratified, gaussian or adaptive");
  train_cmd->add_option("--resume", tr.resume, "checkpoint to continue from");
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--n-samples", tr.n_samples);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--threads", tr.threads);
  train_cmd->add_flag("--deterministic", tr.deterministic, "single worker thread");
  train_cmd->add_flag("--eval-with-depth", tr.eval_with_depth);

  RenderArgs rd;
  auto* render = app.add_subcommand("render", "render color, depth and error maps");
  render->add_option("--checkpoint", rd.checkpoint)->required();
  render->add_option("--poses", rd.poses, "dataset directory or pose JSON")->required();
  render->add_option("--out", rd.out)->required();
  render->add_flag("--eval-with-depth", rd.eval_with_depth);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  eval->add_option("--checkpoint", ev.checkpoint)->required();
  eval->add_option("--dataset", ev.dataset)->required();
  eval->add_option("--out", ev.out, "report JSON path");
  eval->add_option("--split", ev.split)->capture_default_str();
  eval->add_flag("--eval-with-depth", ev.eval_with_depth);

  ExperimentArgs ex;
  auto* experiments = app.add_subcommand("experiments", "scripted sweeps");
  experiments->require_subcommand(1);
  auto* run = experiments->add_subcommand("run", "run one experiment");
  run->add_option("name", ex.name, "sampling, samples, views or noise")->required();
  run->add_option("--out", ex.out)->required();
  run->add_option("--dataset", ex.dataset, "existing dataset; otherwise one is generated");
  run->add_option("--config", ex.config);
  run->add_option("--epochs", ex.epochs);
  run->add_option("--threads", ex.threads);
  run->add_option("--noise-sigma", ex.noise_sigma)->capture_default_str();
  run->add_flag("--deterministic", ex.deterministic);
  add_spec_options(run, ex.spec);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*generate) cmd_generate(gen);
    else if (*train_cmd) cmd_train(tr);
    else if (*render) cmd_render(rd);
    else if (*eval) cmd_eval(ev);
    else if (*run) cmd_experiment(ex);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
