#pragma once

// Scripted training sweeps. Each run trains from scratch, scores the train
// and test views and records wall time plus per-epoch mean losses.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthnerf/checkpoint.hpp"
#include "depthnerf/config.hpp"
#include "depthnerf/dataset.hpp"
#include "depthnerf/evaluation.hpp"
#include "depthnerf/training.hpp"

namespace depthnerf {

struct EpochLoss {
  double l_p = 0.0;  // mean per ray
  double l_g = 0.0;
  double total = 0.0;
};

struct RunResult {
  std::string name;
  TrainConfig config;
  EvalReport train_report;
  EvalReport test_report;
  double wall_time = 0.0;  // training only, seconds
  std::vector<EpochLoss> epochs;
  FieldParams params;
};

struct RunOptions {
  /// Score with the training sampler guided by ground-truth depth.
  bool eval_with_depth = true;
  bool score_test = true;
  std::function<void(const std::string&, const StepReport&)> on_step;
};

inline RunResult run_training(const std::string& name, const Dataset& ds, const TrainConfig& cfg,
                              const RunOptions& opt = {}) {
  RunResult r;
  r.name = name;
  r.config = cfg;
  TrainState state = init_train_state(cfg);
  const std::size_t rays = training_rays(ds).size();
  EpochLoss acc;
  TrainCallbacks cb;
  cb.on_step = [&](const StepReport& s) {
    acc.l_p += s.l_p;
    acc.l_g += s.l_g;
    acc.total += s.total;
    if (opt.on_step) opt.on_step(name, s);
  };
  cb.on_epoch = [&](const TrainState&) {
    const double n = static_cast<double>(rays);
    r.epochs.push_back({acc.l_p / n, acc.l_g / n, acc.total / n});
    acc = {};
  };
  const auto t0 = std::chrono::steady_clock::now();
  train(ds, cfg, state, cb);
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.params = std::move(state.params);
  const double epoch = final_epoch(cfg);
  r.train_report = evaluate(r.params, ds, cfg, ds.indices("train"), opt.eval_with_depth, epoch).report;
  if (opt.score_test && !ds.indices("test").empty())
    r.test_report = evaluate(r.params, ds, cfg, ds.indices("test"), opt.eval_with_depth, epoch).report;
  return r;
}

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& e : r.epochs) losses.push_back({{"l_p", e.l_p}, {"l_g", e.l_g}, {"total", e.total}});
  return {{"name", r.name},
          {"wall_time", r.wall_time},
          {"train", to_json(r.train_report)},
          {"test", to_json(r.test_report)},
          {"epoch_losses", losses}};
}

/// Writes results.json and configs/<run>.json under `dir`.
inline void write_results(const std::filesystem::path& dir, const std::string& experiment,
                          const std::vector<RunResult>& runs) {
  std::filesystem::create_directories(dir / "configs");
  nlohmann::json j{{"experiment", experiment}, {"runs", nlohmann::json::array()}};
  for (const auto& r : runs) {
    j["runs"].push_back(to_json(r));
    std::ofstream(dir / "configs" / (r.name + ".json")) << to_json(r.config).dump(2) << "\n";
  }
  std::ofstream os(dir / "results.json");
  if (!os) throw IoError("cannot write " + (dir / "results.json").string());
  os << j.dump(2) << "\n";
}

inline std::string results_table(const std::vector<RunResult>& runs, bool test) {
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& r : runs) rows.emplace_back(r.name, test ? r.test_report : r.train_report);
  return metrics_table(rows);
}

inline std::vector<RunResult> exp_sampling_ablation(const Dataset& ds, TrainConfig base,
                                                    const RunOptions& opt = {}) {
  std::vector<RunResult> out;
  for (SamplingStrategy s : {SamplingStrategy::Uniform, SamplingStrategy::StratifiedLocal,
                             SamplingStrategy::GaussianLocal, SamplingStrategy::Adaptive}) {
    TrainConfig c = base;
    c.sampler.strategy = s;
    out.push_back(run_training(to_string(s), ds, c, opt));
  }
  return out;
}

inline std::vector<RunResult> exp_sample_count(const Dataset& ds, TrainConfig base,
                                               const std::vector<int>& counts = {16, 64, 128},
                                               const RunOptions& opt = {}) {
  std::vector<RunResult> out;
  for (int n : counts) {
    TrainConfig c = base;
    c.sampler.n_samples = n;
    out.push_back(run_training("samples_" + std::to_string(n), ds, c, opt));
  }
  return out;
}

inline std::vector<RunResult> exp_view_count(DatasetSpec spec, TrainConfig base,
                                             const std::vector<int>& views = {8, 30, 100},
                                             const RunOptions& opt = {}) {
  std::vector<RunResult> out;
  for (int v : views) {
    spec.train_views = v;
    const Dataset ds = generate_dataset(spec);
    out.push_back(run_training("views_" + std::to_string(v), ds, base, opt));
  }
  return out;
}

/// Clean run and a run on inverse-depth-noised depth; both scored against
/// the clean ground truth. The noisy run is guided by its noisy depth.
inline std::vector<RunResult> exp_noise(const Dataset& clean, TrainConfig base, double sigma = 0.01,
                                        std::uint64_t noise_seed = 7, const RunOptions& opt = {}) {
  std::vector<RunResult> out;
  out.push_back(run_training("clean", clean, base, opt));
  Dataset noisy = clean;
  apply_noise(noisy, NoiseModel{sigma, noise_seed});
  RunResult r = run_training("noisy", noisy, base, opt);
  const double epoch = final_epoch(base);
  r.train_report =
      evaluate(r.params, clean, base, clean.indices("train"), opt.eval_with_depth, epoch, false, &noisy).report;
  if (opt.score_test && !clean.indices("test").empty())
    r.test_report =
        evaluate(r.params, clean, base, clean.indices("test"), opt.eval_with_depth, epoch, false, &noisy).report;
  out.push_back(std::move(r));
  return out;
}

}  // namespace depthnerf
