// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
//
//   acceptance [--work-dir DIR] [--only 1,2,7]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>

#include "depthnerf/experiments.hpp"
#include "gradcheck.hpp"
#include "reference_ssim.hpp"

using namespace depthnerf;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  std::printf("%s  %2d  %s: %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "  .. %s\n", msg.c_str());
  std::fflush(stderr);
}

int hardware_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// 1. Gradients

double per_op_max_error() {
  using namespace ad;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.5, 1.5), pos(0.2, 2.0);
  auto rand = [&](std::size_t r, std::size_t c, bool positive = false) {
    Matrix m(r, c);
    for (double& v : m.values()) v = positive ? pos(rng) : u(rng);
    return m;
  };
  using F = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
  const Matrix w = rand(3, 4), w_col = rand(3, 1);
  auto weighted = [&](Tape& t, const Tensor& x) {
    return sum(mul(x, t.constant(w)));
  };
  std::vector<std::pair<F, std::vector<Matrix>>> cases = {
      {[&](Tape& t, auto& x) { return weighted(t, add(x[0], x[1])); }, {rand(3, 4), rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, sub(x[0], x[1])); }, {rand(3, 4), rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, mul(x[0], x[1])); }, {rand(3, 4), rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, neg(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, exp(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, sin(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, cos(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, relu(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, sigmoid(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, softplus(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, rsqrt(x[0])); }, {rand(3, 4, true)}},
      {[&](Tape& t, auto& x) { return weighted(t, abs(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, square(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, matmul(x[0], x[1])); }, {rand(3, 5), rand(5, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, affine(x[0], x[1], x[2])); }, {rand(3, 5), rand(5, 4), rand(1, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, cumsum_exclusive(x[0])); }, {rand(3, 4)}},
      {[&](Tape& t, auto& x) { return weighted(t, concat(x[0], x[1])); }, {rand(3, 1), rand(3, 3)}},
      {[&](Tape& t, auto& x) { return weighted(t, reshape(x[0], 3, 4)); }, {rand(4, 3)}},
      {[&](Tape& t, auto& x) { return weighted(t, broadcast_cols(x[0], 4)); }, {rand(3, 1)}},
      {[&](Tape& t, auto& x) { return weighted(t, slice_cols(x[0], 1, 4)); }, {rand(3, 6)}},
      {[&](Tape& t, auto& x) { return sum(mul(sum(x[0], Axis::Cols), t.constant(w_col))); }, {rand(3, 4)}},
  };
  double worst = 0.0;
  for (auto& [f, in] : cases) worst = std::max(worst, gradcheck::check(f, in).max_rel);
  return worst;
}

// Production gradient path (ray_batch_gradients) with the default field on a
// 2-ray × 4-sample problem; the variance weight is differentiated so the
// total loss is an exact function of the parameters. Coordinates are checked
// on a fixed stride through every tensor.
double end_to_end_error() {
  Dataset ds;
  ds.intrinsics = Intrinsics::from_fov(2, 1, 0.5);
  ds.background = Vec3(0.1, 0.2, 0.3);
  RgbdFrame f{Image(2, 1, 3), Image(2, 1, 1), Pose::look_at(Vec3(0, -4, 1), Vec3::Zero()), ds.intrinsics, "train"};
  f.color.data = {0.2, 0.7, 0.4, 0.9, 0.1, 0.5};
  f.depth.data = {3.7, 4.2};
  ds.frames.push_back(f);
  TrainConfig cfg;
  cfg.sampler.n_samples = 4;
  cfg.sampler.strategy = SamplingStrategy::GaussianLocal;
  cfg.variance_weight_detached = false;
  FieldParams p = init_field(cfg.field, 5);
  p.density.bias[0] = 0.5;
  const std::vector<RaySample> rays{{0, 0}, {0, 1}};
  auto loss = [&](const FieldParams& q) {
    const BatchLoss b = ray_batch_gradients(q, ds, rays, cfg, 0);
    return b.l_g + cfg.lambda_p * b.l_p;
  };
  const BatchLoss base = ray_batch_gradients(p, ds, rays, cfg, 0);
  double num2 = 0.0, diff2 = 0.0;
  const double h = 1e-6;
  auto tensors = p.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Matrix& m = *tensors[t];
    const std::size_t stride = m.size() > 400 ? 97 : 1;
    for (std::size_t j = t % stride; j < m.size(); j += stride) {
      const double x = m[j];
      m[j] = x + h;
      const double fp = loss(p);
      m[j] = x - h;
      const double fm = loss(p);
      m[j] = x;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = base.grads[t][j];
      num2 += numeric * numeric;
      diff2 += (numeric - analytic) * (numeric - analytic);
    }
  }
  return std::sqrt(diff2 / num2);
}

void criterion_gradients() {
  const double op = per_op_max_error();
  const double e2e = end_to_end_error();
  report(1, "gradient correctness", op < 1e-5 && e2e < 1e-4,
         "per-op max rel err " + num(op, 3) + " (< 1e-5), end-to-end rel err " + num(e2e, 3) + " (< 1e-4)");
}

// ---------------------------------------------------------------------------
// 2-6. Rendering and sampling oracles

void criterion_conservation() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> count(1, 64);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0, max_td = 0.0;
  for (int trial = 0; trial < 100000; ++trial) {
    const int n = count(rng);
    SegmentSet s;
    s.boundaries.push_back(2.0);
    std::vector<double> tau(n), rgb(3 * n, 0.5);
    for (int i = 0; i < n; ++i) {
      const double delta = 0.001 + 0.5 * u(rng);
      s.boundaries.push_back(s.boundaries.back() + delta);
      const double td = trial % 4 == 0 ? 50.0 * u(rng) : std::pow(10.0, -4.0 + 5.7 * u(rng));
      tau[i] = std::min(td, 50.0) / delta;
      max_td = std::max(max_td, tau[i] * delta);
    }
    const RenderResult r = composite(s, tau, rgb, Vec3::Zero());
    double total = r.residual;
    for (double w : r.weights) total += w;
    worst = std::max(worst, std::abs(total - 1.0));
  }
  report(2, "compositing conservation", worst < 1e-6,
         "max |sum w + T - 1| = " + num(worst, 3) + " over 1e5 vectors, max tau*delta " + num(max_td, 3));
}

void criterion_ipe() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    std::vector<double> ipe(ipe_width(16));
    integrated_pe(x, Vec3::Zero(), 16, IpeAttenuation::Lifted, ipe);
    const auto pe = positional_encoding(x, 16);
    for (std::size_t j = 0; j < pe.size(); ++j) worst = std::max(worst, std::abs(ipe[j] - pe[j]));
  }
  bool monotone = true;
  for (IpeAttenuation mode : {IpeAttenuation::Lifted, IpeAttenuation::Literal})
    for (int band = 0; band < 16; ++band) {
      double prev = std::numeric_limits<double>::infinity();
      for (double s = 0.0; s < 2.0; s = s == 0.0 ? 1e-8 : s * 1.5) {
        std::vector<double> out(ipe_width(16));
        integrated_pe(Vec3::Zero(), Vec3::Constant(s), 16, mode, out);
        const double c = out[48 + 3 * band];  // cos(0) scaled by the attenuation
        if (c > prev) monotone = false;
        prev = c;
      }
    }
  report(3, "IPE degeneracy", worst <= 1e-12 && monotone,
         "max |IPE - PE| at zero covariance = " + num(worst, 3) + " over 1e4 points; attenuation " +
             (monotone ? "monotone" : "NOT monotone") + " in covariance");
}

void criterion_frustum() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> start(0.5, 5.0), len(0.01, 2.0), rad(1e-4, 0.05), u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double t0 = start(rng), t1 = t0 + len(rng), r = rad(rng);
    const FrustumMoments m = frustum_moments(t0, t1, r);
    const double a = t0 * t0 * t0, b = t1 * t1 * t1;
    double st = 0, stt = 0, sxx = 0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
      const double t = std::cbrt(a + u(rng) * (b - a));
      const double rho = r * t * std::sqrt(u(rng));
      const double x = rho * std::cos(2.0 * std::numbers::pi * u(rng));
      st += t;
      stt += t * t;
      sxx += x * x;
    }
    const double mean = st / n, var_t = stt / n - mean * mean, var_r = sxx / n;
    worst = std::max({worst, std::abs(m.mean_t - mean) / mean, std::abs(m.var_t - var_t) / var_t,
                      std::abs(m.var_r - var_r) / var_r});
  }
  report(4, "frustum moments", worst < 1e-2,
         "max relative error vs 1e6-sample Monte Carlo over 20 frusta = " + num(worst, 3));
}

void criterion_schedule() {
  const double lr = 0.09, lm = 0.1;
  double worst = 0.0;
  bool decreasing = true;
  for (double d : {0.5, 2.0, 3.7, 6.0}) {
    double prev = std::numeric_limits<double>::infinity();
    for (int e = 0; e <= 200; ++e) {
      const double s = adaptive_spread(d, e, lr, lm);
      worst = std::max(worst, std::abs(s - d / 4.0 * (std::exp(-lr * e) + lm)));
      if (!(s < prev)) decreasing = false;
      prev = s;
    }
  }
  const int epoch = static_cast<int>(std::ceil(std::log(100.0) / lr));
  const double d = 4.0, floor = d * lm / 4.0;
  const double gap = adaptive_spread(d, epoch, lr, lm) - floor;
  const bool within = gap <= 0.01 * d / 4.0;
  report(5, "adaptive spread schedule", worst <= 1e-12 && decreasing && within && epoch == 52,
         "max |direct - impl| = " + num(worst, 3) + ", " + (decreasing ? "strictly decreasing" : "NOT decreasing") +
             ", at epoch " + std::to_string(epoch) + " decaying term = " + num(gap / (d / 4.0), 3) +
             " of its initial value (<= 0.01)");
}

double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int k = 1; k < 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    p += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

void criterion_samplers() {
  SamplerConfig cfg;
  const Ray ray{};
  const double depth = 4.0;
  std::vector<double> g;
  for (std::uint64_t r = 0; r < 10000; ++r) {
    RandomStream rng = ray_stream(6, r, 0);
    const SegmentSet s = sample_gaussian_local(cfg, ray, depth, cfg.varsigma, rng);
    g.insert(g.end(), s.boundaries.begin(), s.boundaries.end());
  }
  const double n = static_cast<double>(g.size());
  double mean = 0.0;
  for (double v : g) mean += v / n;
  double ss = 0.0;
  for (double v : g) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  const double se = cfg.varsigma / std::sqrt(n);
  const bool gauss_ok = std::abs(mean - depth) <= 3.0 * se && std::abs(sd - cfg.varsigma) <= 0.05 * cfg.varsigma;

  cfg.strategy = SamplingStrategy::Uniform;
  std::vector<double> x;
  for (std::uint64_t r = 0; r < 10000; ++r) {
    RandomStream rng = ray_stream(7, r, 0);
    const SegmentSet s = sample_uniform(cfg, ray, rng);
    x.insert(x.end(), s.boundaries.begin(), s.boundaries.end());
  }
  std::sort(x.begin(), x.end());
  double dmax = 0.0;
  const double m = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = (x[i] - cfg.global_near) / (cfg.global_far - cfg.global_near);
    dmax = std::max({dmax, f - i / m, (i + 1) / m - f});
  }
  const double p = ks_pvalue(dmax, x.size());
  report(6, "sampler statistics", gauss_ok && p > 0.01,
         "gaussian mean " + num(mean, 6) + " (D = 4 +- " + num(3 * se, 2) + "), std " + num(sd, 4) +
             " (0.3 +- 5%); uniform KS p = " + num(p, 3) + " (> 0.01)");
}

// ---------------------------------------------------------------------------
// 10. Metrics

void criterion_metrics() {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> size(11, 40);
  Image a(24, 20, 3);
  for (double& v : a.data) v = u(rng);
  Image d(24, 20, 1);
  for (double& v : d.data) v = 2.0 + 4.0 * u(rng);
  const bool identity = psnr(a, a) == kPsnrIdentical && ssim(a, a) == 1.0 && abs_rel(d, d) == 0.0;
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const int w = size(rng), h = size(rng), ch = i % 2 ? 3 : 1;
    Image x(w, h, ch), y(w, h, ch);
    // Mix of noise and structure so SSIM spans a wide range.
    const double mix = i / 9.0;
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      x.data[k] = u(rng);
      y.data[k] = std::clamp(mix * x.data[k] + (1 - mix) * u(rng) + 0.05 * (u(rng) - 0.5), 0.0, 1.0);
    }
    worst = std::max(worst, std::abs(ssim(x, y) - reference::ssim(x, y)));
  }
  report(10, "metrics sanity", identity && worst < 1e-6,
         std::string(identity ? "identity values exact" : "identity values WRONG") +
             "; max |SSIM - reference| over 10 random pairs = " + num(worst, 3));
}

// ---------------------------------------------------------------------------
// 11. Determinism through the command-line tool

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DEPTHNERF_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void criterion_determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string ds = (dir / "data").string();
  std::ofstream(dir / "config.json")
      << R"({"width": 32, "color_width": 16, "n_samples": 8, "batch_rays": 128, "epochs": 3, "sampler": "adaptive"})";
  bool ok = run_cli("generate --scene spheres --res 16 --views 3 --test-views 1 --out " + ds) == 0;
  for (const char* run : {"a", "b"}) {
    ok = ok && run_cli("train --deterministic --threads 4 --dataset " + ds + " --config " +
                       (dir / "config.json").string() + " --out " + (dir / run).string()) == 0;
    ok = ok && run_cli("eval --eval-with-depth --split all --checkpoint " + (dir / run / "final.ckpt").string() +
                       " --dataset " + ds + " --out " + (dir / run / "eval.json").string()) == 0;
  }
  int files = 0, same = 0;
  if (ok) {
    for (const auto& e : fs::directory_iterator(dir / "a" / "checkpoints")) {
      ++files;
      same += slurp(e.path()) == slurp(dir / "b" / "checkpoints" / e.path().filename());
    }
    for (const char* f : {"final.ckpt", "eval.json"}) {
      ++files;
      same += slurp(dir / "a" / f) == slurp(dir / "b" / f);
    }
  }
  report(11, "determinism", ok && files == 5 && same == files,
         ok ? std::to_string(same) + "/" + std::to_string(files) + " checkpoint and report files byte-identical"
            : "command-line runs failed");
}

// ---------------------------------------------------------------------------
// 7-9. Training runs

TrainConfig desk_config(SamplingStrategy s, int samples, int epochs) {
  TrainConfig c;
  c.sampler.strategy = s;
  c.sampler.n_samples = samples;
  c.epochs = epochs;
  c.batch_rays = 256;
  c.threads = hardware_threads();
  return c;
}

RunOptions run_options() {
  RunOptions opt;
  opt.score_test = false;
  opt.on_step = [last = -1](const std::string& name, const StepReport& s) mutable {
    if (s.epoch == last) return;
    last = s.epoch;
    progress(name + " epoch " + std::to_string(s.epoch) + " t=" + num(s.wall_time, 4) + "s");
  };
  return opt;
}

Dataset cube_dataset(int res) {
  DatasetSpec spec;
  spec.scene = "cube";
  spec.resolution = res;
  spec.train_views = 8;
  spec.test_views = 0;
  return generate_dataset(spec);
}

void save_run(const fs::path& work, const std::string& exp, const std::vector<RunResult>& runs) {
  write_results(work / exp, exp, runs);
  std::ofstream(work / exp / "table.txt") << results_table(runs, false);
}

void criteria_training(const fs::path& work, const std::set<int>& only) {
  auto want = [&](int id) { return only.empty() || only.count(id); };
  const Dataset cube = cube_dataset(64);
  std::optional<RunResult> adaptive;
  if (want(7) || want(9)) adaptive = run_training("adaptive", cube, desk_config(SamplingStrategy::Adaptive, 16, 20), run_options());
  if (want(7)) {
    RunResult uniform = run_training("uniform", cube, desk_config(SamplingStrategy::Uniform, 16, 20), run_options());
    save_run(work, "convergence", {*adaptive, uniform});
    const double a = adaptive->train_report.abs_rel, u = uniform.train_report.abs_rel;
    report(7, "end-to-end convergence", a < 0.05 && a < u,
           "AbsRel adaptive " + num(a) + " (< 0.05), uniform " + num(u) + "; wall time " +
               num(adaptive->wall_time / 60, 3) + " / " + num(uniform.wall_time / 60, 3) + " min (<= 30)");
  }
  if (want(9)) {
    const TrainConfig cfg = desk_config(SamplingStrategy::Adaptive, 16, 20);
    Dataset noisy_data = cube;
    apply_noise(noisy_data, NoiseModel{0.01, 7});
    RunResult noisy = run_training("noisy", noisy_data, cfg, run_options());
    // Guided by the noisy depth it was trained with, scored on clean depth.
    noisy.train_report =
        evaluate(noisy.params, cube, cfg, cube.indices("train"), true, final_epoch(cfg), false, &noisy_data).report;
    save_run(work, "noise", {*adaptive, noisy});
    bool finite = true;
    for (const auto& e : noisy.epochs) finite = finite && std::isfinite(e.total);
    const double first = noisy.epochs.front().total, last = noisy.epochs.back().total;
    const double clean = adaptive->train_report.abs_rel, rel = noisy.train_report.abs_rel;
    report(9, "noise robustness", finite && last < first && rel < 2.0 * clean,
           std::string(finite ? "finite losses" : "NON-FINITE losses") + ", mean loss per ray epoch 1 " + num(first) +
               " -> epoch 20 " + num(last) + ", AbsRel on clean depth noisy " + num(rel) + " vs clean " + num(clean) +
               " (< 2x)");
  }
  if (want(8)) {
    const Dataset small = cube_dataset(32);
    auto runs = exp_sample_count(small, desk_config(SamplingStrategy::Adaptive, 16, 10), {16, 64}, run_options());
    save_run(work, "samples", runs);
    const double p16 = runs[0].train_report.psnr, p64 = runs[1].train_report.psnr;
    report(8, "sample-count trend", p64 >= p16 && runs[1].wall_time > runs[0].wall_time,
           "PSNR 16 samples " + num(p16) + " dB, 64 samples " + num(p64) + " dB; wall time " +
               num(runs[0].wall_time, 3) + " s < " + num(runs[1].wall_time, 3) + " s");
  }
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "depthnerf_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--work-dir DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(work);
  auto want = [&](int id) { return only.empty() || only.count(id); };
  try {
    if (want(1)) criterion_gradients();
    if (want(2)) criterion_conservation();
    if (want(3)) criterion_ipe();
    if (want(4)) criterion_frustum();
    if (want(5)) criterion_schedule();
    if (want(6)) criterion_samplers();
    if (want(10)) criterion_metrics();
    if (want(11)) criterion_determinism(work);
    if (want(7) || want(8) || want(9)) criteria_training(work, only);
  } catch (const std::exception& e) {
    std::printf("FAIL  acceptance aborted: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
