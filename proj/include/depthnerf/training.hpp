#pragma once

// Joint photometric + geometric objective, Adam, the stepwise learning-rate
// schedule and the epoch loop that feeds the epoch index into adaptive
// sampling.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "depthnerf/autodiff.hpp"
#include "depthnerf/dataset.hpp"
#include "depthnerf/field.hpp"
#include "depthnerf/renderer.hpp"
#include "depthnerf/sampling.hpp"

namespace depthnerf {

struct TrainConfig {
  double lambda_p = 100.0;
  double lr = 5e-4;
  double lr_decay_factor = 0.5;
  int lr_decay_every = 5;
  int batch_rays = 2048;
  /// Upper bound on samples per tape; bounds memory, not the math.
  int micro_batch_samples = 4096;
  int epochs = 20;
  std::uint64_t seed = 0;
  SamplerConfig sampler;
  FieldConfig field;
  IpeAttenuation ipe_attenuation = IpeAttenuation::Lifted;
  DepthPoint depth_point = DepthPoint::Midpoint;
  double geometric_eps = 1e-6;
  bool variance_weight_detached = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;
  bool deterministic = false;
  /// Evaluate with the training sampler guided by ground-truth depth instead
  /// of uniform sampling.
  bool eval_with_depth = false;

  void validate() const {
    if (!(lambda_p >= 0.0)) throw std::invalid_argument("lambda_p must be non-negative");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(lr_decay_factor > 0.0)) throw std::invalid_argument("lr_decay_factor must be positive");
    if (lr_decay_every < 1) throw std::invalid_argument("lr_decay_every must be at least 1");
    if (batch_rays < 1) throw std::invalid_argument("batch_rays must be at least 1");
    if (micro_batch_samples < 1) throw std::invalid_argument("micro_batch_samples must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (threads < 1) throw std::invalid_argument("threads must be at least 1");
    if (!(geometric_eps > 0.0)) throw std::invalid_argument("geometric_eps must be positive");
    sampler.validate();
  }

  int effective_threads() const { return deterministic ? 1 : threads; }
};

/// Σ over rays and channels of |pred - truth|.
inline Tensor photometric_loss(Tape& tape, const Tensor& pred, const Matrix& truth) {
  if (!pred.value().same_shape(truth))
    throw DimensionError("photometric loss shapes differ: " + pred.value().shape_string() +
                         " vs " + truth.shape_string());
  return ad::sum(ad::abs(ad::sub(pred, tape.constant(truth))));
}

/// Σ over valid rays of |D̂ - D| / sqrt(D̂_var + eps). With `detach_weight`
/// the normalizer is a constant per ray. `valid` holds 1 for rays with
/// usable depth and 0 for holes.
inline Tensor geometric_loss(Tape& tape, const Tensor& depth, const Tensor& depth_var,
                             const Matrix& truth, const Matrix& valid, double eps,
                             bool detach_weight) {
  if (!depth.value().same_shape(truth) || !depth_var.value().same_shape(truth) ||
      !valid.same_shape(truth))
    throw DimensionError("geometric loss shapes differ: " + depth.value().shape_string() +
                         " vs " + truth.shape_string());
  using namespace ad;
  Tensor var = detach_weight ? detach(depth_var) : depth_var;
  Tensor weight = rsqrt(add_scalar(var, eps));
  Tensor err = abs(sub(depth, tape.constant(truth)));
  return sum(mul(mul(err, weight), tape.constant(valid)));
}

/// l_g + λ_p·l_p
inline Tensor total_loss(const Tensor& l_g, const Tensor& l_p, double lambda_p) {
  return ad::add(l_g, ad::scale(l_p, lambda_p));
}

/// lr·factor^floor(epoch / every)
inline double lr_schedule(int epoch, double base_lr = 5e-4, double factor = 0.5, int every = 5) {
  return base_lr * std::pow(factor, std::floor(static_cast<double>(epoch) / every));
}

inline double lr_schedule(int epoch, const TrainConfig& cfg) {
  return lr_schedule(epoch, cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every);
}

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;
};

inline AdamState init_adam(const FieldParams& p) {
  AdamState s;
  for (const Matrix* t : p.tensors()) {
    s.m.emplace_back(t->rows(), t->cols());
    s.v.emplace_back(t->rows(), t->cols());
  }
  return s;
}

/// Bias-corrected Adam update in place. Throws DivergenceError and leaves
/// everything untouched when a gradient is not finite.
inline void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads,
                      AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  if (params.size() != grads.size() || state.m.size() != params.size())
    throw DimensionError("adam: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.m[i]))
      throw DimensionError("adam: shape mismatch at tensor " + std::to_string(i));
    for (double g : grads[i].values())
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient; optimizer step aborted");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    const Matrix& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

struct StepReport {
  int epoch = 0;
  std::int64_t iteration = 0;
  double l_p = 0.0;
  double l_g = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since training started
};

/// Everything needed to continue training exactly.
struct TrainState {
  FieldParams params;
  AdamState adam;
  int epoch = 0;  // next epoch to run
  std::int64_t iteration = 0;
};

inline TrainState init_train_state(const TrainConfig& cfg) {
  TrainState s;
  s.params = init_field(cfg.field, stream_seed(cfg.seed, 0x696e6974ULL));
  s.adam = init_adam(s.params);
  return s;
}

struct TrainCallbacks {
  std::function<void(const StepReport&)> on_step;
  /// Called after every completed epoch with the resumable state.
  std::function<void(const TrainState&)> on_epoch;
};

/// One training ray: which frame and pixel it came from.
struct RaySample {
  std::uint32_t frame = 0;
  std::uint32_t pixel = 0;
};

struct BatchLoss {
  double l_p = 0.0;
  double l_g = 0.0;
  std::vector<Matrix> grads;  // in FieldParams::tensors() order
};

/// Forward + backward over a set of rays on a private tape.
inline BatchLoss ray_batch_gradients(const FieldParams& params, const Dataset& ds,
                                     std::span<const RaySample> rays, const TrainConfig& cfg,
                                     int epoch) {
  const Intrinsics& k = ds.intrinsics;
  std::vector<Ray> ray_list;
  std::vector<SegmentSet> segs;
  ray_list.reserve(rays.size());
  segs.reserve(rays.size());
  Matrix truth_color(rays.size(), 3);
  Matrix truth_depth(rays.size(), 1);
  Matrix valid(rays.size(), 1);
  const std::size_t pixels = static_cast<std::size_t>(k.width) * k.height;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const RgbdFrame& f = ds.frames[rays[i].frame];
    const int row = static_cast<int>(rays[i].pixel / static_cast<std::uint32_t>(k.width));
    const int col = static_cast<int>(rays[i].pixel % static_cast<std::uint32_t>(k.width));
    ray_list.push_back(ray_for_pixel(k, f.pose, row, col, cfg.sampler.global_near,
                                     cfg.sampler.global_far));
    const double d = f.depth.data[rays[i].pixel];
    const std::uint64_t ray_id = rays[i].frame * pixels + rays[i].pixel;
    RandomStream rng = ray_stream(cfg.seed, ray_id, static_cast<std::uint64_t>(epoch));
    segs.push_back(sample_segments(cfg.sampler, ray_list.back(), d, epoch, rng));
    for (int c = 0; c < 3; ++c) truth_color(i, c) = f.color.data[3 * rays[i].pixel + c];
    const bool ok = depth_is_valid(d) && !segs.back().fallback;
    truth_depth[i] = ok ? d : 0.0;
    valid[i] = ok ? 1.0 : 0.0;
  }
  const SampleBatch b = build_batch(ray_list, segs, params.config, cfg.ipe_attenuation,
                                    cfg.depth_point);
  Tape tape;
  const FieldLeaves leaves = register_field(tape, params);
  const Tensor ipe = tape.constant(b.ipe);
  const Tensor dir = tape.constant(b.dir);
  const FieldTensors out = field_forward(params.config, leaves, ipe, dir);
  const CompositeTensors comp = composite(tape, out.density, out.rgb, b.deltas, b.points,
                                          ds.background);
  const Tensor lp = photometric_loss(tape, comp.color, truth_color);
  const Tensor lg = geometric_loss(tape, comp.depth, comp.depth_var, truth_depth, valid,
                                   cfg.geometric_eps, cfg.variance_weight_detached);
  const Tensor loss = total_loss(lg, lp, cfg.lambda_p);
  tape.backward(loss);
  BatchLoss r;
  r.l_p = lp.item();
  r.l_g = lg.item();
  for (const Tensor& t : leaves.tensors) {
    const Matrix& g = t.grad();
    r.grads.push_back(g.empty() ? Matrix(t.rows(), t.cols()) : g);
  }
  return r;
}

/// Every training pixel of every training frame.
inline std::vector<RaySample> training_rays(const Dataset& ds) {
  std::vector<RaySample> out;
  const std::uint32_t pixels =
      static_cast<std::uint32_t>(ds.intrinsics.width) * static_cast<std::uint32_t>(ds.intrinsics.height);
  for (std::size_t f : ds.indices("train"))
    for (std::uint32_t p = 0; p < pixels; ++p) out.push_back({static_cast<std::uint32_t>(f), p});
  return out;
}

/// Seeded shuffle for one epoch; depends only on (seed, epoch).
inline void shuffle_for_epoch(std::vector<RaySample>& rays, std::uint64_t seed, int epoch) {
  std::mt19937_64 rng(stream_seed(seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)));
  // Fisher-Yates spelled out: std::shuffle's draw sequence is library-specific.
  for (std::size_t i = rays.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(rays[i - 1], rays[j]);
  }
}

/// Runs epochs [state.epoch, cfg.epochs). Sub-batches may run on worker
/// threads; their gradients are summed in a fixed order, so results do not
/// depend on the thread count.
inline void train(const Dataset& ds, const TrainConfig& cfg, TrainState& state,
                  const TrainCallbacks& callbacks = {}) {
  cfg.validate();
  check_field_shapes(state.params);
  if (ds.indices("train").empty()) throw std::invalid_argument("dataset has no training frames");
  const auto start = std::chrono::steady_clock::now();
  std::vector<RaySample> rays = training_rays(ds);
  const std::size_t micro =
      std::max<std::size_t>(1, static_cast<std::size_t>(cfg.micro_batch_samples) /
                                   static_cast<std::size_t>(cfg.sampler.n_samples));
  const int threads = cfg.effective_threads();
  std::vector<RaySample> base = rays;

  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    rays = base;
    shuffle_for_epoch(rays, cfg.seed, epoch);
    const double lr = lr_schedule(epoch, cfg);
    for (std::size_t b0 = 0; b0 < rays.size(); b0 += static_cast<std::size_t>(cfg.batch_rays)) {
      const std::size_t b1 = std::min(rays.size(), b0 + static_cast<std::size_t>(cfg.batch_rays));
      std::vector<std::pair<std::size_t, std::size_t>> parts;
      for (std::size_t m0 = b0; m0 < b1; m0 += micro) parts.emplace_back(m0, std::min(b1, m0 + micro));
      std::vector<BatchLoss> results(parts.size());
      auto work = [&](std::size_t idx) {
        results[idx] = ray_batch_gradients(
            state.params, ds,
            std::span<const RaySample>(rays.data() + parts[idx].first,
                                       parts[idx].second - parts[idx].first),
            cfg, epoch);
      };
      if (threads <= 1 || parts.size() == 1) {
        for (std::size_t i = 0; i < parts.size(); ++i) work(i);
      } else {
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
          pool.emplace_back([&, t] {
            try {
              for (std::size_t i = static_cast<std::size_t>(t); i < parts.size();
                   i += static_cast<std::size_t>(threads))
                work(i);
            } catch (...) {
              errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
          });
        for (auto& th : pool) th.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }
      StepReport rep;
      std::vector<Matrix> grads = std::move(results[0].grads);
      rep.l_p = results[0].l_p;
      rep.l_g = results[0].l_g;
      for (std::size_t i = 1; i < results.size(); ++i) {
        rep.l_p += results[i].l_p;
        rep.l_g += results[i].l_g;
        for (std::size_t t = 0; t < grads.size(); ++t)
          for (std::size_t j = 0; j < grads[t].size(); ++j) grads[t][j] += results[i].grads[t][j];
      }
      rep.total = rep.l_g + cfg.lambda_p * rep.l_p;
      double sq = 0.0;
      for (const auto& g : grads)
        for (double v : g.values()) sq += v * v;
      rep.grad_norm = std::sqrt(sq);
      if (!std::isfinite(rep.total) || !std::isfinite(rep.grad_norm))
        throw DivergenceError("loss diverged at epoch " + std::to_string(epoch) + ", iteration " +
                              std::to_string(state.iteration));
      adam_step(state.params.tensors(), grads, state.adam, lr, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps);
      if (!state.params.all_finite())
        throw DivergenceError("parameters became non-finite at iteration " +
                              std::to_string(state.iteration));
      rep.epoch = epoch;
      rep.iteration = state.iteration++;
      rep.lr = lr;
      rep.wall_time =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (callbacks.on_step) callbacks.on_step(rep);
    }
    state.epoch = epoch + 1;
    if (callbacks.on_epoch) callbacks.on_epoch(state);
  }
}

inline FieldParams train(const Dataset& ds, const TrainConfig& cfg,
                         const TrainCallbacks& callbacks = {}) {
  TrainState s = init_train_state(cfg);
  train(ds, cfg, s, callbacks);
  return s.params;
}

}  // namespace depthnerf
