#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "depthnerf/dataset.hpp"
#include "depthnerf/metrics.hpp"
#include "depthnerf/renderer.hpp"
#include "depthnerf/training.hpp"

namespace depthnerf {

/// Render settings for evaluation. Without depth guidance every ray is
/// sampled uniformly over the global bounds; with it, the training strategy
/// is used at `epoch` with the frame's depth map as guide.
inline RenderOptions eval_render_options(const TrainConfig& cfg, const Dataset& ds,
                                         bool with_depth, double epoch) {
  RenderOptions o;
  o.sampler = cfg.sampler;
  if (!with_depth) o.sampler.strategy = SamplingStrategy::Uniform;
  o.attenuation = cfg.ipe_attenuation;
  o.depth_point = cfg.depth_point;
  o.background = ds.background;
  o.seed = stream_seed(cfg.seed, 0x6576616cULL);
  o.epoch = epoch;
  return o;
}

/// Epoch index whose adaptive spread matches the end of training.
inline double final_epoch(const TrainConfig& cfg) { return cfg.epochs > 0 ? cfg.epochs - 1 : 0; }

struct EvalOutput {
  EvalReport report;
  std::vector<RenderedImage> renders;
};

/// Scores against `ds`. Depth guidance comes from `guide` when given (e.g. the
/// noisy depth a model was trained with), otherwise from `ds` itself.
inline EvalOutput evaluate(const FieldParams& params, const Dataset& ds, const TrainConfig& cfg,
                           const std::vector<std::size_t>& frames, bool with_depth,
                           double epoch, bool keep_renders = false,
                           const Dataset* guide = nullptr) {
  if (guide && guide->frames.size() != ds.frames.size())
    throw DimensionError("guide dataset has a different frame count");
  EvalOutput out;
  for (std::size_t i : frames) {
    const RgbdFrame& f = ds.frames.at(i);
    RenderOptions o = eval_render_options(cfg, ds, with_depth, epoch);
    o.seed = stream_seed(o.seed, i);
    if (with_depth) o.guide_depth = guide ? &guide->frames[i].depth : &f.depth;
    RenderedImage r = render_image(params, ds.intrinsics, f.pose, o);
    out.report.frames.push_back(score_frame(i, r.color, f.color, r.depth, f.depth));
    if (keep_renders) out.renders.push_back(std::move(r));
  }
  out.report.aggregate();
  return out;
}

/// Frames of the requested split; falls back to every frame when the split
/// is empty.
inline std::vector<std::size_t> eval_frames(const Dataset& ds, const std::string& split) {
  auto idx = ds.indices(split);
  if (idx.empty()) idx = ds.indices("all");
  return idx;
}

}  // namespace depthnerf
