#pragma once

// Flat JSON form of TrainConfig. Keys mirror the field names; unknown keys
// are rejected by name.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "depthnerf/errors.hpp"
#include "depthnerf/training.hpp"

namespace depthnerf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"lambda_p", c.lambda_p},
      {"lr", c.lr},
      {"lr_decay_factor", c.lr_decay_factor},
      {"lr_decay_every", c.lr_decay_every},
      {"batch_rays", c.batch_rays},
      {"micro_batch_samples", c.micro_batch_samples},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"sampler", to_string(c.sampler.strategy)},
      {"n_samples", c.sampler.n_samples},
      {"alpha_n", c.sampler.alpha_n},
      {"alpha_f", c.sampler.alpha_f},
      {"varsigma", c.sampler.varsigma},
      {"lambda_r", c.sampler.lambda_r},
      {"lambda_m", c.sampler.lambda_m},
      {"near", c.sampler.global_near},
      {"far", c.sampler.global_far},
      {"ipe_bands", c.field.ipe_bands},
      {"dir_bands", c.field.dir_bands},
      {"append_raw_direction", c.field.append_raw_direction},
      {"width", c.field.width},
      {"color_width", c.field.color_width},
      {"density_activation", to_string(c.field.density_activation)},
      {"initial_density", c.field.initial_density},
      {"ipe_attenuation", to_string(c.ipe_attenuation)},
      {"depth_point", to_string(c.depth_point)},
      {"geometric_eps", c.geometric_eps},
      {"variance_weight_detached", c.variance_weight_detached},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"threads", c.threads},
      {"deterministic", c.deterministic},
      {"eval_with_depth", c.eval_with_depth},
  };
}

/// Overwrites the fields named in `j`. Throws ConfigError naming the first
/// unknown key or ill-typed value.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "lambda_p") c.lambda_p = value.get<double>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "lr_decay_factor") c.lr_decay_factor = value.get<double>();
      else if (key == "lr_decay_every") c.lr_decay_every = value.get<int>();
      else if (key == "batch_rays") c.batch_rays = value.get<int>();
      else if (key == "micro_batch_samples") c.micro_batch_samples = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "sampler") c.sampler.strategy = sampling_strategy_from_string(value.get<std::string>());
      else if (key == "n_samples") c.sampler.n_samples = value.get<int>();
      else if (key == "alpha_n") c.sampler.alpha_n = value.get<double>();
      else if (key == "alpha_f") c.sampler.alpha_f = value.get<double>();
      else if (key == "varsigma") c.sampler.varsigma = value.get<double>();
      else if (key == "lambda_r") c.sampler.lambda_r = value.get<double>();
      else if (key == "lambda_m") c.sampler.lambda_m = value.get<double>();
      else if (key == "near") c.sampler.global_near = value.get<double>();
      else if (key == "far") c.sampler.global_far = value.get<double>();
      else if (key == "ipe_bands") c.field.ipe_bands = value.get<int>();
      else if (key == "dir_bands") c.field.dir_bands = value.get<int>();
      else if (key == "append_raw_direction") c.field.append_raw_direction = value.get<bool>();
      else if (key == "width") c.field.width = value.get<int>();
      else if (key == "color_width") c.field.color_width = value.get<int>();
      else if (key == "density_activation") c.field.density_activation = density_activation_from_string(value.get<std::string>());
      else if (key == "initial_density") c.field.initial_density = value.get<double>();
      else if (key == "ipe_attenuation") c.ipe_attenuation = ipe_attenuation_from_string(value.get<std::string>());
      else if (key == "depth_point") c.depth_point = depth_point_from_string(value.get<std::string>());
      else if (key == "geometric_eps") c.geometric_eps = value.get<double>();
      else if (key == "variance_weight_detached") c.variance_weight_detached = value.get<bool>();
      else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else if (key == "threads") c.threads = value.get<int>();
      else if (key == "deterministic") c.deterministic = value.get<bool>();
      else if (key == "eval_with_depth") c.eval_with_depth = value.get<bool>();
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for config key '" + key + "': " + e.what());
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError("bad value for config key '" + key + "': " + e.what());
    }
  }
}

inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  apply_json(base, j);
  return base;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
}

}  // namespace depthnerf
