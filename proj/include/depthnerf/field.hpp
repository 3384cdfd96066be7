#pragma once

// Radiance-field MLP: integrated positional encoding in, (density, rgb) out.
//
//   ipe ─► L1 ─► L2 ─► [h2 ⊕ ipe] ─► L3 ─► L4 ─┬─► density head ─► softplus ─► τ
//                                               └─► [h4 ⊕ γ(d)] ─► 128 ─► 3 ─► sigmoid ─► rgb
//
// Hidden layers use ReLU. Density never sees the view direction.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthnerf/autodiff.hpp"
#include "depthnerf/encoding.hpp"

namespace depthnerf {

enum class DensityActivation { Softplus, Relu };

inline std::string to_string(DensityActivation a) {
  return a == DensityActivation::Softplus ? "softplus" : "relu";
}
inline DensityActivation density_activation_from_string(const std::string& s) {
  if (s == "softplus") return DensityActivation::Softplus;
  if (s == "relu") return DensityActivation::Relu;
  throw std::invalid_argument("unknown density activation '" + s + "'");
}

struct FieldConfig {
  int ipe_bands = 16;
  int dir_bands = 4;
  bool append_raw_direction = true;
  int width = 256;
  int color_width = 128;
  DensityActivation density_activation = DensityActivation::Softplus;
  /// Target mean density (1/m) at initialization.
  double initial_density = 0.1;

  std::size_t ipe_dim() const { return ipe_width(ipe_bands); }
  std::size_t dir_dim() const { return direction_width(dir_bands, append_raw_direction); }
};

struct Linear {
  Matrix weight;  // in × out
  Matrix bias;    // 1 × out
};

struct FieldParams {
  FieldConfig config;
  Linear l1, l2, l3, l4;
  Linear density;
  Linear color_hidden;
  Linear color_out;

  /// Fixed traversal order used by the optimizer and checkpoints.
  std::vector<Matrix*> tensors() {
    return {&l1.weight, &l1.bias, &l2.weight, &l2.bias, &l3.weight, &l3.bias,
            &l4.weight, &l4.bias, &density.weight, &density.bias, &color_hidden.weight,
            &color_hidden.bias, &color_out.weight, &color_out.bias};
  }
  std::vector<const Matrix*> tensors() const {
    auto& self = const_cast<FieldParams&>(*this);
    std::vector<const Matrix*> out;
    for (Matrix* m : self.tensors()) out.push_back(m);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* m : tensors()) n += m->size();
    return n;
  }

  bool all_finite() const {
    for (const Matrix* m : tensors())
      for (double v : m->values())
        if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const FieldParams& a, const FieldParams& b) {
    auto ta = a.tensors();
    auto tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }
};

/// Expected (rows, cols) of every tensor, in FieldParams::tensors() order.
inline std::vector<std::pair<std::size_t, std::size_t>> field_shapes(const FieldConfig& c) {
  const std::size_t w = static_cast<std::size_t>(c.width);
  const std::size_t cw = static_cast<std::size_t>(c.color_width);
  const std::size_t in = c.ipe_dim();
  return {{in, w},         {1, w}, {w, w},       {1, w},  {w + in, w}, {1, w},  {w, w},
          {1, w},          {w, 1}, {1, 1},       {w + c.dir_dim(), cw},   {1, cw}, {cw, 3},
          {1, 3}};
}

/// Fan-in scaled uniform initialization, deterministic per seed.
inline FieldParams init_field(const FieldConfig& cfg, std::uint64_t seed) {
  FieldParams p;
  p.config = cfg;
  std::mt19937_64 rng(seed);
  auto make = [&](std::size_t in, std::size_t out, double gain) {
    Linear l{Matrix(in, out), Matrix(1, out)};
    const double bound = std::sqrt(gain / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : l.weight.values()) v = dist(rng);
    return l;
  };
  const std::size_t w = static_cast<std::size_t>(cfg.width);
  const std::size_t in = cfg.ipe_dim();
  p.l1 = make(in, w, 6.0);
  p.l2 = make(w, w, 6.0);
  p.l3 = make(w + in, w, 6.0);
  p.l4 = make(w, w, 6.0);
  p.density = make(w, 1, 3.0);
  p.color_hidden = make(w + cfg.dir_dim(), static_cast<std::size_t>(cfg.color_width), 6.0);
  p.color_out = make(static_cast<std::size_t>(cfg.color_width), 3, 3.0);
  // Inverse of the density activation at the target initial density.
  p.density.bias[0] = cfg.density_activation == DensityActivation::Softplus
                          ? std::log(std::expm1(cfg.initial_density))
                          : cfg.initial_density;
  return p;
}

inline void check_field_shapes(const FieldParams& p) {
  const auto shapes = field_shapes(p.config);
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i]->rows() != shapes[i].first || ts[i]->cols() != shapes[i].second)
      throw DimensionError("field tensor " + std::to_string(i) + " has shape " +
                           ts[i]->shape_string() + ", expected [" +
                           std::to_string(shapes[i].first) + "x" +
                           std::to_string(shapes[i].second) + "]");
  }
}

/// Parameters registered as leaves on one tape.
struct FieldLeaves {
  std::vector<Tensor> tensors;
};

inline FieldLeaves register_field(Tape& tape, const FieldParams& p) {
  FieldLeaves leaves;
  for (const Matrix* m : p.tensors()) leaves.tensors.push_back(tape.leaf(*m));
  return leaves;
}

struct FieldTensors {
  Tensor density;  // n × 1
  Tensor rgb;      // n × 3
};

struct FieldValues {
  Matrix density;
  Matrix rgb;
};

inline void check_inputs(const FieldConfig& c, const Matrix& ipe, const Matrix& dir) {
  if (ipe.cols() != c.ipe_dim() || dir.cols() != c.dir_dim() || ipe.rows() != dir.rows())
    throw DimensionError("field input widths " + ipe.shape_string() + " and " +
                         dir.shape_string() + " do not match the configured " +
                         std::to_string(c.ipe_dim()) + " and " + std::to_string(c.dir_dim()));
}

/// Differentiable forward pass. `ipe` is n × ipe_dim, `dir` is n × dir_dim.
inline FieldTensors field_forward(const FieldConfig& c, const FieldLeaves& leaves,
                                  const Tensor& ipe, const Tensor& dir) {
  check_inputs(c, ipe.value(), dir.value());
  const auto& t = leaves.tensors;
  using namespace ad;
  Tensor h = relu(affine(ipe, t[0], t[1]));
  h = relu(affine(h, t[2], t[3]));
  h = relu(affine(concat(h, ipe), t[4], t[5]));
  h = relu(affine(h, t[6], t[7]));
  Tensor raw_density = affine(h, t[8], t[9]);
  Tensor density = c.density_activation == DensityActivation::Softplus ? softplus(raw_density)
                                                                       : relu(raw_density);
  Tensor g = relu(affine(concat(h, dir), t[10], t[11]));
  Tensor rgb = sigmoid(affine(g, t[12], t[13]));
  return {density, rgb};
}

/// Tape-free forward pass; bit-identical to field_forward.
inline FieldValues evaluate_field(const FieldParams& p, const Matrix& ipe, const Matrix& dir) {
  check_inputs(p.config, ipe, dir);
  using namespace kernels;
  Matrix h = map(affine(ipe, p.l1.weight, p.l1.bias), relu);
  h = map(affine(h, p.l2.weight, p.l2.bias), relu);
  h = map(affine(concat_cols(h, ipe), p.l3.weight, p.l3.bias), relu);
  h = map(affine(h, p.l4.weight, p.l4.bias), relu);
  Matrix raw_density = affine(h, p.density.weight, p.density.bias);
  FieldValues out;
  out.density = p.config.density_activation == DensityActivation::Softplus
                    ? map(raw_density, softplus)
                    : map(raw_density, relu);
  Matrix g = map(affine(concat_cols(h, dir), p.color_hidden.weight, p.color_hidden.bias), relu);
  out.rgb = map(affine(g, p.color_out.weight, p.color_out.bias), sigmoid);
  return out;
}

}  // namespace depthnerf
