#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; backward()
// walks it once in reverse. Parameters live outside the tape and are
// re-registered as leaves at every step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "depthnerf/errors.hpp"

namespace depthnerf {

/// Dense row-major matrix of doubles. Value type; the storage for every
/// tensor quantity in the project.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw DimensionError("matrix value count " + std::to_string(values_.size()) +
                           " does not match shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged matrix initializer");
      values_.insert(values_.end(), r.begin(), r.end());
    }
  }

  static Matrix scalar(double v) { return Matrix(1, 1, v); }
  static Matrix row(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Matrix column(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<EigenMat> eigen() {
    return {values_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<const EigenMat> eigen() const {
    return {values_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

enum class Axis { Rows, Cols, All };

namespace kernels {

// Shared by the tape and by the tape-free inference path so both produce
// identical bits.

namespace detail {

typedef double Lanes __attribute__((vector_size(64)));
constexpr std::size_t kLanes = 8;
constexpr std::size_t kPanel = 2 * kLanes;

// Every output element sees the same sequence of vector ops in k order,
// whatever the tile it lands in, so a row's result does not depend on
// how many rows share the product.
template <std::size_t R>
inline void matmul_tile(const double* a, std::size_t lda, const double* panel, std::size_t k_dim,
                        double* out, std::size_t ldo, std::size_t cols) {
  Lanes acc[R][2] = {};
  for (std::size_t k = 0; k < k_dim; ++k) {
    Lanes b0, b1;
    __builtin_memcpy(&b0, panel + k * kPanel, sizeof(Lanes));
    __builtin_memcpy(&b1, panel + k * kPanel + kLanes, sizeof(Lanes));
    for (std::size_t i = 0; i < R; ++i) {
      const double x = a[i * lda + k];
      acc[i][0] += x * b0;
      acc[i][1] += x * b1;
    }
  }
  for (std::size_t i = 0; i < R; ++i) {
    double tmp[kPanel];
    __builtin_memcpy(tmp, &acc[i][0], sizeof(Lanes));
    __builtin_memcpy(tmp + kLanes, &acc[i][1], sizeof(Lanes));
    std::copy(tmp, tmp + cols, out + i * ldo);
  }
}

}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  using detail::kPanel;
  const std::size_t m = a.rows(), k_dim = a.cols(), n = b.cols();
  Matrix out(m, n);
  if (m == 0 || n == 0) return out;
  const std::size_t panels = (n + kPanel - 1) / kPanel;
  std::vector<double> packed(panels * k_dim * kPanel, 0.0);
  for (std::size_t p = 0; p < panels; ++p)
    for (std::size_t k = 0; k < k_dim; ++k)
      for (std::size_t j = 0; j < kPanel && p * kPanel + j < n; ++j)
        packed[(p * k_dim + k) * kPanel + j] = b.data()[k * n + p * kPanel + j];
  for (std::size_t p = 0; p < panels; ++p) {
    const double* panel = packed.data() + p * k_dim * kPanel;
    const std::size_t cols = std::min(kPanel, n - p * kPanel);
    double* dst = out.data() + p * kPanel;
    std::size_t r = 0;
    for (; r + 6 <= m; r += 6)
      detail::matmul_tile<6>(a.data() + r * k_dim, k_dim, panel, k_dim, dst + r * n, n, cols);
    for (; r < m; ++r)
      detail::matmul_tile<1>(a.data() + r * k_dim, k_dim, panel, k_dim, dst + r * n, n, cols);
  }
  return out;
}

inline Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out = matmul(x, w);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* row = out.data() + r * out.cols();
    for (std::size_t c = 0; c < out.cols(); ++c) row[c] += b[c];
  }
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

template <class F>
Matrix map(const Matrix& a, F&& f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.data() + r * a.cols(), a.data() + (r + 1) * a.cols(), out.data() + r * out.cols());
    std::copy(b.data() + r * b.cols(), b.data() + (r + 1) * b.cols(),
              out.data() + r * out.cols() + a.cols());
  }
  return out;
}

}  // namespace kernels

class Tape;

/// Handle to a node on a Tape. Valid only while the tape is alive and has
/// not been cleared.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::uint32_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool requires_grad() const;
  double item() const { return value()[0]; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  Detach,
  MatMul,
  Affine,
  Add,
  Sub,
  Mul,
  Neg,
  Exp,
  Sin,
  Cos,
  Relu,
  Sigmoid,
  Softplus,
  Rsqrt,
  Abs,
  Square,
  Scale,
  AddScalar,
  SumAll,
  SumRows,
  SumCols,
  MeanAll,
  MeanRows,
  MeanCols,
  BroadcastCols,
  ConcatCols,
  SliceCols,
  Reshape,
  CumsumExclusive,
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value) { return push(OpKind::Leaf, {}, std::move(value), true); }
  Tensor constant(Matrix value) { return push(OpKind::Constant, {}, std::move(value), false); }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  const Matrix& value(std::uint32_t id) const { return nodes_.at(id).value; }
  const Matrix& grad(std::uint32_t id) const { return nodes_.at(id).grad; }
  bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }

  /// Accumulates d(loss)/d(node) into every node that requires a gradient.
  /// Intermediate gradients are reset first; leaf gradients accumulate
  /// across calls until zero_grad().
  void backward(const Tensor& loss) {
    check_owned(loss);
    const Matrix& lv = nodes_[loss.id_].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw DimensionError("backward requires a scalar loss, got " + lv.shape_string());
    }
    for (auto& n : nodes_) {
      if (n.kind != OpKind::Leaf) n.grad = Matrix();
    }
    if (!nodes_[loss.id_].requires_grad) return;
    accumulate(loss.id_, Matrix::scalar(1.0));
    for (std::int64_t i = loss.id_; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty() || n.kind == OpKind::Leaf) continue;
      backprop(static_cast<std::uint32_t>(i));
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Matrix();
  }

  /// Recomputes every derived node from its recorded inputs and reports
  /// whether all stored values are reproduced bit-exactly.
  bool replay_matches() const {
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.kind == OpKind::Leaf || n.kind == OpKind::Constant) continue;
      if (!(evaluate(n.kind, n.a, n.b, n.c, n.param, n.aux0, n.aux1) == n.value)) return false;
    }
    return true;
  }

  // Operation recording; free functions below are the public spelling.
  Tensor record(OpKind kind, std::uint32_t a, std::uint32_t b = kNone, std::uint32_t c = kNone,
                double param = 0.0, std::size_t aux0 = 0, std::size_t aux1 = 0) {
    validate(kind, a, b, c, aux0, aux1);
    Matrix v = evaluate(kind, a, b, c, param, aux0, aux1);
    bool rg = false;
    if (kind != OpKind::Detach) {
      for (std::uint32_t in : {a, b, c}) {
        if (in != kNone && nodes_[in].requires_grad) rg = true;
      }
    }
    Tensor t = push(kind, {a, b, c}, std::move(v), rg);
    Node& n = nodes_.back();
    n.param = param;
    n.aux0 = aux0;
    n.aux1 = aux1;
    return t;
  }

  void check_owned(const Tensor& t) const {
    if (t.tape_ != this || t.id_ >= nodes_.size()) {
      throw std::invalid_argument("tensor does not belong to this tape");
    }
  }

  static constexpr std::uint32_t kNone = 0xffffffffu;

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::uint32_t a = kNone, b = kNone, c = kNone;
    double param = 0.0;
    std::size_t aux0 = 0, aux1 = 0;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
  };

  Tensor push(OpKind kind, std::initializer_list<std::uint32_t> inputs, Matrix value, bool rg) {
    if (nodes_.size() >= kNone) throw std::length_error("tape is full");
    Node n;
    n.kind = kind;
    auto it = inputs.begin();
    if (it != inputs.end()) n.a = *it++;
    if (it != inputs.end()) n.b = *it++;
    if (it != inputs.end()) n.c = *it++;
    n.value = std::move(value);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  static std::string shapes(const Matrix& a, const Matrix& b) {
    return a.shape_string() + " vs " + b.shape_string();
  }

  void validate(OpKind kind, std::uint32_t a, std::uint32_t b, std::uint32_t c, std::size_t aux0,
                std::size_t aux1) const {
    auto get = [&](std::uint32_t id) -> const Matrix& { return nodes_.at(id).value; };
    const Matrix& va = get(a);
    switch (kind) {
      case OpKind::MatMul:
        if (va.cols() != get(b).rows())
          throw DimensionError("matmul inner dimensions differ: " + shapes(va, get(b)));
        break;
      case OpKind::Affine:
        if (va.cols() != get(b).rows())
          throw DimensionError("affine inner dimensions differ: " + shapes(va, get(b)));
        if (get(c).rows() != 1 || get(c).cols() != get(b).cols())
          throw DimensionError("affine bias shape mismatch: " + shapes(get(b), get(c)));
        break;
      case OpKind::Add:
      case OpKind::Sub:
      case OpKind::Mul:
        if (!va.same_shape(get(b)))
          throw DimensionError("elementwise shape mismatch: " + shapes(va, get(b)));
        break;
      case OpKind::Rsqrt:
        for (double v : va.values()) {
          if (!(v > 0.0)) throw std::domain_error("reciprocal-sqrt of non-positive value");
        }
        break;
      case OpKind::BroadcastCols:
        if (va.cols() != 1)
          throw DimensionError("broadcast_cols expects a column vector, got " + va.shape_string());
        break;
      case OpKind::ConcatCols:
        if (va.rows() != get(b).rows())
          throw DimensionError("concat row counts differ: " + shapes(va, get(b)));
        break;
      case OpKind::SliceCols:
        if (aux0 + aux1 > va.cols())
          throw DimensionError("slice [" + std::to_string(aux0) + ", " +
                               std::to_string(aux0 + aux1) + ") out of range for " +
                               va.shape_string());
        break;
      case OpKind::Reshape:
        if (aux0 * aux1 != va.size())
          throw DimensionError("cannot reshape " + va.shape_string() + " to [" +
                               std::to_string(aux0) + "x" + std::to_string(aux1) + "]");
        break;
      default:
        break;
    }
  }

  Matrix evaluate(OpKind kind, std::uint32_t a, std::uint32_t b, std::uint32_t c, double param,
                  std::size_t aux0, std::size_t aux1) const {
    const Matrix& va = nodes_[a].value;
    switch (kind) {
      case OpKind::Detach:
        return va;
      case OpKind::MatMul:
        return kernels::matmul(va, nodes_[b].value);
      case OpKind::Affine:
        return kernels::affine(va, nodes_[b].value, nodes_[c].value);
      case OpKind::Add: {
        const Matrix& vb = nodes_[b].value;
        Matrix out(va.rows(), va.cols());
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
        return out;
      }
      case OpKind::Sub: {
        const Matrix& vb = nodes_[b].value;
        Matrix out(va.rows(), va.cols());
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] - vb[i];
        return out;
      }
      case OpKind::Mul: {
        const Matrix& vb = nodes_[b].value;
        Matrix out(va.rows(), va.cols());
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
        return out;
      }
      case OpKind::Neg:
        return kernels::map(va, [](double x) { return -x; });
      case OpKind::Exp:
        return kernels::map(va, [](double x) { return std::exp(x); });
      case OpKind::Sin:
        return kernels::map(va, [](double x) { return std::sin(x); });
      case OpKind::Cos:
        return kernels::map(va, [](double x) { return std::cos(x); });
      case OpKind::Relu:
        return kernels::map(va, kernels::relu);
      case OpKind::Sigmoid:
        return kernels::map(va, kernels::sigmoid);
      case OpKind::Softplus:
        return kernels::map(va, kernels::softplus);
      case OpKind::Rsqrt:
        return kernels::map(va, [](double x) { return 1.0 / std::sqrt(x); });
      case OpKind::Abs:
        return kernels::map(va, [](double x) { return std::abs(x); });
      case OpKind::Square:
        return kernels::map(va, [](double x) { return x * x; });
      case OpKind::Scale:
        return kernels::map(va, [param](double x) { return x * param; });
      case OpKind::AddScalar:
        return kernels::map(va, [param](double x) { return x + param; });
      case OpKind::SumAll:
      case OpKind::MeanAll: {
        double s = 0.0;
        for (double v : va.values()) s += v;
        if (kind == OpKind::MeanAll) s /= static_cast<double>(va.size());
        return Matrix::scalar(s);
      }
      case OpKind::SumCols:
      case OpKind::MeanCols: {
        Matrix out(va.rows(), 1);
        for (std::size_t r = 0; r < va.rows(); ++r) {
          double s = 0.0;
          for (std::size_t col = 0; col < va.cols(); ++col) s += va(r, col);
          out[r] = kind == OpKind::MeanCols ? s / static_cast<double>(va.cols()) : s;
        }
        return out;
      }
      case OpKind::SumRows:
      case OpKind::MeanRows: {
        Matrix out(1, va.cols());
        for (std::size_t r = 0; r < va.rows(); ++r)
          for (std::size_t col = 0; col < va.cols(); ++col) out[col] += va(r, col);
        if (kind == OpKind::MeanRows)
          for (std::size_t col = 0; col < va.cols(); ++col)
            out[col] /= static_cast<double>(va.rows());
        return out;
      }
      case OpKind::BroadcastCols: {
        Matrix out(va.rows(), aux0);
        for (std::size_t r = 0; r < va.rows(); ++r)
          for (std::size_t col = 0; col < aux0; ++col) out(r, col) = va[r];
        return out;
      }
      case OpKind::ConcatCols:
        return kernels::concat_cols(va, nodes_[b].value);
      case OpKind::SliceCols: {
        Matrix out(va.rows(), aux1);
        for (std::size_t r = 0; r < va.rows(); ++r)
          for (std::size_t col = 0; col < aux1; ++col) out(r, col) = va(r, aux0 + col);
        return out;
      }
      case OpKind::Reshape: {
        std::vector<double> v(va.values().begin(), va.values().end());
        return Matrix(aux0, aux1, std::move(v));
      }
      case OpKind::CumsumExclusive: {
        Matrix out(va.rows(), va.cols());
        for (std::size_t r = 0; r < va.rows(); ++r) {
          double s = 0.0;
          for (std::size_t col = 0; col < va.cols(); ++col) {
            out(r, col) = s;
            s += va(r, col);
          }
        }
        return out;
      }
      case OpKind::Leaf:
      case OpKind::Constant:
        break;
    }
    throw std::logic_error("evaluate called on a source node");
  }

  void accumulate(std::uint32_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  Matrix& grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <class F>
  void unary_backward(std::uint32_t self, F&& local) {
    const Node& n = nodes_[self];
    if (!nodes_[n.a].requires_grad) return;
    const Matrix& x = nodes_[n.a].value;
    Matrix& ga = grad_buffer(n.a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += n.grad[i] * local(x[i], n.value[i]);
  }

  void backprop(std::uint32_t self) {
    const Node& n = nodes_[self];
    const Matrix& g = n.grad;
    auto needs = [&](std::uint32_t id) { return id != kNone && nodes_[id].requires_grad; };
    switch (n.kind) {
      case OpKind::Leaf:
      case OpKind::Constant:
      case OpKind::Detach:
        return;
      case OpKind::MatMul:
      case OpKind::Affine: {
        const Matrix& x = nodes_[n.a].value;
        const Matrix& w = nodes_[n.b].value;
        if (needs(n.a)) grad_buffer(n.a).eigen().noalias() += g.eigen() * w.eigen().transpose();
        if (needs(n.b)) grad_buffer(n.b).eigen().noalias() += x.eigen().transpose() * g.eigen();
        if (n.kind == OpKind::Affine && needs(n.c)) {
          Matrix& gb = grad_buffer(n.c);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t col = 0; col < g.cols(); ++col) gb[col] += g(r, col);
        }
        return;
      }
      case OpKind::Add:
      case OpKind::Sub: {
        if (needs(n.a)) {
          Matrix& ga = grad_buffer(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (needs(n.b)) {
          Matrix& gb = grad_buffer(n.b);
          const double s = n.kind == OpKind::Add ? 1.0 : -1.0;
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += s * g[i];
        }
        return;
      }
      case OpKind::Mul: {
        const Matrix& va = nodes_[n.a].value;
        const Matrix& vb = nodes_[n.b].value;
        if (needs(n.a)) {
          Matrix& ga = grad_buffer(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (needs(n.b)) {
          Matrix& gb = grad_buffer(n.b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
        return;
      }
      case OpKind::Neg:
        return unary_backward(self, [](double, double) { return -1.0; });
      case OpKind::Exp:
        return unary_backward(self, [](double, double y) { return y; });
      case OpKind::Sin:
        return unary_backward(self, [](double x, double) { return std::cos(x); });
      case OpKind::Cos:
        return unary_backward(self, [](double x, double) { return -std::sin(x); });
      case OpKind::Relu:
        return unary_backward(self, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
      case OpKind::Sigmoid:
        return unary_backward(self, [](double, double y) { return y * (1.0 - y); });
      case OpKind::Softplus:
        return unary_backward(self, [](double x, double) { return kernels::sigmoid(x); });
      case OpKind::Rsqrt:
        return unary_backward(self, [](double x, double y) { return -0.5 * y / x; });
      case OpKind::Abs:
        return unary_backward(self, [](double x, double) {
          return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        });
      case OpKind::Square:
        return unary_backward(self, [](double x, double) { return 2.0 * x; });
      case OpKind::Scale: {
        const double p = n.param;
        return unary_backward(self, [p](double, double) { return p; });
      }
      case OpKind::AddScalar:
        return unary_backward(self, [](double, double) { return 1.0; });
      case OpKind::SumAll:
      case OpKind::MeanAll: {
        if (!needs(n.a)) return;
        Matrix& ga = grad_buffer(n.a);
        double s = g[0];
        if (n.kind == OpKind::MeanAll) s /= static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        return;
      }
      case OpKind::SumCols:
      case OpKind::MeanCols: {
        if (!needs(n.a)) return;
        Matrix& ga = grad_buffer(n.a);
        const double scale =
            n.kind == OpKind::MeanCols ? 1.0 / static_cast<double>(ga.cols()) : 1.0;
        for (std::size_t r = 0; r < ga.rows(); ++r)
          for (std::size_t col = 0; col < ga.cols(); ++col) ga(r, col) += g[r] * scale;
        return;
      }
      case OpKind::SumRows:
      case OpKind::MeanRows: {
        if (!needs(n.a)) return;
        Matrix& ga = grad_buffer(n.a);
        const double scale =
            n.kind == OpKind::MeanRows ? 1.0 / static_cast<double>(ga.rows()) : 1.0;
        for (std::size_t r = 0; r < ga.rows(); ++r)
          for (std::size_t col = 0; col < ga.cols(); ++col) ga(r, col) += g[col] * scale;
        return;
      }
      case OpKind::BroadcastCols: {
        if (!needs(n.a)) return;
        Matrix& ga = grad_buffer(n.a);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t col = 0; col < g.cols(); ++col) ga[r] += g(r, col);
        return;
      }
      case OpKind::ConcatCols: {
        const std::size_t p = nodes_[n.a].value.cols();
        const std::size_t q = nodes_[n.b].value.cols();
        if (needs(n.a)) {
          Matrix& ga = grad_buffer(n.a);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t col = 0; col < p; ++col) ga(r, col) += g(r, col);
        }
        if (needs(n.b)) {
          Matrix& gb = grad_buffer(n.b);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t col = 0; col < q; ++col) gb(r, col) += g(r, p + col);
        }
        return;
      }
      case OpKind::SliceCols: {
        if (!needs(n.a)) return;
        Matrix& ga = grad_buffer(n.a);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t col = 0; col < n.aux1; ++col) ga(r, n.aux0 + col) += g(r, col);
        return;
      }
      case OpKind::Reshape: {
        if (!needs(n.a)) return;
        Matrix& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        return;
      }
      case OpKind::CumsumExclusive: {
        if (!needs(n.a)) return;
        // out[j] = sum_{k<j} x[k]  =>  dx[k] = sum_{j>k} g[j]
        Matrix& ga = grad_buffer(n.a);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double suffix = 0.0;
          for (std::size_t col = g.cols(); col-- > 0;) {
            ga(r, col) += suffix;
            suffix += g(r, col);
          }
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Tensor::value() const { return tape_->value(id_); }
inline const Matrix& Tensor::grad() const { return tape_->grad(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

namespace ad {

namespace detail {
inline Tape& same_tape(const Tensor& a, const Tensor& b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw std::invalid_argument("operands live on different tapes");
  return *a.tape();
}
inline Tape& tape_of(const Tensor& a) {
  if (a.tape() == nullptr) throw std::invalid_argument("tensor is not attached to a tape");
  return *a.tape();
}
inline Tensor unary(OpKind k, const Tensor& a, double p = 0.0) {
  return tape_of(a).record(k, a.id(), Tape::kNone, Tape::kNone, p);
}
inline Tensor binary(OpKind k, const Tensor& a, const Tensor& b) {
  return same_tape(a, b).record(k, a.id(), b.id());
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  return detail::binary(OpKind::MatMul, a, b);
}
/// x·W + b with b a 1×n row broadcast over rows.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::same_tape(x, w);
  detail::same_tape(x, b);
  return x.tape()->record(OpKind::Affine, x.id(), w.id(), b.id());
}
inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(OpKind::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(OpKind::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(OpKind::Mul, a, b); }
inline Tensor neg(const Tensor& a) { return detail::unary(OpKind::Neg, a); }
inline Tensor exp(const Tensor& a) { return detail::unary(OpKind::Exp, a); }
inline Tensor sin(const Tensor& a) { return detail::unary(OpKind::Sin, a); }
inline Tensor cos(const Tensor& a) { return detail::unary(OpKind::Cos, a); }
inline Tensor relu(const Tensor& a) { return detail::unary(OpKind::Relu, a); }
inline Tensor sigmoid(const Tensor& a) { return detail::unary(OpKind::Sigmoid, a); }
inline Tensor softplus(const Tensor& a) { return detail::unary(OpKind::Softplus, a); }
/// 1/sqrt(x); throws std::domain_error on any x <= 0.
inline Tensor rsqrt(const Tensor& a) { return detail::unary(OpKind::Rsqrt, a); }
/// |x| with subgradient 0 at x = 0.
inline Tensor abs(const Tensor& a) { return detail::unary(OpKind::Abs, a); }
inline Tensor square(const Tensor& a) { return detail::unary(OpKind::Square, a); }
inline Tensor scale(const Tensor& a, double s) { return detail::unary(OpKind::Scale, a, s); }
inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(OpKind::AddScalar, a, s);
}
inline Tensor detach(const Tensor& a) { return detail::unary(OpKind::Detach, a); }

/// Axis::Cols sums along each row (m×n -> m×1); Axis::Rows sums down each
/// column (m×n -> 1×n); Axis::All yields 1×1.
inline Tensor sum(const Tensor& a, Axis axis = Axis::All) {
  switch (axis) {
    case Axis::Rows:
      return detail::unary(OpKind::SumRows, a);
    case Axis::Cols:
      return detail::unary(OpKind::SumCols, a);
    case Axis::All:
      break;
  }
  return detail::unary(OpKind::SumAll, a);
}
inline Tensor mean(const Tensor& a, Axis axis = Axis::All) {
  switch (axis) {
    case Axis::Rows:
      return detail::unary(OpKind::MeanRows, a);
    case Axis::Cols:
      return detail::unary(OpKind::MeanCols, a);
    case Axis::All:
      break;
  }
  return detail::unary(OpKind::MeanAll, a);
}

/// Repeats an m×1 column n times: m×n.
inline Tensor broadcast_cols(const Tensor& a, std::size_t n) {
  return detail::tape_of(a).record(OpKind::BroadcastCols, a.id(), Tape::kNone, Tape::kNone, 0.0,
                                   n);
}
inline Tensor concat(const Tensor& a, const Tensor& b) {
  return detail::binary(OpKind::ConcatCols, a, b);
}
inline Tensor slice_cols(const Tensor& a, std::size_t offset, std::size_t width) {
  return detail::tape_of(a).record(OpKind::SliceCols, a.id(), Tape::kNone, Tape::kNone, 0.0,
                                   offset, width);
}
/// Row-major reinterpretation; element order is preserved.
inline Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
  return detail::tape_of(a).record(OpKind::Reshape, a.id(), Tape::kNone, Tape::kNone, 0.0, rows,
                                   cols);
}
/// Per-row exclusive prefix sum: out(r, j) = sum_{k<j} a(r, k).
inline Tensor cumsum_exclusive(const Tensor& a) {
  return detail::unary(OpKind::CumsumExclusive, a);
}

}  // namespace ad
}  // namespace depthnerf
