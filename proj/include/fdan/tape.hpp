#pragma once

// Reverse-mode differentiation over a linear tape of matrix operations.
//
// Every operation appends one node holding its value and whatever it needs
// for the backward sweep. Nodes are numbered in creation order, which is a
// topological order, so backward() is a single reverse scan.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fdan/error.hpp"
#include "fdan/matrix.hpp"

namespace fdan {

class Tape;

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kScale,
  kHadamard,
  kAddRow,
  kRelu,
  kExp,
  kSoftmaxRows,
  kLayerNorm,
  kSum,
  kSquaredDistances,
  kSoftmaxCrossEntropy,
};

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct TapeNode {
  OpKind op = OpKind::kLeaf;
  std::array<std::size_t, 3> inputs{};
  std::uint8_t input_count = 0;
  bool needs_grad = false;
  double scalar = 0.0;
  Matrix value;
  Matrix cache;   // normalized activations; class probabilities
  Matrix cache2;  // per-row inverse std; one-hot labels
};

/// Gradients of one backward sweep, indexed by node.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Matrix> grads) : grads_(std::move(grads)) {}

  /// Gradient with respect to `v`; a zero matrix when `v` did not reach the loss.
  Matrix of(Var v) const {
    const auto& g = grads_.at(v.id());
    if (!g.empty() || v.value().empty()) return g;
    return Matrix::zeros_like(v.value());
  }
  bool reached(Var v) const { return !grads_.at(v.id()).empty(); }

 private:
  std::vector<Matrix> grads_;
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf: receives a gradient.
  Var variable(Matrix value) { return leaf(std::move(value), true); }
  /// Leaf that is never differentiated.
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var push(OpKind op, std::initializer_list<Var> inputs, Matrix value, Matrix cache = {},
           Matrix cache2 = {}, double scalar = 0.0) {
    TapeNode n;
    n.op = op;
    for (const Var& in : inputs) {
      if (in.tape() != this) throw ContractError("operand belongs to a different tape");
      n.inputs[n.input_count++] = in.id();
      n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
    }
    n.value = std::move(value);
    n.cache = std::move(cache);
    n.cache2 = std::move(cache2);
    n.scalar = scalar;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// Reverse sweep from a 1x1 root.
  Gradients backward(Var loss) const;

 private:
  Var leaf(Matrix value, bool trainable) {
    TapeNode n;
    n.value = std::move(value);
    n.needs_grad = trainable;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<TapeNode> nodes_;
};

inline const Matrix& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound variable");
  return tape_->node(id_).value;
}

inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("scalar() on a " + v.shape_string() + " node");
  }
  return v[0];
}

// ---------------------------------------------------------------------------
// Forward operations

inline Var matmul(Var a, Var b) {
  return a.tape()->push(OpKind::kMatMul, {a, b}, matmul(a.value(), b.value()));
}

inline Var transpose(Var a) {
  return a.tape()->push(OpKind::kTranspose, {a}, a.value().transposed());
}

inline Var operator+(Var a, Var b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: " + a.value().shape_string() + " vs " + b.value().shape_string());
  }
  return a.tape()->push(OpKind::kAdd, {a, b}, a.value() + b.value());
}

inline Var operator-(Var a, Var b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("sub: " + a.value().shape_string() + " vs " + b.value().shape_string());
  }
  return a.tape()->push(OpKind::kSub, {a, b}, a.value() - b.value());
}

inline Var scale(Var a, double s) {
  return a.tape()->push(OpKind::kScale, {a}, a.value() * s, {}, {}, s);
}
inline Var operator*(double s, Var a) { return scale(a, s); }

inline Var hadamard(Var a, Var b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("hadamard: " + a.value().shape_string() + " vs " +
                     b.value().shape_string());
  }
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape()->push(OpKind::kHadamard, {a, b}, std::move(out));
}

/// m + row, with the 1xn row added to every row of m.
inline Var add_row(Var m, Var row) {
  const Matrix& mv = m.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != mv.cols()) {
    throw ShapeError("add_row: " + mv.shape_string() + " + row " + rv.shape_string());
  }
  Matrix out = mv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
  return m.tape()->push(OpKind::kAddRow, {m, row}, std::move(out));
}

inline Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Var relu(Var a) { return a.tape()->push(OpKind::kRelu, {a}, relu(a.value())); }

inline Var exp(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::exp(v);
  return a.tape()->push(OpKind::kExp, {a}, std::move(out));
}

inline Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : in) mx = std::max(mx, v);
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

inline Var softmax_rows(Var a) {
  return a.tape()->push(OpKind::kSoftmaxRows, {a}, softmax_rows(a.value()));
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise standardization (population variance, eps inside the root),
/// then per-column gain and bias.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps) {
  const Matrix& xv = x.value();
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  const std::size_t n = xv.cols();
  if (n < 2) throw ShapeError("layer_norm needs at least 2 columns, got " + xv.shape_string());
  if (!(eps > 0.0)) throw ParameterError("layer_norm eps must be positive");
  if (gv.rows() != 1 || gv.cols() != n || !bv.same_shape(gv)) {
    throw ShapeError("layer_norm gain/bias must be 1x" + std::to_string(n) + ", got " +
                     gv.shape_string() + " and " + bv.shape_string());
  }
  Matrix xhat(xv.rows(), n);
  Matrix inv_std(xv.rows(), 1);
  Matrix out(xv.rows(), n);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (row[c] - mean) * is;
      out(r, c) = xhat(r, c) * gv[c] + bv[c];
    }
  }
  return x.tape()->push(OpKind::kLayerNorm, {x, gain, bias}, std::move(out), std::move(xhat),
                        std::move(inv_std), eps);
}

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                         double eps = kLayerNormEps) {
  Tape t;
  return layer_norm(t.constant(x), t.constant(gain), t.constant(bias), eps).value();
}

inline Var sum(Var a) {
  return a.tape()->push(OpKind::kSum, {a}, Matrix(1, 1, a.value().sum()));
}

/// Entry (i, j) = ||x_i - y_j||^2.
inline Matrix squared_distances(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) {
    throw ShapeError("squared_distances feature width: " + x.shape_string() + " vs " +
                     y.shape_string());
  }
  Matrix out(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < y.rows(); ++j) {
      const auto yj = y.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < xi.size(); ++k) {
        const double d = xi[k] - yj[k];
        s += d * d;
      }
      out(i, j) = s;
    }
  }
  return out;
}

inline Var squared_distances(Var x, Var y) {
  return x.tape()->push(OpKind::kSquaredDistances, {x, y},
                        squared_distances(x.value(), y.value()));
}

/// Mean over rows of -log softmax(logits)[true class]; `one_hot` must already
/// be validated. Log-sum-exp stabilized.
inline Var softmax_cross_entropy(Var logits, const Matrix& one_hot) {
  const Matrix& z = logits.value();
  if (!z.same_shape(one_hot)) {
    throw ShapeError("cross entropy: logits " + z.shape_string() + " vs labels " +
                     one_hot.shape_string());
  }
  Matrix p = softmax_rows(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto row = z.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < row.size(); ++c) loss += one_hot(r, c) * (lse - row[c]);
  }
  loss /= static_cast<double>(z.rows());
  return logits.tape()->push(OpKind::kSoftmaxCrossEntropy, {logits}, Matrix(1, 1, loss),
                             std::move(p), one_hot);
}

// ---------------------------------------------------------------------------
// Backward sweep

inline Gradients Tape::backward(Var loss) const {
  if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
  const Matrix& root = nodes_[loss.id()].value;
  if (root.rows() != 1 || root.cols() != 1) {
    throw ContractError("backward requires a 1x1 loss, got " + root.shape_string());
  }
  std::vector<Matrix> grads(nodes_.size());
  grads[loss.id()] = Matrix(1, 1, 1.0);

  auto accumulate = [&](std::size_t id, Matrix g) {
    if (!nodes_[id].needs_grad) return;
    if (grads[id].empty()) {
      grads[id] = std::move(g);
    } else {
      grads[id] += g;
    }
  };

  for (std::size_t idx = loss.id() + 1; idx-- > 0;) {
    const TapeNode& n = nodes_[idx];
    if (grads[idx].empty() || !n.needs_grad || n.op == OpKind::kLeaf) continue;
    const Matrix& g = grads[idx];
    const auto in = [&](int k) -> const TapeNode& { return nodes_[n.inputs[k]]; };
    const auto wants = [&](int k) { return nodes_[n.inputs[k]].needs_grad; };

    switch (n.op) {
      case OpKind::kLeaf:
        break;
      case OpKind::kMatMul:
        if (wants(0)) accumulate(n.inputs[0], fdan::matmul(g, in(1).value.transposed()));
        if (wants(1)) accumulate(n.inputs[1], fdan::matmul(in(0).value.transposed(), g));
        break;
      case OpKind::kTranspose:
        accumulate(n.inputs[0], g.transposed());
        break;
      case OpKind::kAdd:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case OpKind::kSub:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g * -1.0);
        break;
      case OpKind::kScale:
        accumulate(n.inputs[0], g * n.scalar);
        break;
      case OpKind::kHadamard: {
        if (wants(0)) {
          Matrix ga = g;
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= in(1).value[i];
          accumulate(n.inputs[0], std::move(ga));
        }
        if (wants(1)) {
          Matrix gb = g;
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= in(0).value[i];
          accumulate(n.inputs[1], std::move(gb));
        }
        break;
      }
      case OpKind::kAddRow: {
        accumulate(n.inputs[0], g);
        if (wants(1)) {
          Matrix gr(1, g.cols());
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
          accumulate(n.inputs[1], std::move(gr));
        }
        break;
      }
      case OpKind::kRelu: {
        Matrix gi = g;
        const Matrix& x = in(0).value;
        for (std::size_t i = 0; i < gi.size(); ++i)
          if (!(x[i] > 0.0)) gi[i] = 0.0;
        accumulate(n.inputs[0], std::move(gi));
        break;
      }
      case OpKind::kExp: {
        Matrix gi = g;
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] *= n.value[i];
        accumulate(n.inputs[0], std::move(gi));
        break;
      }
      case OpKind::kSoftmaxRows: {
        const Matrix& p = n.value;
        Matrix gi(p.rows(), p.cols());
        for (std::size_t r = 0; r < p.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
          for (std::size_t c = 0; c < p.cols(); ++c) gi(r, c) = p(r, c) * (g(r, c) - dot);
        }
        accumulate(n.inputs[0], std::move(gi));
        break;
      }
      case OpKind::kLayerNorm: {
        const Matrix& xhat = n.cache;
        const Matrix& inv_std = n.cache2;
        const Matrix& gain = in(1).value;
        const std::size_t cols = xhat.cols();
        if (wants(1) || wants(2)) {
          Matrix gg(1, cols);
          Matrix gb(1, cols);
          for (std::size_t r = 0; r < xhat.rows(); ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              gg[c] += g(r, c) * xhat(r, c);
              gb[c] += g(r, c);
            }
          accumulate(n.inputs[1], std::move(gg));
          accumulate(n.inputs[2], std::move(gb));
        }
        if (wants(0)) {
          Matrix gx(xhat.rows(), cols);
          const double inv_n = 1.0 / static_cast<double>(cols);
          for (std::size_t r = 0; r < xhat.rows(); ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g(r, c) * gain[c];
              mean_d += d;
              mean_dx += d * xhat(r, c);
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g(r, c) * gain[c];
              gx(r, c) = inv_std[r] * (d - mean_d - xhat(r, c) * mean_dx);
            }
          }
          accumulate(n.inputs[0], std::move(gx));
        }
        break;
      }
      case OpKind::kSum: {
        const Matrix& x = in(0).value;
        accumulate(n.inputs[0], Matrix(x.rows(), x.cols(), g[0]));
        break;
      }
      case OpKind::kSquaredDistances: {
        const Matrix& x = in(0).value;
        const Matrix& y = in(1).value;
        const std::size_t d = x.cols();
        if (wants(0)) {
          Matrix gx(x.rows(), d);
          for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < y.rows(); ++j) {
              const double w = 2.0 * g(i, j);
              for (std::size_t k = 0; k < d; ++k) gx(i, k) += w * (x(i, k) - y(j, k));
            }
          accumulate(n.inputs[0], std::move(gx));
        }
        if (wants(1)) {
          Matrix gy(y.rows(), d);
          for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < y.rows(); ++j) {
              const double w = 2.0 * g(i, j);
              for (std::size_t k = 0; k < d; ++k) gy(j, k) += w * (y(j, k) - x(i, k));
            }
          accumulate(n.inputs[1], std::move(gy));
        }
        break;
      }
      case OpKind::kSoftmaxCrossEntropy: {
        Matrix gi = n.cache - n.cache2;
        gi *= g[0] / static_cast<double>(gi.rows());
        accumulate(n.inputs[0], std::move(gi));
        break;
      }
    }
  }
  return Gradients(std::move(grads));
}

}  // namespace fdan
