#pragma once

// Coupled-modality cross-attention block.
//
// Each modality projects its activations to query/key/value (d x n, i.e. the
// projection applied to Z transposed). Queries of one modality attend over the
// keys of the other; the propagated values are added residually, normalized,
// then passed through a position-wise feed-forward net with a second
// residual + normalization.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "fdan/error.hpp"
#include "fdan/matrix.hpp"
#include "fdan/random.hpp"
#include "fdan/tape.hpp"

namespace fdan {

/// Parameters of one modality's stream inside a block. `T` is Matrix for
/// stored parameters and Var for parameters bound to a tape.
template <class T>
struct StreamParams {
  T w_query, w_key, w_value;     // d x d
  T norm1_gain, norm1_bias;      // 1 x d
  T norm2_gain, norm2_bias;      // 1 x d
  T ffn_w1, ffn_b1;              // d x h, 1 x h
  T ffn_w2, ffn_b2;              // h x d, 1 x d

  /// Visits members in checkpoint declaration order.
  template <class F>
  void for_each(F&& f) {
    f(w_query), f(w_key), f(w_value);
    f(norm1_gain), f(norm1_bias), f(norm2_gain), f(norm2_bias);
    f(ffn_w1), f(ffn_b1), f(ffn_w2), f(ffn_b2);
  }
  template <class F>
  void for_each(F&& f) const {
    f(w_query), f(w_key), f(w_value);
    f(norm1_gain), f(norm1_bias), f(norm2_gain), f(norm2_bias);
    f(ffn_w1), f(ffn_b1), f(ffn_w2), f(ffn_b2);
  }
};

template <class T>
struct BlockParams {
  StreamParams<T> visual;
  StreamParams<T> acoustic;

  template <class F>
  void for_each(F&& f) {
    visual.for_each(f);
    acoustic.for_each(f);
  }
  template <class F>
  void for_each(F&& f) const {
    visual.for_each(f);
    acoustic.for_each(f);
  }
};

using AttentionBlockParams = BlockParams<Matrix>;

/// Fan-in uniform matrix U(-1/sqrt(rows), 1/sqrt(rows)).
inline Matrix uniform_fan_in(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

inline StreamParams<Matrix> init_stream(std::size_t d, std::size_t hidden, Rng& rng) {
  StreamParams<Matrix> p;
  p.w_query = uniform_fan_in(d, d, rng);
  p.w_key = uniform_fan_in(d, d, rng);
  p.w_value = uniform_fan_in(d, d, rng);
  p.norm1_gain = Matrix(1, d, 1.0);
  p.norm1_bias = Matrix(1, d);
  p.norm2_gain = Matrix(1, d, 1.0);
  p.norm2_bias = Matrix(1, d);
  p.ffn_w1 = uniform_fan_in(d, hidden, rng);
  p.ffn_b1 = Matrix(1, hidden);
  p.ffn_w2 = uniform_fan_in(hidden, d, rng);
  p.ffn_b2 = Matrix(1, d);
  return p;
}

inline AttentionBlockParams init_block(std::size_t d, std::size_t hidden, Rng& rng) {
  AttentionBlockParams b;
  b.visual = init_stream(d, hidden, rng);
  b.acoustic = init_stream(d, hidden, rng);
  return b;
}

/// All-zero projections and FFN, unit gains, zero biases.
inline StreamParams<Matrix> zero_stream(std::size_t d, std::size_t hidden) {
  StreamParams<Matrix> p;
  p.w_query = p.w_key = p.w_value = Matrix(d, d);
  p.norm1_gain = p.norm2_gain = Matrix(1, d, 1.0);
  p.norm1_bias = p.norm2_bias = Matrix(1, d);
  p.ffn_w1 = Matrix(d, hidden);
  p.ffn_b1 = Matrix(1, hidden);
  p.ffn_w2 = Matrix(hidden, d);
  p.ffn_b2 = Matrix(1, d);
  return p;
}

template <class F>
StreamParams<Var> bind(Tape& tape, const StreamParams<Matrix>& p, F&& make) {
  StreamParams<Var> out;
  auto put = [&](Var& dst, const Matrix& src) { dst = make(tape, src); };
  put(out.w_query, p.w_query);
  put(out.w_key, p.w_key);
  put(out.w_value, p.w_value);
  put(out.norm1_gain, p.norm1_gain);
  put(out.norm1_bias, p.norm1_bias);
  put(out.norm2_gain, p.norm2_gain);
  put(out.norm2_bias, p.norm2_bias);
  put(out.ffn_w1, p.ffn_w1);
  put(out.ffn_b1, p.ffn_b1);
  put(out.ffn_w2, p.ffn_w2);
  put(out.ffn_b2, p.ffn_b2);
  return out;
}

/// Trainable copy of stream parameters on `tape`.
inline StreamParams<Var> bind_variables(Tape& tape, const StreamParams<Matrix>& p) {
  return bind(tape, p, [](Tape& t, const Matrix& m) { return t.variable(m); });
}

inline BlockParams<Var> bind_variables(Tape& tape, const AttentionBlockParams& p) {
  return {bind_variables(tape, p.visual), bind_variables(tape, p.acoustic)};
}

struct QueryKeyValue {
  Var query, key, value;  // each d x n
};

inline QueryKeyValue project_qkv(Var z, const StreamParams<Var>& p) {
  const std::size_t d = p.w_query.rows();
  if (z.cols() != d) {
    throw ShapeError("project_qkv: activations " + z.value().shape_string() +
                     " do not have width " + std::to_string(d));
  }
  const Var zt = transpose(z);
  return {matmul(p.w_query, zt), matmul(p.w_key, zt), matmul(p.w_value, zt)};
}

struct Propagation {
  Var output;   // n_target x d
  Var weights;  // n_target x n_source, row-stochastic
};

/// softmax(Q_target' K_source / sqrt(d)) V_source'.
inline Propagation cross_propagate(Var query_target, Var key_source, Var value_source) {
  const std::size_t d = query_target.rows();
  if (key_source.rows() != d || value_source.rows() != d) {
    throw ShapeError("cross_propagate: query " + query_target.value().shape_string() +
                     ", key " + key_source.value().shape_string() + ", value " +
                     value_source.value().shape_string());
  }
  if (key_source.cols() != value_source.cols()) {
    throw ShapeError("cross_propagate: key and value sample counts differ");
  }
  const Var scores =
      scale(matmul(transpose(query_target), key_source), 1.0 / std::sqrt(static_cast<double>(d)));
  const Var weights = softmax_rows(scores);
  return {matmul(weights, transpose(value_source)), weights};
}

inline Var feed_forward(Var z, const StreamParams<Var>& p) {
  const Var hidden = relu(add_row(matmul(z, p.ffn_w1), p.ffn_b1));
  return add_row(matmul(hidden, p.ffn_w2), p.ffn_b2);
}

/// Z <- LN(Z + dZ); Z <- LN(Z + FFN(Z)). An invalid `delta` means dZ = 0.
inline Var fuse_update(Var z, Var delta, const StreamParams<Var>& p) {
  Var mixed = z;
  if (delta.valid()) {
    if (!delta.value().same_shape(z.value())) {
      throw ShapeError("fuse_update: " + z.value().shape_string() + " vs update " +
                       delta.value().shape_string());
    }
    mixed = z + delta;
  }
  const Var y = layer_norm(mixed, p.norm1_gain, p.norm1_bias);
  return layer_norm(y + feed_forward(y, p), p.norm2_gain, p.norm2_bias);
}

struct BlockOutput {
  Var visual;
  Var acoustic;
  Var weights_to_visual;    // visual queries over acoustic keys
  Var weights_to_acoustic;  // acoustic queries over visual keys
};

/// One cross-attention layer over both modalities. With `attend` false the
/// propagated terms are dropped and each stream reduces to its residual
/// feed-forward path.
inline BlockOutput cross_attention_block(Var zv, Var za, const BlockParams<Var>& p,
                                         bool attend = true) {
  if (zv.cols() != za.cols()) {
    throw ShapeError("cross_attention_block: widths differ, " + zv.value().shape_string() +
                     " vs " + za.value().shape_string());
  }
  if (!attend) {
    return {fuse_update(zv, Var{}, p.visual), fuse_update(za, Var{}, p.acoustic), Var{}, Var{}};
  }
  const QueryKeyValue v = project_qkv(zv, p.visual);
  const QueryKeyValue a = project_qkv(za, p.acoustic);
  const Propagation a_to_v = cross_propagate(v.query, a.key, a.value);
  const Propagation v_to_a = cross_propagate(a.query, v.key, v.value);
  return {fuse_update(zv, a_to_v.output, p.visual), fuse_update(za, v_to_a.output, p.acoustic),
          a_to_v.weights, v_to_a.weights};
}

/// Single-stream inference path (dZ = 0), used when the other modality is
/// unavailable.
inline Var self_update(Var z, const StreamParams<Var>& p) { return fuse_update(z, Var{}, p); }

}  // namespace fdan
