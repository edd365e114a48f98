#pragma once

// Kernel embeddings and the two discrepancy estimators built on them:
// plain MMD (biased V-statistic) and class-weighted local MMD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fdan/error.hpp"
#include "fdan/matrix.hpp"
#include "fdan/tape.hpp"

namespace fdan {

enum class KernelFamily { kGaussian, kLinear };

/// Kernel family, base bandwidth (sigma^2, in squared-distance units) and the
/// ladder of multipliers whose kernels are averaged. An empty bandwidth means
/// "median heuristic on the pooled inputs".
struct KernelSpec {
  KernelFamily family = KernelFamily::kGaussian;
  std::optional<double> bandwidth;
  std::vector<double> ladder{0.25, 0.5, 1.0, 2.0, 4.0};

  static KernelSpec linear() { return {KernelFamily::kLinear, std::nullopt, {1.0}}; }
  static KernelSpec gaussian(std::optional<double> sigma2,
                             std::vector<double> ladder = {0.25, 0.5, 1.0, 2.0, 4.0}) {
    return {KernelFamily::kGaussian, sigma2, std::move(ladder)};
  }

  void validate() const {
    if (ladder.empty()) throw ParameterError("kernel ladder is empty");
    for (double m : ladder) {
      if (!(m > 0.0) || !std::isfinite(m)) {
        throw ParameterError("kernel ladder multipliers must be positive, got " +
                             std::to_string(m));
      }
    }
    if (bandwidth && !(*bandwidth > 0.0)) {
      throw ParameterError("kernel bandwidth must be positive, got " +
                           std::to_string(*bandwidth));
    }
  }
};

/// Median squared Euclidean distance over all unordered pairs of rows of the
/// pooled set X u Y. Zero median falls back to the mean of the nonzero
/// distances; all-zero distances give 1.
inline double median_heuristic_bandwidth(const Matrix& x, const Matrix& y) {
  const Matrix pooled = vstack(x, y);
  const std::size_t n = pooled.rows();
  std::vector<double> d2;
  d2.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = pooled.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto b = pooled.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      d2.push_back(s);
    }
  }
  if (d2.empty()) return 1.0;
  std::sort(d2.begin(), d2.end());
  const std::size_t m = d2.size();
  double median = m % 2 == 1 ? d2[m / 2] : 0.5 * (d2[m / 2 - 1] + d2[m / 2]);
  if (median > 0.0) return median;
  double total = 0.0;
  std::size_t count = 0;
  for (double v : d2) {
    if (v > 0.0) {
      total += v;
      ++count;
    }
  }
  return count == 0 ? 1.0 : total / static_cast<double>(count);
}

/// Bandwidth actually used for a kernel evaluation between X and Y.
inline double resolve_bandwidth(const KernelSpec& spec, const Matrix& x, const Matrix& y) {
  const double sigma2 = spec.bandwidth ? *spec.bandwidth : median_heuristic_bandwidth(x, y);
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw ParameterError("resolved kernel bandwidth must be positive, got " +
                         std::to_string(sigma2));
  }
  return sigma2;
}

/// Kernel matrix with an already-resolved bandwidth; differentiable in x and y.
inline Var kernel_matrix(Var x, Var y, const KernelSpec& spec, double sigma2) {
  if (x.cols() != y.cols()) {
    throw ShapeError("kernel feature width mismatch: " + x.value().shape_string() + " vs " +
                     y.value().shape_string());
  }
  if (spec.family == KernelFamily::kLinear) return matmul(x, transpose(y));
  if (!(sigma2 > 0.0)) throw ParameterError("gaussian kernel bandwidth must be positive");
  const Var d2 = squared_distances(x, y);
  Var total;
  for (double tau : spec.ladder) {
    const Var k = exp(scale(d2, -1.0 / (tau * sigma2)));
    total = total.valid() ? total + k : k;
  }
  return spec.ladder.size() == 1 ? total
                                 : scale(total, 1.0 / static_cast<double>(spec.ladder.size()));
}

/// Entry (i, j) = mean over ladder multipliers t of exp(-||x_i - y_j||^2 / (t sigma^2)).
inline Var gaussian_kernel_matrix(Var x, Var y, const KernelSpec& spec) {
  spec.validate();
  return kernel_matrix(x, y, spec, resolve_bandwidth(spec, x.value(), y.value()));
}

inline Matrix gaussian_kernel_matrix(const Matrix& x, const Matrix& y, const KernelSpec& spec) {
  Tape t;
  return gaussian_kernel_matrix(t.constant(x), t.constant(y), spec).value();
}

/// Per-sample per-class weights w_nc = y_nc / sum_m y_mc; absent classes get
/// an all-zero column.
struct ClassWeights {
  Matrix weights;
  std::vector<bool> present;

  std::size_t classes() const { return weights.cols(); }
};

/// Throws LabelError unless every row is exactly one-hot.
inline void require_one_hot(const Matrix& y) {
  for (std::size_t r = 0; r < y.rows(); ++r) {
    std::size_t ones = 0;
    for (double v : y.row(r)) {
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) throw LabelError("label row is not one-hot", r);
  }
}

inline ClassWeights class_weights(const Matrix& one_hot) {
  require_one_hot(one_hot);
  const std::size_t c_count = one_hot.cols();
  std::vector<double> counts(c_count, 0.0);
  for (std::size_t r = 0; r < one_hot.rows(); ++r)
    for (std::size_t c = 0; c < c_count; ++c) counts[c] += one_hot(r, c);
  ClassWeights w{Matrix(one_hot.rows(), c_count), std::vector<bool>(c_count)};
  for (std::size_t c = 0; c < c_count; ++c) w.present[c] = counts[c] > 0.0;
  for (std::size_t r = 0; r < one_hot.rows(); ++r)
    for (std::size_t c = 0; c < c_count; ++c)
      if (w.present[c]) w.weights(r, c) = one_hot(r, c) / counts[c];
  return w;
}

struct Discrepancy {
  Var value;
  /// No class is present in both batches; value is then 0.
  bool no_overlap = false;
  double bandwidth = 0.0;
};

/// Class-weighted local MMD:
///   (1/C') sum_c [wv_c' Kvv wv_c + wa_c' Kaa wa_c - 2 wv_c' Kva wa_c]
/// over the C' classes present in both batches. The bandwidth is resolved
/// once on the pooled activations and held constant for differentiation.
inline Discrepancy lmmd(Var zv, Var za, const ClassWeights& wv, const ClassWeights& wa,
                        const KernelSpec& spec) {
  spec.validate();
  Tape& tape = *zv.tape();
  if (wv.classes() != wa.classes()) {
    throw ParameterError("class count mismatch: " + std::to_string(wv.classes()) + " vs " +
                         std::to_string(wa.classes()));
  }
  if (zv.cols() != za.cols()) {
    throw ShapeError("lmmd feature width mismatch: " + zv.value().shape_string() + " vs " +
                     za.value().shape_string());
  }
  if (wv.weights.rows() != zv.rows() || wa.weights.rows() != za.rows()) {
    throw ShapeError("class weights do not match the sample counts");
  }
  const std::size_t c_count = wv.classes();
  std::size_t shared = 0;
  for (std::size_t c = 0; c < c_count; ++c) shared += (wv.present[c] && wa.present[c]) ? 1 : 0;
  if (shared == 0) return {tape.constant(Matrix(1, 1, 0.0)), true, 0.0};

  const double sigma2 = spec.family == KernelFamily::kGaussian
                            ? resolve_bandwidth(spec, zv.value(), za.value())
                            : 0.0;
  Matrix mask(c_count, c_count);
  for (std::size_t c = 0; c < c_count; ++c)
    if (wv.present[c] && wa.present[c]) mask(c, c) = 1.0 / static_cast<double>(shared);

  const Var w_v = tape.constant(wv.weights);
  const Var w_a = tape.constant(wa.weights);
  const Var kvv = kernel_matrix(zv, zv, spec, sigma2);
  const Var kaa = kernel_matrix(za, za, spec, sigma2);
  const Var kva = kernel_matrix(zv, za, spec, sigma2);
  const Var vv = matmul(transpose(w_v), matmul(kvv, w_v));
  const Var aa = matmul(transpose(w_a), matmul(kaa, w_a));
  const Var va = matmul(transpose(w_v), matmul(kva, w_a));
  const Var per_class = (vv + aa) - scale(va, 2.0);
  return {sum(hadamard(per_class, tape.constant(std::move(mask)))), false, sigma2};
}

struct DiscrepancyValue {
  double value = 0.0;
  bool no_overlap = false;
};

inline DiscrepancyValue lmmd(const Matrix& zv, const Matrix& za, const ClassWeights& wv,
                             const ClassWeights& wa, const KernelSpec& spec) {
  Tape t;
  const Discrepancy d = lmmd(t.constant(zv), t.constant(za), wv, wa, spec);
  return {d.value.scalar(), d.no_overlap};
}

/// Biased V-statistic MMD^2: mean(Kvv) + mean(Kaa) - 2 mean(Kva).
inline Discrepancy mmd(Var zv, Var za, const KernelSpec& spec) {
  spec.validate();
  if (zv.rows() == 0 || za.rows() == 0) throw ParameterError("mmd of an empty sample");
  if (zv.cols() != za.cols()) {
    throw ShapeError("mmd feature width mismatch: " + zv.value().shape_string() + " vs " +
                     za.value().shape_string());
  }
  const double sigma2 = spec.family == KernelFamily::kGaussian
                            ? resolve_bandwidth(spec, zv.value(), za.value())
                            : 0.0;
  const double nv = static_cast<double>(zv.rows());
  const double na = static_cast<double>(za.rows());
  const Var vv = scale(sum(kernel_matrix(zv, zv, spec, sigma2)), 1.0 / (nv * nv));
  const Var aa = scale(sum(kernel_matrix(za, za, spec, sigma2)), 1.0 / (na * na));
  const Var va = scale(sum(kernel_matrix(zv, za, spec, sigma2)), 2.0 / (nv * na));
  return {(vv + aa) - va, false, sigma2};
}

inline double mmd(const Matrix& zv, const Matrix& za, const KernelSpec& spec) {
  Tape t;
  return mmd(t.constant(zv), t.constant(za), spec).value.scalar();
}

}  // namespace fdan
