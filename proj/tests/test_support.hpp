#pragma once

// Test-only oracles: central finite differences and random instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "fdan/matrix.hpp"

namespace fdan::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(gen);
  return m;
}

inline Matrix random_one_hot(std::size_t rows, std::size_t classes, std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  Matrix y(rows, classes);
  for (std::size_t r = 0; r < rows; ++r) y(r, pick(gen)) = 1.0;
  return y;
}

/// Central differences of a scalar function of one matrix argument.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                               double step = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = f(probe);
    probe[i] = saved - step;
    const double down = f(probe);
    probe[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Largest entry-wise relative error |a - n| / max(|a|, |n|, floor).
/// The floor keeps entries whose true gradient is ~0 from dividing
/// round-off by round-off.
inline double max_relative_error(const Matrix& analytic, const Matrix& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& gen) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), gen);
  return p;
}

}  // namespace fdan::testing
