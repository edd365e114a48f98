#pragma once

#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

#include "fdan/error.hpp"
#include "fdan/matrix.hpp"

namespace fdan {

/// Orthonormal principal directions (d x k, columns by decreasing variance),
/// each signed so that its largest-magnitude loading is positive.
inline Matrix principal_directions(const Matrix& features, std::size_t k) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (k == 0 || k > d) throw InputError("cannot take " + std::to_string(k) + " directions of width " + std::to_string(d));
  if (n < k) {
    throw InputError("pca needs at least " + std::to_string(k) + " samples, got " +
                     std::to_string(n));
  }
  Eigen::MatrixXd x(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) x(r, c) = features(r, c);
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw InputError("pca eigen-decomposition failed");

  Matrix dirs(d, k);
  for (std::size_t j = 0; j < k; ++j) {
    // Eigenvalues come back ascending.
    const Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - j));
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    const double sign = v(arg) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < d; ++i) dirs(i, j) = sign * v(static_cast<Eigen::Index>(i));
  }
  return dirs;
}

/// Column-centered data projected on the top-k principal directions.
inline Matrix pca_project(const Matrix& features, std::size_t k = 2) {
  const Matrix dirs = principal_directions(features, k);
  Matrix centered = features;
  for (std::size_t c = 0; c < centered.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < centered.rows(); ++r) mean += centered(r, c);
    mean /= static_cast<double>(centered.rows());
    for (std::size_t r = 0; r < centered.rows(); ++r) centered(r, c) -= mean;
  }
  return matmul(centered, dirs);
}

}  // namespace fdan
