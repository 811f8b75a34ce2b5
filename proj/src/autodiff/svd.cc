// Copyright 2026 The capreg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "capreg/autodiff/svd.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace capreg::ad {
namespace {

// Fills every column flagged in `missing` with a unit vector orthogonal to
// the remaining (orthonormal) columns of q.
void complete_basis(Eigen::MatrixXd& q, const std::vector<bool>& missing) {
  const Eigen::Index rows = q.rows();
  std::vector<Eigen::Index> known;
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    if (!missing[c]) known.push_back(c);
  }
  Eigen::Index candidate = 0;
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    if (!missing[c]) continue;
    while (candidate < rows) {
      Eigen::VectorXd v = Eigen::VectorXd::Unit(rows, candidate++);
      // Two Gram-Schmidt passes.
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index k : known) v -= q.col(k).dot(v) * q.col(k);
      }
      const double norm = v.norm();
      if (norm > 0.5) {
        q.col(c) = v / norm;
        known.push_back(c);
        break;
      }
    }
  }
}

}  // namespace

SvdResult svd(const Eigen::MatrixXd& a, const SvdOptions& options) {
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (!std::isfinite(a(i, j))) {
        throw NumericError("svd: non-finite entry at (" + std::to_string(i) +
                           "," + std::to_string(j) + ")");
      }
    }
  }
  const bool transposed = a.rows() < a.cols();
  Eigen::MatrixXd g = transposed ? Eigen::MatrixXd(a.transpose()) : a;
  const Eigen::Index rows = g.rows();
  const Eigen::Index cols = g.cols();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(cols, cols);

  const double tol =
      options.tolerance > 0.0
          ? options.tolerance
          : static_cast<double>(std::max<Eigen::Index>(rows, 1)) *
                std::numeric_limits<double>::epsilon();

  // Columns at roundoff level relative to the whole matrix are treated as
  // exact zeros; otherwise their rotation residual never settles.
  const double frob = g.norm();
  const double floor =
      std::pow(std::numeric_limits<double>::epsilon() * frob, 2);

  SvdResult result;
  double residual = 0.0;
  bool converged = cols < 2;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    residual = 0.0;
    for (Eigen::Index i = 0; i + 1 < cols; ++i) {
      for (Eigen::Index j = i + 1; j < cols; ++j) {
        const double alpha = g.col(i).squaredNorm();
        const double beta = g.col(j).squaredNorm();
        const double gamma = g.col(i).dot(g.col(j));
        if (alpha <= floor || beta <= floor) continue;
        const double ratio = std::abs(gamma) / std::sqrt(alpha * beta);
        residual = std::max(residual, ratio);
        if (ratio <= tol) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index k = 0; k < rows; ++k) {
          const double gi = g(k, i);
          const double gj = g(k, j);
          g(k, i) = c * gi - s * gj;
          g(k, j) = s * gi + c * gj;
        }
        for (Eigen::Index k = 0; k < cols; ++k) {
          const double vi = v(k, i);
          const double vj = v(k, j);
          v(k, i) = c * vi - s * vj;
          v(k, j) = s * vi + c * vj;
        }
      }
    }
    result.sweeps = sweep + 1;
    converged = residual <= tol;
  }
  if (!converged) {
    throw NumericError("svd: no convergence after " +
                       std::to_string(options.max_sweeps) +
                       " sweeps, off-diagonal residual " +
                       std::to_string(residual));
  }

  Eigen::VectorXd sigma(cols);
  for (Eigen::Index i = 0; i < cols; ++i) sigma(i) = g.col(i).norm();
  std::vector<Eigen::Index> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x,
                                                   Eigen::Index y) {
    return sigma(x) > sigma(y);
  });

  const double sigma_max = cols > 0 ? sigma(order[0]) : 0.0;
  const double negligible = std::max(sigma_max, 1.0) *
                            static_cast<double>(rows) *
                            std::numeric_limits<double>::epsilon();
  Eigen::MatrixXd left(rows, cols);
  Eigen::MatrixXd right(cols, cols);
  Eigen::VectorXd sorted(cols);
  std::vector<bool> missing(cols, false);
  for (Eigen::Index r = 0; r < cols; ++r) {
    const Eigen::Index src = order[r];
    sorted(r) = sigma(src);
    right.col(r) = v.col(src);
    if (sigma(src) > negligible) {
      left.col(r) = g.col(src) / sigma(src);
    } else {
      left.col(r).setZero();
      missing[r] = true;
    }
  }
  complete_basis(left, missing);

  result.singular_values = sorted;
  if (transposed) {
    result.u = right;
    result.v = left;
  } else {
    result.u = left;
    result.v = right;
  }
  return result;
}

template <typename T>
Eigen::MatrixXd to_matrix(const Tensor<T>& matrix) {
  if (matrix.rank() != 2) {
    throw ShapeError("svd: expected a rank-2 tensor, got shape " +
                     to_string(matrix.shape()));
  }
  const std::size_t rows = matrix.dim(0);
  const std::size_t cols = matrix.dim(1);
  Eigen::MatrixXd out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out(i, j) = static_cast<double>(matrix.at(i, j));
    }
  }
  return out;
}

template <typename T>
SvdResult svd(const Tensor<T>& matrix, const SvdOptions& options) {
  return svd(to_matrix(matrix), options);
}

template Eigen::MatrixXd to_matrix(const Tensor<float>&);
template Eigen::MatrixXd to_matrix(const Tensor<double>&);
template SvdResult svd(const Tensor<float>&, const SvdOptions&);
template SvdResult svd(const Tensor<double>&, const SvdOptions&);

}  // namespace capreg::ad
