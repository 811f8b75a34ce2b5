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

#ifndef CAPREG_AUTODIFF_SVD_H_
#define CAPREG_AUTODIFF_SVD_H_

#include <Eigen/Core>

#include "capreg/autodiff/tensor.h"

namespace capreg::ad {

struct SvdOptions {
  // Pair (i, j) counts as orthogonal once |g_i . g_j| <= tolerance *
  // |g_i| |g_j|. Zero selects rows * machine epsilon.
  double tolerance = 0.0;
  int max_sweeps = 80;
};

// Thin decomposition a = u * diag(singular_values) * v^T with
// k = min(rows, cols) columns in u and v.
struct SvdResult {
  Eigen::MatrixXd u;
  Eigen::VectorXd singular_values;  // descending, non-negative
  Eigen::MatrixXd v;
  int sweeps = 0;
};

// One-sided (Hestenes) Jacobi SVD. Rotations act on the columns of a or a^T,
// whichever has fewer, so the implicit Gram matrix is the smaller one.
// Left/right vectors belonging to zero singular values are completed to an
// orthonormal set. Throws NumericError on non-finite input or when the sweep
// cap is reached; the message carries the remaining off-diagonal residual.
SvdResult svd(const Eigen::MatrixXd& a, const SvdOptions& options = {});

template <typename T>
SvdResult svd(const Tensor<T>& matrix, const SvdOptions& options = {});

// Row-major copy of a rank-2 tensor into a double matrix.
template <typename T>
Eigen::MatrixXd to_matrix(const Tensor<T>& matrix);

}  // namespace capreg::ad

#endif  // CAPREG_AUTODIFF_SVD_H_
