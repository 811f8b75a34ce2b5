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

// Differentiable kernels. Every op records itself on the tape of its first
// input and throws ShapeError (naming the op and the extents) on illegal
// shapes.

#ifndef CAPREG_AUTODIFF_OPS_H_
#define CAPREG_AUTODIFF_OPS_H_

#include <cstddef>
#include <optional>
#include <vector>

#include "capreg/autodiff/tape.h"
#include "capreg/autodiff/tensor.h"

namespace capreg::ad {

// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
};

struct BatchNormOptions {
  bool training = true;
  double eps = 1e-5;
  double momentum = 0.1;
};

inline constexpr double kNormFloor = 1e-8;
inline constexpr double kNuclearCutoff = 1e-9;

// [m,k] x [k,n] -> [m,n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// Valid (unpadded) convolution. x: [B,C,H,W], weight: [O,C,k,k],
// bias: [O] or absent. Output [B,O,(H-k)/s+1,(W-k)/s+1].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias,
              std::size_t stride);

template <typename T>
Var<T> relu(Var<T> x);

// Per-column normalisation of x: [B,F]. In training mode batch statistics
// are used and, when `state` is given, running averages are updated. In
// inference mode `state` is required.
template <typename T>
Var<T> batchnorm(Var<T> x, BatchNormState<T>* state,
                 const BatchNormOptions& options,
                 std::optional<Var<T>> gamma = std::nullopt,
                 std::optional<Var<T>> beta = std::nullopt);

// Mean over rows of -log softmax(logits)[row, target[row]].
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& targets);

template <typename T>
Var<T> mean(Var<T> x);

template <typename T>
Var<T> sum(Var<T> x);

// Unit L2 norm along the last axis; norms below kNormFloor are floored.
template <typename T>
Var<T> l2_normalize(Var<T> x);

// Elementwise sum. b may also be a rank-1 tensor matching the last extent of
// a, in which case it is broadcast over the leading axes.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> sub(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> add_scalar(Var<T> x, T offset);

// Sum of equally shaped tensors.
template <typename T>
Var<T> add_n(const std::vector<Var<T>>& terms);

template <typename T>
Var<T> transpose(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

// Row-wise softmax of a rank-2 tensor.
template <typename T>
Var<T> softmax(Var<T> x);

// Mean over one axis; the axis is removed from the result.
template <typename T>
Var<T> reduce_mean(Var<T> x, std::size_t axis);

// x[:, index, :] of a rank-3 tensor.
template <typename T>
Var<T> select(Var<T> x, std::size_t index);

// N tensors of shape [B,D] -> [B,N,D].
template <typename T>
Var<T> stack(const std::vector<Var<T>>& parts);

// [Ba,D] and [Bb,D] -> [Ba+Bb,D].
template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b);

// [B,C,H,W] -> [B,H,W,C].
template <typename T>
Var<T> to_channel_last(Var<T> x);

// x[:, h, w, :] of a channel-last map.
template <typename T>
Var<T> location(Var<T> x, std::size_t h, std::size_t w);

// sum_n weights[b,n] * x[b,n,:] for x: [B,N,D], weights: [B,N].
template <typename T>
Var<T> weighted_heads(Var<T> x, Var<T> weights);

// Sum of singular values of a rank-2 tensor. Backward adds U V^T restricted
// to singular values above `cutoff`.
template <typename T>
Var<T> nuclear_norm(Var<T> x, double cutoff = kNuclearCutoff);

// Affine map x W + b with x: [B,in], W: [in,out], b: [out] or absent.
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias);

}  // namespace capreg::ad

#endif  // CAPREG_AUTODIFF_OPS_H_
