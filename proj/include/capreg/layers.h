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

// Small parameterised building blocks shared by the encoder and the atlas.

#ifndef CAPREG_LAYERS_H_
#define CAPREG_LAYERS_H_

#include <memory>
#include <string>

#include "capreg/autodiff/ops.h"
#include "capreg/autodiff/params.h"
#include "capreg/util/rng.h"

namespace capreg {

// Matrix of shape [rows, cols] with orthonormal rows or columns (whichever
// are fewer), scaled by `gain`.
template <typename T>
ad::Tensor<T> orthogonal_init(std::size_t rows, std::size_t cols, double gain,
                              Rng& rng);

// x W (+ b), W: [in, out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ad::ParameterStore<T>& store, const std::string& name,
         std::size_t in, std::size_t out, bool bias, double gain, Rng& rng);

  ad::Var<T> operator()(ad::Var<T> x) const;

  std::size_t in_features() const { return weight_->dim(0); }
  std::size_t out_features() const { return weight_->dim(1); }
  ad::Tensor<T>& weight() const { return *weight_; }

 private:
  std::shared_ptr<ad::Tensor<T>> weight_;
  std::shared_ptr<ad::Tensor<T>> bias_;
};

// Batch norm over [B, F] with affine parameters; running statistics live in
// the store as non-trainable buffers so they are checkpointed.
template <typename T>
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  BatchNorm1d(ad::ParameterStore<T>& store, const std::string& name,
              std::size_t features);

  ad::Var<T> operator()(ad::Var<T> x, bool training) const;

 private:
  std::shared_ptr<ad::Tensor<T>> gamma_, beta_;
  std::shared_ptr<ad::Tensor<T>> running_mean_, running_var_;
};

}  // namespace capreg

#endif  // CAPREG_LAYERS_H_
