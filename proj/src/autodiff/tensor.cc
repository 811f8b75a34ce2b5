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

#include "capreg/autodiff/tensor.h"

#include <algorithm>
#include <functional>
#include <numeric>

namespace capreg::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Precision parse_precision(std::string_view text) {
  if (text == "f32" || text == "float32") return Precision::kFloat32;
  if (text == "f64" || text == "float64") return Precision::kFloat64;
  throw std::invalid_argument("unknown precision '" + std::string(text) +
                              "' (expected f32 or f64)");
}

std::string_view to_string(Precision precision) {
  return precision == Precision::kFloat32 ? "f32" : "f64";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != numel(shape_)) {
    throw ShapeError("tensor: " + std::to_string(data_.size()) +
                     " values do not fill shape " + to_string(shape_));
  }
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (grad_.empty()) grad_.assign(data_.size(), T(0));
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), T(0));
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (numel(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " +
                     to_string(shape));
  }
  shape_ = std::move(shape);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace capreg::ad
