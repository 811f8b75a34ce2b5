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

#ifndef CAPREG_AUTODIFF_TENSOR_H_
#define CAPREG_AUTODIFF_TENSOR_H_

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace capreg::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Raised for illegal extents; the message names the op and the offending
// extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised for NaN/Inf values, SVD non-convergence and similar numeric failures.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { kFloat32, kFloat64 };

Precision parse_precision(std::string_view text);
std::string_view to_string(Precision precision);

// Dense row-major array with an optional gradient buffer of the same shape.
// The gradient is allocated on first use.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  T at(std::size_t row, std::size_t col) const {
    return data_[row * shape_[1] + col];
  }

  bool has_grad() const { return !grad_.empty(); }
  // Allocates a zero gradient on first call.
  std::span<T> grad();
  // Empty span when no gradient has been allocated.
  std::span<const T> grad() const { return grad_; }
  void zero_grad();

  // Same data, new extents. Element count must match.
  void reshape(Shape shape);

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace capreg::ad

#endif  // CAPREG_AUTODIFF_TENSOR_H_
