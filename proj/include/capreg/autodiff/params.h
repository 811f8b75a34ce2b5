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

#ifndef CAPREG_AUTODIFF_PARAMS_H_
#define CAPREG_AUTODIFF_PARAMS_H_

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "capreg/autodiff/tensor.h"

namespace capreg::ad {

// Named tensors in insertion order. Trainable entries are updated by the
// optimizer; the rest are buffers such as batch-norm running statistics.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    std::shared_ptr<Tensor<T>> tensor;
    bool trainable;
  };

  std::shared_ptr<Tensor<T>> add(std::string name, Tensor<T> init,
                                 bool trainable = true);
  std::shared_ptr<Tensor<T>> get(std::string_view name) const;
  bool contains(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t scalar_count(bool trainable_only = true) const;

  void zero_grad();

  // SHA-256 over names, shapes and values; identical stores hash equal.
  std::string fingerprint() const;

 private:
  std::vector<Entry> entries_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace capreg::ad

#endif  // CAPREG_AUTODIFF_PARAMS_H_
