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

#include "capreg/autodiff/params.h"

#include <cstdint>
#include <stdexcept>

#include "capreg/util/hash.h"

namespace capreg::ad {

template <typename T>
std::shared_ptr<Tensor<T>> ParameterStore<T>::add(std::string name,
                                                  Tensor<T> init,
                                                  bool trainable) {
  if (contains(name)) {
    throw std::invalid_argument("parameter '" + name + "' already exists");
  }
  auto tensor = std::make_shared<Tensor<T>>(std::move(init));
  entries_.push_back({std::move(name), tensor, trainable});
  return tensor;
}

template <typename T>
std::shared_ptr<Tensor<T>> ParameterStore<T>::get(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count(bool trainable_only) const {
  std::size_t total = 0;
  for (const Entry& e : entries_) {
    if (!trainable_only || e.trainable) total += e.tensor->size();
  }
  return total;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (Entry& e : entries_) e.tensor->zero_grad();
}

template <typename T>
std::string ParameterStore<T>::fingerprint() const {
  Sha256 h;
  for (const Entry& e : entries_) {
    h.update(e.name);
    for (std::size_t extent : e.tensor->shape()) {
      const std::uint64_t v = extent;
      h.update(&v, sizeof v);
    }
    h.update_span(e.tensor->data());
  }
  return h.hex_digest();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace capreg::ad
