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

#include "capreg/autodiff/optim.h"

#include <cmath>
#include <utility>

namespace capreg::ad {

template <typename T>
void adam_step(std::string_view name, std::span<T> params,
               std::span<const T> grads, AdamMoments<T>& state,
               const AdamOptions& options) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam: gradient of '" + std::string(name) + "' has " +
                     std::to_string(grads.size()) + " entries, parameter " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam: non-finite gradient in parameter '" +
                         std::string(name) + "' at index " + std::to_string(i));
    }
  }
  if (state.first.empty()) {
    state.first.assign(params.size(), T(0));
    state.second.assign(params.size(), T(0));
  }
  if (state.first.size() != params.size()) {
    throw ShapeError("adam: moments of '" + std::string(name) +
                     "' are not shaped like the parameter");
  }
  ++state.steps;
  const T b1 = static_cast<T>(options.beta1);
  const T b2 = static_cast<T>(options.beta2);
  const T correction1 =
      static_cast<T>(1.0 - std::pow(options.beta1, double(state.steps)));
  const T correction2 =
      static_cast<T>(1.0 - std::pow(options.beta2, double(state.steps)));
  const T lr = static_cast<T>(options.lr);
  const T eps = static_cast<T>(options.eps);
  const T decay = static_cast<T>(options.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i] + decay * params[i];
    state.first[i] = b1 * state.first[i] + (T(1) - b1) * g;
    state.second[i] = b2 * state.second[i] + (T(1) - b2) * g * g;
    const T m_hat = state.first[i] / correction1;
    const T v_hat = state.second[i] / correction2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
void Adam<T>::step() {
  for (const auto& entry : store_.entries()) {
    if (!entry.trainable) continue;
    Tensor<T>& tensor = *entry.tensor;
    // A parameter that never took part in the loss has no gradient buffer.
    std::span<const T> grads = std::as_const(tensor).grad();
    std::vector<T> zeros;
    if (grads.empty()) {
      zeros.assign(tensor.size(), T(0));
      grads = zeros;
    }
    adam_step<T>(entry.name, tensor.data(), grads, moments_[entry.name],
                 options_);
  }
}

template void adam_step(std::string_view, std::span<float>,
                        std::span<const float>, AdamMoments<float>&,
                        const AdamOptions&);
template void adam_step(std::string_view, std::span<double>,
                        std::span<const double>, AdamMoments<double>&,
                        const AdamOptions&);
template class Adam<float>;
template class Adam<double>;

}  // namespace capreg::ad
