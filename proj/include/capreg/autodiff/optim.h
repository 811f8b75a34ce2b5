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

#ifndef CAPREG_AUTODIFF_OPTIM_H_
#define CAPREG_AUTODIFF_OPTIM_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capreg/autodiff/params.h"

namespace capreg::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 penalty folded into the gradient (coupled form).
  double weight_decay = 0.0;
};

template <typename T>
struct AdamMoments {
  std::vector<T> first;
  std::vector<T> second;
  std::int64_t steps = 0;
};

// One bias-corrected Adam update of `params` in place. Rejects the whole step,
// leaving params and state untouched, if any gradient is NaN or infinite.
template <typename T>
void adam_step(std::string_view name, std::span<T> params,
               std::span<const T> grads, AdamMoments<T>& state,
               const AdamOptions& options);

// Adam over the trainable entries of a ParameterStore.
template <typename T>
class Adam {
 public:
  Adam(ParameterStore<T>& store, AdamOptions options)
      : store_(store), options_(options) {}

  void step();
  const AdamOptions& options() const { return options_; }

 private:
  ParameterStore<T>& store_;
  AdamOptions options_;
  std::map<std::string, AdamMoments<T>> moments_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace capreg::ad

#endif  // CAPREG_AUTODIFF_OPTIM_H_
