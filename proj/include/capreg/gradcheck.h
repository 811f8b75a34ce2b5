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

// Finite-difference verification of every differentiable kernel, loss and
// composite objective, in 64-bit mode.

#ifndef CAPREG_GRADCHECK_H_
#define CAPREG_GRADCHECK_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "capreg/autodiff/tape.h"
#include "capreg/autodiff/tensor.h"
#include "capreg/util/rng.h"

namespace capreg {

// A scalar function of some tensors. `loss` records a fresh graph on the
// tape each time it is called and must read `inputs` through tape leaves.
struct GradProblem {
  std::vector<std::shared_ptr<ad::Tensor<double>>> inputs;
  std::function<ad::Var<double>(ad::Tape<double>&)> loss;
  std::shared_ptr<void> owner;  // keeps modules behind `loss` alive
};

struct GradCase {
  std::string name;
  std::string group;  // op | loss | composite | model
  std::function<GradProblem(Rng&)> make;
};

struct GradcheckOptions {
  int points = 24;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  // Test hook: perturbs the analytic gradient so the check must fail.
  bool inject_fault = false;
};

struct GradcheckResult {
  std::string name;
  std::string group;
  int points = 0;
  double max_rel_error = 0;  // |analytic - numeric| / max(|numeric|, 1)
  bool passed = false;
};

class UnknownCaseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Every registered case, in a fixed order.
const std::vector<GradCase>& gradcheck_registry();

GradcheckResult run_gradcheck(const GradCase& c, const GradcheckOptions& options);

// "all" or a single case name. Throws UnknownCaseError otherwise.
std::vector<GradcheckResult> run_gradcheck(std::string_view scope,
                                           const GradcheckOptions& options);

// Fixed-width pass/fail table.
std::string gradcheck_table(const std::vector<GradcheckResult>& results);

}  // namespace capreg

#endif  // CAPREG_GRADCHECK_H_
