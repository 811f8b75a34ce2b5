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

// Linear probing of frozen features and category-averaged scoring.

#ifndef CAPREG_PROBE_H_
#define CAPREG_PROBE_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "capreg/autodiff/tensor.h"
#include "capreg/config.h"
#include "capreg/data.h"
#include "capreg/train.h"

namespace capreg {

class ProbeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Macro-F1 over the union of classes present in `truth` or `predicted`.
double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted);
double accuracy(const std::vector<int>& truth, const std::vector<int>& predicted);

struct FactorPredictions {
  std::string name;
  Category category = Category::kMisc;
  std::vector<int> truth;
  std::vector<int> predicted;
};

struct FactorScore {
  std::string name;
  Category category = Category::kMisc;
  double f1 = 0, accuracy = 0;
  int train_classes = 0;  // filled in by the probe
  int best_step = 0;
  int steps_run = 0;
};

struct CategoryScore {
  Category category = Category::kMisc;
  double f1 = 0, accuracy = 0;
  std::vector<std::string> factors;
};

struct ProbeReport {
  std::vector<FactorScore> factors;
  std::vector<CategoryScore> categories;    // categories with >= 1 factor
  std::vector<Category> excluded_categories;  // no factors
  double mean_f1 = 0, mean_acc = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string feature_rule;
  std::string encoder_sha256;
};

// Per-factor scores, category means, headline mean over categories.
ProbeReport evaluate(const std::vector<FactorPredictions>& predictions);

// Frozen features [frames, F] (row-major, double) for every frame of the
// given episodes, in episode then time order.
template <typename T>
std::vector<double> extract_features(const RunConfig& config, const Dataset& data,
                                     const Model<T>& model, const std::vector<std::size_t>& episodes,
                                     std::size_t* feature_dim);

struct ProbeData {
  std::vector<double> train, val, test;  // row-major features
  std::size_t dim = 0;
  std::vector<std::vector<int>> train_labels, val_labels, test_labels;  // per factor
};

// Softmax regression trained with Adam on standardised features. Early
// stopping on validation accuracy keeps the best weights.
FactorPredictions train_linear_probe(const ProbeData& probe, std::size_t factor,
                                     const Factor& meta, const ProbeConfig& config,
                                     std::uint64_t seed, FactorScore* score);

// Features from `model`, one probe per factor, evaluate. Throws
// std::logic_error if the parameters change while probing.
template <typename T>
ProbeReport run_probe(const RunConfig& config, const Dataset& data, const Model<T>& model);

// Raw pixels as features; used to check the protocol itself.
ProbeReport run_pixel_probe(const RunConfig& config, const Dataset& data);

std::string report_json(const ProbeReport& report);

}  // namespace capreg

#endif  // CAPREG_PROBE_H_
