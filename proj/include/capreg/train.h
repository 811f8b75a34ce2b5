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

// Pretraining loops and model bundle.

#ifndef CAPREG_TRAIN_H_
#define CAPREG_TRAIN_H_

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "capreg/atlas.h"
#include "capreg/autodiff/params.h"
#include "capreg/config.h"
#include "capreg/data.h"
#include "capreg/losses.h"
#include "capreg/models.h"

namespace capreg {

// Raised when a step produces a non-finite loss; the message carries the
// step index and the component breakdown.
class TrainingError : public ad::NumericError {
 public:
  TrainingError(const std::string& message, int step)
      : ad::NumericError(message), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// Every parameter of one run. Initialisation depends only on the config
// and its seed.
template <typename T>
class Model {
 public:
  explicit Model(const RunConfig& config);

  ad::ParameterStore<T>& store() { return store_; }
  const ad::ParameterStore<T>& store() const { return store_; }
  const Encoder<T>& encoder() const { return *encoder_; }
  const Atlas<T>& atlas() const { return *atlas_; }
  // Present in the temporal (DIM) modes only.
  const std::optional<Critic<T>>& global_critic() const { return global_critic_; }
  const std::optional<Critic<T>>& local_critic() const { return local_critic_; }

 private:
  ad::ParameterStore<T> store_;
  std::optional<Encoder<T>> encoder_;
  std::optional<Atlas<T>> atlas_;
  std::optional<Critic<T>> global_critic_;
  std::optional<Critic<T>> local_critic_;
};

// One line of the loss trace. Components are the weighted contributions
// and sum to `total`. Modes without a global/local split log their
// pairwise view loss under `global`.
struct TraceRow {
  int step = 0;
  double total = 0, global = 0, local = 0, ua = 0, mmcr = 0;
};

// Runs config.steps optimisation steps on the train split. `on_row` sees
// every row as it is produced.
template <typename T>
std::vector<TraceRow> pretrain(const RunConfig& config, const Dataset& data, Model<T>& model,
                               const std::function<void(const TraceRow&)>& on_row = {});

// Graph of one training step, recorded on `tape` without an update. The
// batch is drawn from the stream keyed by (config.seed, step).
template <typename T>
struct StepGraph {
  LossParts<T> parts;
  CompositeLoss<T> loss;
  ad::Var<T> charts_first;   // head outputs of x_t (or of the first view)
  ad::Var<T> charts_second;  // head outputs of the second view; unset for DIM modes
};

template <typename T>
StepGraph<T> build_step(const RunConfig& config, const Dataset& data, const Model<T>& model,
                        ad::Tape<T>& tape, int step);

std::string trace_csv(const std::vector<TraceRow>& rows);
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows);

// SHA-256 identifying the dataset a config describes.
std::string dataset_hash(const Dataset& data, const DatasetConfig& config);

}  // namespace capreg

#endif  // CAPREG_TRAIN_H_
