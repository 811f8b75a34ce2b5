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

// End-to-end runs: pretrain -> checkpoint -> probe, run manifests and
// parameter sweeps.

#ifndef CAPREG_EXPERIMENT_H_
#define CAPREG_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "capreg/config.h"
#include "capreg/data.h"
#include "capreg/probe.h"
#include "capreg/train.h"

namespace capreg {

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kTraceFile = "trace.csv";
inline constexpr const char* kConfigFile = "config.ini";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kReportFile = "report.json";

Dataset dataset_for(const RunConfig& config);

struct PretrainResult {
  std::vector<TraceRow> trace;
  double seconds = 0;
  std::string manifest_path;  // empty when nothing was written
};

// Pretrains at config.precision. With a non-empty out_dir, writes the
// checkpoint, the loss trace, the canonical config and manifest.json.
PretrainResult run_pretrain(const RunConfig& config, const Dataset& data,
                            const std::filesystem::path& out_dir);

// Restores the checkpoint (throws CompatibilityError) and probes it.
ProbeReport probe_checkpoint(const std::filesystem::path& checkpoint, const Dataset& data,
                             const ProbeConfig* override_probe = nullptr,
                             const std::uint64_t* override_seed = nullptr);

// Pretrain then probe in memory.
ProbeReport pretrain_and_probe(const RunConfig& config, const Dataset& data,
                               std::vector<TraceRow>* trace = nullptr);

// Checks that every artifact listed in a manifest exists and matches its
// recorded SHA-256. Throws CompatibilityError otherwise.
void verify_manifest(const std::filesystem::path& manifest);

enum class SweepAxis { kEpsilon, kUnits, kHeads };
SweepAxis parse_sweep_axis(std::string_view text);
std::string_view to_string(SweepAxis axis);

// Base config with one axis moved. The heads axis keeps n_heads *
// units_per_head at `total_units` and throws ConfigError when the head
// count does not divide it.
RunConfig apply_axis(const RunConfig& base, SweepAxis axis, double value,
                     std::size_t total_units);

struct SweepRow {
  double value = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double mean_f1 = 0, mean_acc = 0;
  double seconds = 0;
  std::string error;
};

struct SweepOptions {
  SweepAxis axis = SweepAxis::kEpsilon;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  std::size_t total_units = 0;  // heads axis; 0 means the base config's total
  unsigned workers = 1;
  std::filesystem::path out_dir;  // per-run trace and report when set
};

// One pretrain+probe per (value, seed) on a worker pool. Failures are
// recorded in their row; the sweep continues. Rows come back in
// (value, seed) order whatever the scheduling.
std::vector<SweepRow> run_sweep(const RunConfig& base, const SweepOptions& options);

// Deterministic given the rows' results; wall-clock time is left out.
std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows);
// value, runs, failed, mean_f1, se_f1, mean_acc over successful rows.
std::string sweep_means_csv(SweepAxis axis, const std::vector<SweepRow>& rows);

}  // namespace capreg

#endif  // CAPREG_EXPERIMENT_H_
