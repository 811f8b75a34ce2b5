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

// Sectioned key = value run configuration.
//
//   [train]    mode (required), batch_size, steps, lr, weight_decay, epsilon,
//              ua_coefficient, tau, lambda, seed, precision, global_pooling,
//              mmcr_normalize
//   [encoder]  profile (desk | paper), convs ("8/4/16, 4/2/32, ..."),
//              local_tap_index, pixel_scale (unit | raw)
//   [atlas]    n_heads, units_per_head, hidden_units, head_kind,
//              membership_temperature, zero_init_membership
//   [world]    preset (desk)
//   [data]     episodes, episode_length, seed, crop_min_scale,
//              crop_max_scale, flip_probability, noise_amplitude
//   [probe]    steps, lr, eval_every, patience, shuffle_labels, feature_rule
//
// '#' and ';' start comments. Unknown sections or keys are errors.

#ifndef CAPREG_CONFIG_H_
#define CAPREG_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "capreg/atlas.h"
#include "capreg/autodiff/tensor.h"
#include "capreg/data.h"
#include "capreg/losses.h"
#include "capreg/models.h"

namespace capreg {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, int line = 0, std::string field = {})
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line),
        field_(std::move(field)) {}
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

struct IniValue {
  std::string text;
  int line = 0;
};

// section -> key -> value
using IniDocument = std::map<std::string, std::map<std::string, IniValue>>;

IniDocument parse_ini(std::string_view text);

enum class PixelScale { kUnit, kRaw };

struct ProbeConfig {
  int steps = 1000;
  double lr = 1e-3;
  int eval_every = 50;
  int patience = 5;
  bool shuffle_labels = false;
  // auto: backbone for every mode except the membership ones.
  std::optional<FeatureRule> feature_rule;
};

struct RunConfig {
  Mode mode = Mode::kDimC;
  std::size_t batch_size = 32;
  int steps = 2000;
  double lr = 2e-3;  // desk profile; the paper profile uses 3e-4
  double weight_decay = 0.0;
  LossWeights weights;
  std::uint64_t seed = 0;
  ad::Precision precision = ad::Precision::kFloat32;
  std::optional<GlobalPooling> global_pooling;  // default follows the mode
  bool mmcr_normalize = true;

  std::string encoder_profile = "desk";
  EncoderConfig encoder = EncoderConfig::desk();
  PixelScale pixel_scale = PixelScale::kUnit;

  AtlasConfig atlas;

  std::string world_preset = "desk";
  WorldConfig world = WorldConfig::desk();
  DatasetConfig data;
  std::uint64_t data_seed = 0;
  AugmentConfig augment;

  ProbeConfig probe;

  GlobalPooling pooling() const;
  FeatureRule feature_rule() const;
  double pixel_factor() const { return pixel_scale == PixelScale::kUnit ? 1.0 / 255.0 : 1.0; }

  // Fully expanded, fixed-order text; parses back to an equal config.
  std::string canonical() const;
  std::string hash() const;
  void validate() const;
};

// Parse and validate. Errors carry the offending line and field.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace capreg

#endif  // CAPREG_CONFIG_H_
