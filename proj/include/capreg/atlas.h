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

// Output heads (charts) on top of the encoder latent, the optional chart
// membership network, and inference-time feature selection.

#ifndef CAPREG_ATLAS_H_
#define CAPREG_ATLAS_H_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capreg/autodiff/params.h"
#include "capreg/autodiff/tape.h"
#include "capreg/layers.h"
#include "capreg/util/rng.h"

namespace capreg {

enum class HeadKind { kLinear, kMlp };

HeadKind parse_head_kind(std::string_view text);
std::string_view to_string(HeadKind kind);

struct AtlasConfig {
  std::size_t n_heads = 4;
  std::size_t units_per_head = 64;
  std::size_t hidden_units = 128;
  HeadKind head_kind = HeadKind::kMlp;
  bool membership_enabled = false;
  // Softmax temperature of the membership logits.
  double membership_temperature = 0.1;
  // Zero weights and bias in the membership layer, i.e. uniform q at init.
  bool zero_init_membership = false;
  // Zero the last layer of every head.
  bool zero_init_output = false;

  void validate() const;
};

template <typename T>
struct AtlasOutput {
  ad::Var<T> charts;                     // [B, N, D]
  std::optional<ad::Var<T>> membership;  // [B, N]
};

template <typename T>
class Atlas {
 public:
  Atlas(const AtlasConfig& config, std::size_t latent_dim,
        ad::ParameterStore<T>& store, Rng& rng, const std::string& prefix = "atlas");

  AtlasOutput<T> forward(ad::Var<T> latent, bool training) const;
  // Membership rows only; requires membership_enabled.
  ad::Var<T> membership(ad::Var<T> latent) const;

  const AtlasConfig& config() const { return config_; }

 private:
  struct Head {
    Linear<T> first;
    BatchNorm1d<T> norm;
    Linear<T> second;  // unused for linear heads
  };

  AtlasConfig config_;
  std::vector<Head> heads_;
  Linear<T> membership_;
};

// argmax with ties going to the lowest index.
std::size_t select_chart(std::span<const double> membership);

template <typename T>
std::size_t select_chart(std::span<const T> membership);

enum class FeatureRule { kBackboneOnly, kArgmaxHead };

// [B, Z] latent copy for kBackboneOnly; for kArgmaxHead the chart of every
// sample with the highest membership, [B, D].
template <typename T>
ad::Tensor<T> inference_features(const ad::Tensor<T>& latent,
                                 const ad::Tensor<T>& charts,
                                 const ad::Tensor<T>* membership, FeatureRule rule);

}  // namespace capreg

#endif  // CAPREG_ATLAS_H_
