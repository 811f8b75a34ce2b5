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

#ifndef CAPREG_MODELS_H_
#define CAPREG_MODELS_H_

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "capreg/autodiff/params.h"
#include "capreg/autodiff/tape.h"
#include "capreg/layers.h"
#include "capreg/util/rng.h"

namespace capreg {

struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t out_channels = 32;
};

struct ActivationShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

// Valid-convolution backbone: conv + ReLU per entry of `convs`, then
// flatten. `local_tap_index` picks the activation used as the local map.
struct EncoderConfig {
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t input_channels = 1;
  std::vector<ConvSpec> convs;
  std::size_t local_tap_index = 2;
  // Pixel values are scaled from [0, 255] into [0, 1] before encoding.
  bool unit_pixel_range = true;

  // 160x210 input; 8/4/32, 4/2/64, 4/2/128, 3/1/64.
  static EncoderConfig paper();
  // 64x64 input; same depth and kernel pattern with narrower layers.
  static EncoderConfig desk();

  // Output shape of every conv layer. Throws ad::ShapeError naming the
  // first layer whose output would be empty.
  std::vector<ActivationShape> layer_shapes() const;
  ActivationShape local_shape() const;
  std::size_t latent_dim() const;
  void validate() const;
  // Weights plus biases of all conv layers.
  std::size_t parameter_count() const;
};

template <typename T>
struct EncoderOutput {
  ad::Var<T> latent;  // [B, Z]
  ad::Var<T> local;   // [B, H, W, C]
};

template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& config, ad::ParameterStore<T>& store, Rng& rng,
          const std::string& prefix = "encoder");

  // frames: [B, input_channels, input_height, input_width].
  EncoderOutput<T> forward(ad::Var<T> frames) const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  std::vector<std::shared_ptr<ad::Tensor<T>>> weights_;
  std::vector<std::shared_ptr<ad::Tensor<T>>> biases_;
};

// Projection half of a bilinear score <W x, y>.
template <typename T>
class Critic {
 public:
  Critic(ad::ParameterStore<T>& store, const std::string& name,
         std::size_t in, std::size_t out, Rng& rng);

  ad::Var<T> projection(ad::Tape<T>& tape) const { return tape.leaf(weight_); }
  ad::Var<T> operator()(ad::Var<T> x) const;
  std::size_t out_features() const { return weight_->dim(1); }

 private:
  std::shared_ptr<ad::Tensor<T>> weight_;
};

// scores[i][j] = <queries_i, keys_j>.
template <typename T>
ad::Var<T> score_pairs(ad::Var<T> queries, ad::Var<T> keys);

}  // namespace capreg

#endif  // CAPREG_MODELS_H_
