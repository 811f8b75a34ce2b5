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

#include "capreg/models.h"

#include <cmath>
#include <string>

#include "capreg/autodiff/ops.h"

namespace capreg {

EncoderConfig EncoderConfig::paper() {
  EncoderConfig c;
  c.input_height = 160;
  c.input_width = 210;
  c.convs = {{8, 4, 32}, {4, 2, 64}, {4, 2, 128}, {3, 1, 64}};
  c.local_tap_index = 2;
  return c;
}

EncoderConfig EncoderConfig::desk() {
  EncoderConfig c;
  c.input_height = 64;
  c.input_width = 64;
  c.convs = {{8, 4, 16}, {4, 2, 32}, {3, 1, 32}, {3, 1, 32}};
  c.local_tap_index = 2;
  return c;
}

std::vector<ActivationShape> EncoderConfig::layer_shapes() const {
  if (input_channels == 0) throw ad::ShapeError("encoder: input_channels must be positive");
  std::vector<ActivationShape> shapes;
  std::size_t h = input_height, w = input_width, c = input_channels;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const ConvSpec& s = convs[i];
    const std::string where = "encoder: conv" + std::to_string(i);
    if (s.kernel == 0 || s.stride == 0 || s.out_channels == 0) {
      throw ad::ShapeError(where + " has a zero kernel, stride or channel count");
    }
    if (h < s.kernel || w < s.kernel) {
      throw ad::ShapeError(where + " (kernel " + std::to_string(s.kernel) +
                           ") does not fit its " + std::to_string(h) + "x" +
                           std::to_string(w) + " input");
    }
    h = (h - s.kernel) / s.stride + 1;
    w = (w - s.kernel) / s.stride + 1;
    c = s.out_channels;
    shapes.push_back({c, h, w});
  }
  return shapes;
}

void EncoderConfig::validate() const {
  if (convs.empty()) throw ad::ShapeError("encoder: empty conv plan");
  if (local_tap_index >= convs.size()) {
    throw ad::ShapeError("encoder: local_tap_index " + std::to_string(local_tap_index) +
                         " but only " + std::to_string(convs.size()) + " conv layers");
  }
  layer_shapes();
}

ActivationShape EncoderConfig::local_shape() const {
  validate();
  return layer_shapes()[local_tap_index];
}

std::size_t EncoderConfig::latent_dim() const {
  validate();
  const ActivationShape last = layer_shapes().back();
  return last.channels * last.height * last.width;
}

std::size_t EncoderConfig::parameter_count() const {
  std::size_t total = 0;
  std::size_t in = input_channels;
  for (const ConvSpec& s : convs) {
    total += s.out_channels * in * s.kernel * s.kernel + s.out_channels;
    in = s.out_channels;
  }
  return total;
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, ad::ParameterStore<T>& store,
                    Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  std::size_t in = config_.input_channels;
  for (std::size_t i = 0; i < config_.convs.size(); ++i) {
    const ConvSpec& s = config_.convs[i];
    const std::size_t fan_in = in * s.kernel * s.kernel;
    ad::Tensor<T> w = orthogonal_init<T>(s.out_channels, fan_in, std::sqrt(2.0), rng);
    w.reshape({s.out_channels, in, s.kernel, s.kernel});
    const std::string name = prefix + ".conv" + std::to_string(i);
    weights_.push_back(store.add(name + ".weight", std::move(w)));
    biases_.push_back(store.add(name + ".bias", ad::Tensor<T>({s.out_channels})));
    in = s.out_channels;
  }
}

template <typename T>
EncoderOutput<T> Encoder<T>::forward(ad::Var<T> frames) const {
  if (frames.rank() != 4 || frames.dim(1) != config_.input_channels ||
      frames.dim(2) != config_.input_height || frames.dim(3) != config_.input_width) {
    throw ad::ShapeError("encoder: expected [B," + std::to_string(config_.input_channels) +
                         "," + std::to_string(config_.input_height) + "," +
                         std::to_string(config_.input_width) + "] frames, got " +
                         ad::to_string(frames.shape()));
  }
  ad::Tape<T>& tape = frames.tape();
  ad::Var<T> h = frames;
  ad::Var<T> tap;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = ad::relu(ad::conv2d<T>(h, tape.leaf(weights_[i]), tape.leaf(biases_[i]),
                            config_.convs[i].stride));
    if (i == config_.local_tap_index) tap = h;
  }
  const std::size_t batch = h.dim(0);
  return {ad::reshape(h, {batch, h.value().size() / batch}), ad::to_channel_last(tap)};
}

template <typename T>
Critic<T>::Critic(ad::ParameterStore<T>& store, const std::string& name,
                  std::size_t in, std::size_t out, Rng& rng) {
  weight_ = store.add(name + ".weight", orthogonal_init<T>(in, out, 1.0, rng));
}

template <typename T>
ad::Var<T> Critic<T>::operator()(ad::Var<T> x) const {
  return ad::matmul(x, projection(x.tape()));
}

template <typename T>
ad::Var<T> score_pairs(ad::Var<T> queries, ad::Var<T> keys) {
  if (queries.rank() != 2 || keys.rank() != 2 || queries.dim(1) != keys.dim(1)) {
    throw ad::ShapeError("score_pairs: queries " + ad::to_string(queries.shape()) +
                         " and keys " + ad::to_string(keys.shape()) +
                         " must be [B,C] with equal C");
  }
  return ad::matmul(queries, ad::transpose(keys));
}

template class Encoder<float>;
template class Encoder<double>;
template class Critic<float>;
template class Critic<double>;
template ad::Var<float> score_pairs(ad::Var<float>, ad::Var<float>);
template ad::Var<double> score_pairs(ad::Var<double>, ad::Var<double>);

}  // namespace capreg
