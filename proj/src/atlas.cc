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

#include "capreg/atlas.h"

#include <cmath>
#include <stdexcept>

#include "capreg/autodiff/ops.h"

namespace capreg {

HeadKind parse_head_kind(std::string_view text) {
  if (text == "linear") return HeadKind::kLinear;
  if (text == "mlp") return HeadKind::kMlp;
  throw std::invalid_argument("unknown head kind '" + std::string(text) +
                              "' (expected linear or mlp)");
}

std::string_view to_string(HeadKind kind) {
  return kind == HeadKind::kLinear ? "linear" : "mlp";
}

void AtlasConfig::validate() const {
  if (n_heads == 0) throw std::invalid_argument("atlas: n_heads must be positive");
  if (units_per_head == 0) throw std::invalid_argument("atlas: units_per_head must be positive");
  if (head_kind == HeadKind::kMlp && hidden_units == 0) {
    throw std::invalid_argument("atlas: hidden_units must be positive");
  }
  if (!(membership_temperature > 0.0)) {
    throw std::invalid_argument("atlas: membership_temperature must be positive");
  }
}

namespace {

template <typename T>
void zero_fill(ad::ParameterStore<T>& store, const std::string& name) {
  if (!store.contains(name)) return;
  for (T& v : store.get(name)->data()) v = T(0);
}

}  // namespace

template <typename T>
Atlas<T>::Atlas(const AtlasConfig& config, std::size_t latent_dim,
                ad::ParameterStore<T>& store, Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.units_per_head;
  for (std::size_t n = 0; n < config_.n_heads; ++n) {
    const std::string name = prefix + ".head" + std::to_string(n);
    Head head;
    if (config_.head_kind == HeadKind::kMlp) {
      const std::size_t hidden = config_.hidden_units;
      head.first = Linear<T>(store, name + ".fc1", latent_dim, hidden, true, std::sqrt(2.0), rng);
      head.norm = BatchNorm1d<T>(store, name + ".bn", hidden);
      head.second = Linear<T>(store, name + ".fc2", hidden, d, true, 1.0, rng);
      if (config_.zero_init_output) zero_fill(store, name + ".fc2.weight");
    } else {
      head.first = Linear<T>(store, name + ".fc", latent_dim, d, true, 1.0, rng);
      if (config_.zero_init_output) zero_fill(store, name + ".fc.weight");
    }
    heads_.push_back(std::move(head));
  }
  if (config_.membership_enabled) {
    membership_ = Linear<T>(store, prefix + ".membership", latent_dim, config_.n_heads,
                            true, 1.0, rng);
    if (config_.zero_init_membership) zero_fill(store, prefix + ".membership.weight");
  }
}

template <typename T>
AtlasOutput<T> Atlas<T>::forward(ad::Var<T> latent, bool training) const {
  std::vector<ad::Var<T>> charts;
  charts.reserve(heads_.size());
  for (const Head& head : heads_) {
    if (config_.head_kind == HeadKind::kMlp) {
      charts.push_back(head.second(ad::relu(head.norm(head.first(latent), training))));
    } else {
      charts.push_back(head.first(latent));
    }
  }
  AtlasOutput<T> out{ad::stack(charts), std::nullopt};
  if (config_.membership_enabled) out.membership = membership(latent);
  return out;
}

template <typename T>
ad::Var<T> Atlas<T>::membership(ad::Var<T> latent) const {
  if (!config_.membership_enabled) {
    throw std::logic_error("atlas: membership requested but not enabled");
  }
  const T inv_tau = static_cast<T>(1.0 / config_.membership_temperature);
  return ad::softmax(ad::scale(membership_(latent), inv_tau));
}

std::size_t select_chart(std::span<const double> membership) {
  return select_chart<double>(membership);
}

template <typename T>
std::size_t select_chart(std::span<const T> membership) {
  if (membership.empty()) throw std::invalid_argument("select_chart: empty membership row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < membership.size(); ++i) {
    if (membership[i] > membership[best]) best = i;
  }
  return best;
}

template <typename T>
ad::Tensor<T> inference_features(const ad::Tensor<T>& latent,
                                 const ad::Tensor<T>& charts,
                                 const ad::Tensor<T>* membership, FeatureRule rule) {
  if (rule == FeatureRule::kBackboneOnly) return ad::Tensor<T>(latent.shape(), latent.storage());
  if (membership == nullptr) {
    throw std::invalid_argument("inference_features: argmax-head needs membership");
  }
  if (charts.rank() != 3 || membership->rank() != 2 ||
      membership->dim(0) != charts.dim(0) || membership->dim(1) != charts.dim(1)) {
    throw ad::ShapeError("inference_features: charts " + ad::to_string(charts.shape()) +
                         " and membership " + ad::to_string(membership->shape()) +
                         " disagree");
  }
  const std::size_t b = charts.dim(0), n = charts.dim(1), d = charts.dim(2);
  ad::Tensor<T> out({b, d});
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t k = select_chart<T>(membership->data().subspan(i * n, n));
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = charts[(i * n + k) * d + j];
  }
  return out;
}

template class Atlas<float>;
template class Atlas<double>;
template std::size_t select_chart<float>(std::span<const float>);
template ad::Tensor<float> inference_features(const ad::Tensor<float>&,
                                              const ad::Tensor<float>&,
                                              const ad::Tensor<float>*, FeatureRule);
template ad::Tensor<double> inference_features(const ad::Tensor<double>&,
                                               const ad::Tensor<double>&,
                                               const ad::Tensor<double>*, FeatureRule);

}  // namespace capreg
