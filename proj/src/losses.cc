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

#include "capreg/losses.h"

#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace capreg {

using ad::Shape;
using ad::ShapeError;
using ad::Tensor;

namespace {

constexpr std::array<std::pair<Mode, std::string_view>, 8> kModeNames{{
    {Mode::kDimC, "dim-c"},
    {Mode::kDimUac, "dim-uac"},
    {Mode::kSimclrC, "simclr-c"},
    {Mode::kBtC, "bt-c"},
    {Mode::kDim, "dim"},
    {Mode::kDimUa, "dim-ua"},
    {Mode::kSimclr, "simclr"},
    {Mode::kBt, "bt"},
}};

// Logit added to self-similarities so they drop out of the softmax.
constexpr double kMaskedLogit = -1e9;

std::vector<int> arange(std::size_t n) {
  std::vector<int> out(n);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

template <typename T>
Var<T> square(Var<T> x) {
  return ad::mul(x, x);
}

}  // namespace

Mode parse_mode(std::string_view text) {
  for (const auto& [mode, name] : kModeNames) {
    if (name == text) return mode;
  }
  throw std::invalid_argument("unknown mode '" + std::string(text) + "'");
}

std::string_view to_string(Mode mode) {
  for (const auto& [m, name] : kModeNames) {
    if (m == mode) return name;
  }
  return "?";
}

bool is_dim_mode(Mode mode) {
  return mode == Mode::kDimC || mode == Mode::kDimUac || mode == Mode::kDim ||
         mode == Mode::kDimUa;
}

bool uses_membership(Mode mode) {
  return mode == Mode::kDimUac || mode == Mode::kDimUa;
}

bool uses_capacity(Mode mode) {
  return mode == Mode::kDimC || mode == Mode::kDimUac ||
         mode == Mode::kSimclrC || mode == Mode::kBtC;
}

void LossWeights::validate() const {
  if (!(epsilon >= 0.0)) {
    throw std::invalid_argument("epsilon must be >= 0");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
}

template <typename T>
Var<T> info_nce(Var<T> scores) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) {
    throw ShapeError("info_nce: scores must be square, got " +
                     ad::to_string(scores.shape()));
  }
  return ad::softmax_cross_entropy(scores, arange(scores.dim(0)));
}

template <typename T>
Var<T> global_local_loss(Var<T> global_outputs, Var<T> local_next,
                         Var<T> projection, GlobalPooling pooling,
                         std::optional<Var<T>> membership) {
  if (global_outputs.rank() != 3 || global_outputs.dim(1) == 0) {
    throw ShapeError("global_local_loss: expected [B,N,D] outputs with N >= 1, "
                     "got " + ad::to_string(global_outputs.shape()));
  }
  if (local_next.rank() != 4 || local_next.dim(1) == 0 ||
      local_next.dim(2) == 0) {
    throw ShapeError("global_local_loss: expected a non-empty [B,H,W,C] map, "
                     "got " + ad::to_string(local_next.shape()));
  }
  if (local_next.dim(0) != global_outputs.dim(0)) {
    throw ShapeError("global_local_loss: batch " +
                     std::to_string(global_outputs.dim(0)) + " vs " +
                     std::to_string(local_next.dim(0)));
  }
  std::vector<Var<T>> queries;
  switch (pooling) {
    case GlobalPooling::kPerHead:
      for (std::size_t n = 0; n < global_outputs.dim(1); ++n) {
        queries.push_back(ad::matmul(ad::select(global_outputs, n), projection));
      }
      break;
    case GlobalPooling::kHeadMean:
      queries.push_back(
          ad::matmul(ad::reduce_mean(global_outputs, 1), projection));
      break;
    case GlobalPooling::kMembershipWeighted:
      if (!membership) {
        throw std::invalid_argument(
            "global_local_loss: weighted pooling needs membership");
      }
      queries.push_back(ad::matmul(
          ad::weighted_heads(global_outputs, *membership), projection));
      break;
  }
  const std::size_t height = local_next.dim(1), width = local_next.dim(2);
  std::vector<Var<T>> terms;
  terms.reserve(height * width * queries.size());
  for (std::size_t h = 0; h < height; ++h) {
    for (std::size_t w = 0; w < width; ++w) {
      Var<T> keys = ad::transpose(ad::location(local_next, h, w));
      for (const Var<T>& q : queries) {
        terms.push_back(info_nce(ad::matmul(q, keys)));
      }
    }
  }
  return ad::scale(ad::add_n(terms), T(1) / static_cast<T>(terms.size()));
}

template <typename T>
Var<T> local_local_loss(Var<T> local_t, Var<T> local_next, Var<T> projection) {
  if (local_t.rank() != 4 || local_t.shape() != local_next.shape() ||
      local_t.dim(1) == 0 || local_t.dim(2) == 0) {
    throw ShapeError("local_local_loss: maps must share a non-empty [B,H,W,C] "
                     "shape, got " + ad::to_string(local_t.shape()) + " and " +
                     ad::to_string(local_next.shape()));
  }
  const std::size_t height = local_t.dim(1), width = local_t.dim(2);
  std::vector<Var<T>> terms;
  terms.reserve(height * width);
  for (std::size_t h = 0; h < height; ++h) {
    for (std::size_t w = 0; w < width; ++w) {
      Var<T> queries = ad::matmul(ad::location(local_t, h, w), projection);
      Var<T> keys = ad::transpose(ad::location(local_next, h, w));
      terms.push_back(info_nce(ad::matmul(queries, keys)));
    }
  }
  return ad::scale(ad::add_n(terms), T(1) / static_cast<T>(terms.size()));
}

template <typename T>
Var<T> ua_discrepancy(Var<T> membership) {
  if (membership.rank() != 2 || membership.dim(0) == 0 ||
      membership.dim(1) == 0) {
    throw ShapeError("ua_discrepancy: expected [B,N] memberships, got " +
                     ad::to_string(membership.shape()));
  }
  const std::size_t rows = membership.dim(0), charts = membership.dim(1);
  const Tensor<T>& q = membership.value();
  for (std::size_t i = 0; i < rows; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < charts; ++j) {
      const T v = q[i * charts + j];
      if (!(v >= T(0))) {
        throw std::invalid_argument("ua_discrepancy: row " + std::to_string(i) +
                                    " has a negative or NaN entry");
      }
      total += static_cast<double>(v);
    }
    if (std::abs(total - 1.0) > 1e-5) {
      throw std::invalid_argument("ua_discrepancy: row " + std::to_string(i) +
                                  " sums to " + std::to_string(total));
    }
  }
  Var<T> centred = ad::add_scalar(membership, -T(1) / static_cast<T>(charts));
  return ad::scale(ad::sum(square(centred)), T(1) / static_cast<T>(rows));
}

template <typename T>
CentroidMatrix<T> build_centroids(Var<T> head_outputs, bool normalize) {
  if (head_outputs.rank() != 3 || head_outputs.dim(1) == 0 ||
      head_outputs.dim(2) == 0) {
    throw ShapeError("mmcr_loss: expected [B,N,D] with N,D >= 1, got " +
                     ad::to_string(head_outputs.shape()));
  }
  Var<T> heads = normalize ? ad::l2_normalize(head_outputs) : head_outputs;
  return {ad::transpose(ad::reduce_mean(heads, 1)), normalize};
}

template <typename T>
Var<T> mmcr_loss(Var<T> head_outputs, bool normalize) {
  return ad::scale(ad::nuclear_norm(build_centroids(head_outputs, normalize).matrix),
                   T(-1));
}

template <typename T>
Var<T> nt_xent(Var<T> view_a, Var<T> view_b, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("nt_xent: tau must be > 0");
  if (view_a.rank() != 2 || view_a.shape() != view_b.shape()) {
    throw ShapeError("nt_xent: views must share a [B,D] shape, got " +
                     ad::to_string(view_a.shape()) + " and " +
                     ad::to_string(view_b.shape()));
  }
  const std::size_t batch = view_a.dim(0);
  Var<T> z = ad::l2_normalize(ad::concat_rows(view_a, view_b));
  Var<T> sim = ad::scale(ad::matmul(z, ad::transpose(z)),
                         static_cast<T>(1.0 / tau));
  Tensor<T> mask({2 * batch, 2 * batch});
  for (std::size_t i = 0; i < 2 * batch; ++i) {
    mask[i * 2 * batch + i] = static_cast<T>(kMaskedLogit);
  }
  Var<T> logits = ad::add(sim, view_a.tape().constant(std::move(mask)));
  std::vector<int> targets(2 * batch);
  for (std::size_t i = 0; i < batch; ++i) {
    targets[i] = static_cast<int>(i + batch);
    targets[i + batch] = static_cast<int>(i);
  }
  return ad::softmax_cross_entropy(logits, targets);
}

template <typename T>
Var<T> barlow_twins(Var<T> view_a, Var<T> view_b, double lambda) {
  if (view_a.rank() != 2 || view_a.shape() != view_b.shape()) {
    throw ShapeError("barlow_twins: views must share a [B,D] shape, got " +
                     ad::to_string(view_a.shape()) + " and " +
                     ad::to_string(view_b.shape()));
  }
  const std::size_t batch = view_a.dim(0), dims = view_a.dim(1);
  if (batch < 2) {
    throw std::invalid_argument("barlow_twins: batch of " +
                                std::to_string(batch) +
                                " cannot be standardised (need >= 2)");
  }
  // Near-zero eps keeps the self-correlation of a non-constant column at 1.
  const ad::BatchNormOptions standardize{.training = true, .eps = 1e-12};
  Var<T> za = ad::batchnorm<T>(view_a, nullptr, standardize);
  Var<T> zb = ad::batchnorm<T>(view_b, nullptr, standardize);
  Var<T> corr = ad::scale(ad::matmul(ad::transpose(za), zb),
                          T(1) / static_cast<T>(batch));
  Tensor<T> identity({dims, dims});
  Tensor<T> off_mask({dims, dims}, T(1));
  for (std::size_t i = 0; i < dims; ++i) {
    identity[i * dims + i] = T(1);
    off_mask[i * dims + i] = T(0);
  }
  ad::Tape<T>& tape = view_a.tape();
  Var<T> eye = tape.constant(identity);
  Var<T> on_diag = ad::sum(ad::mul(square(ad::sub(eye, corr)), eye));
  Var<T> off_diag =
      ad::sum(ad::mul(square(corr), tape.constant(std::move(off_mask))));
  return ad::add(on_diag, ad::scale(off_diag, static_cast<T>(lambda)));
}

template <typename T>
Var<T> pairwise_head_loss(Var<T> out_a, Var<T> out_b,
                          const PairLoss<T>& custom) {
  if (out_a.rank() != 3 || out_b.rank() != 3) {
    throw ShapeError("pairwise_head_loss: expected [B,N,D] outputs, got " +
                     ad::to_string(out_a.shape()) + " and " +
                     ad::to_string(out_b.shape()));
  }
  if (out_a.dim(1) != out_b.dim(1) || out_a.dim(1) == 0) {
    throw ShapeError("pairwise_head_loss: head counts differ (" +
                     std::to_string(out_a.dim(1)) + " vs " +
                     std::to_string(out_b.dim(1)) + ")");
  }
  const std::size_t heads = out_a.dim(1);
  std::vector<Var<T>> heads_a, heads_b, terms;
  for (std::size_t n = 0; n < heads; ++n) {
    heads_a.push_back(ad::select(out_a, n));
    heads_b.push_back(ad::select(out_b, n));
  }
  for (std::size_t i = 0; i < heads; ++i) {
    for (std::size_t j = 0; j < heads; ++j) {
      terms.push_back(custom(heads_a[i], heads_b[j]));
    }
  }
  return ad::scale(ad::add_n(terms),
                   T(1) / static_cast<T>(heads * heads));
}

template <typename T>
CompositeLoss<T> composite_loss(Mode mode, const LossParts<T>& parts,
                                const LossWeights& weights) {
  weights.validate();
  auto need = [mode](const std::optional<Var<T>>& part, const char* name) {
    if (!part) {
      throw std::invalid_argument("composite_loss: mode " +
                                  std::string(to_string(mode)) +
                                  " needs the '" + name + "' term");
    }
    return *part;
  };
  CompositeLoss<T> out;
  // Term order follows the reference loops: ua, then capacity, then the
  // view-pairing objective.
  std::vector<Var<T>> terms;
  if (uses_membership(mode)) {
    Var<T> ua = ad::scale(ad::add(need(parts.ua_t, "ua_t"),
                                  need(parts.ua_next, "ua_next")),
                          static_cast<T>(weights.ua_coefficient));
    out.ua = ua.item();
    terms.push_back(ua);
  }
  if (uses_capacity(mode)) {
    Var<T> cap = ad::scale(need(parts.mmcr, "mmcr"),
                           static_cast<T>(weights.epsilon));
    out.mmcr = cap.item();
    terms.push_back(cap);
  }
  if (is_dim_mode(mode)) {
    Var<T> global = need(parts.global, "global");
    Var<T> local = need(parts.local, "local");
    out.global = global.item();
    out.local = local.item();
    terms.push_back(ad::add(global, local));
  } else {
    Var<T> custom = need(parts.custom, "custom");
    out.custom = custom.item();
    terms.push_back(custom);
  }
  out.total = ad::add_n(terms);
  return out;
}

double estimate_mi_lower_bound(double loss_value, std::size_t batch_size) {
  if (batch_size < 2) {
    throw std::invalid_argument("estimate_mi_lower_bound: batch size must be "
                                ">= 2");
  }
  return std::log(static_cast<double>(batch_size)) - loss_value;
}

#define CAPREG_INSTANTIATE_LOSSES(T)                                           \
  template Var<T> info_nce(Var<T>);                                            \
  template Var<T> global_local_loss(Var<T>, Var<T>, Var<T>, GlobalPooling,     \
                                    std::optional<Var<T>>);                    \
  template Var<T> local_local_loss(Var<T>, Var<T>, Var<T>);                    \
  template Var<T> ua_discrepancy(Var<T>);                                      \
  template CentroidMatrix<T> build_centroids(Var<T>, bool);                    \
  template Var<T> mmcr_loss(Var<T>, bool);                                     \
  template Var<T> nt_xent(Var<T>, Var<T>, double);                             \
  template Var<T> barlow_twins(Var<T>, Var<T>, double);                        \
  template Var<T> pairwise_head_loss(Var<T>, Var<T>, const PairLoss<T>&);      \
  template CompositeLoss<T> composite_loss(Mode, const LossParts<T>&,          \
                                           const LossWeights&);

CAPREG_INSTANTIATE_LOSSES(float)
CAPREG_INSTANTIATE_LOSSES(double)

}  // namespace capreg
