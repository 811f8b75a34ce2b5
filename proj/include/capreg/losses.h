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

// Training objectives. Every function is a pure function of its tape inputs
// and returns a scalar Var; shapes follow the conventions
//   head outputs   [B, N, D]   (batch, charts/heads, units per head)
//   local maps     [B, H, W, C] (channel-last)
//   scores         [B, B]      (anchor i against candidate j, positives on
//                               the diagonal)

#ifndef CAPREG_LOSSES_H_
#define CAPREG_LOSSES_H_

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "capreg/autodiff/ops.h"
#include "capreg/autodiff/tape.h"

namespace capreg {

using ad::Var;

// Pretraining objective. The "-c" modes add the capacity (nuclear-norm)
// regulariser; the plain ones are the corresponding baselines.
enum class Mode { kDimC, kDimUac, kSimclrC, kBtC, kDim, kDimUa, kSimclr, kBt };

Mode parse_mode(std::string_view text);
std::string_view to_string(Mode mode);
bool is_dim_mode(Mode mode);        // temporal pairs, global/local objectives
bool uses_membership(Mode mode);    // unbalanced-atlas modes
bool uses_capacity(Mode mode);      // epsilon-weighted nuclear-norm term

struct LossWeights {
  double epsilon = 0.0005;          // capacity term
  double ua_coefficient = -0.05;    // applied to ua(q_t) + ua(q_t+1)
  double tau = 0.5;                 // NT-Xent temperature
  double lambda = 0.005;            // Barlow Twins off-diagonal weight

  // Throws std::invalid_argument for epsilon < 0, tau <= 0 or lambda < 0.
  void validate() const;
};

// How head outputs are pooled into the query of the global-local term.
enum class GlobalPooling {
  kPerHead,              // one InfoNCE per head, averaged over heads
  kHeadMean,             // one InfoNCE on the plain mean of the heads
  kMembershipWeighted,   // one InfoNCE on sum_n q_n * o_n
};

// Mean softmax cross-entropy of each row against its own index.
template <typename T>
Var<T> info_nce(Var<T> scores);

// Bilinear critic pairing the (pooled) global outputs of x_t with every
// location of the local map of x_t+1. `projection` maps D -> C.
// `membership` is required for kMembershipWeighted.
template <typename T>
Var<T> global_local_loss(Var<T> global_outputs, Var<T> local_next,
                         Var<T> projection, GlobalPooling pooling,
                         std::optional<Var<T>> membership = std::nullopt);

// Same-location pairing of local features across time. `projection` maps
// C -> C.
template <typename T>
Var<T> local_local_loss(Var<T> local_t, Var<T> local_next, Var<T> projection);

// E_z sum_i (q_i(z) - 1/n)^2 for membership rows q: [B, N]. This is the
// positive discrepancy; the training loop applies the negative coefficient.
template <typename T>
Var<T> ua_discrepancy(Var<T> membership);

template <typename T>
struct CentroidMatrix {
  Var<T> matrix;  // [D, B], one column per sample
  bool normalized = false;
};

// Per-sample average of the (optionally L2-normalised) head vectors.
template <typename T>
CentroidMatrix<T> build_centroids(Var<T> head_outputs, bool normalize);

// -||C||_* over the centroid matrix of head_outputs: [B, N, D].
template <typename T>
Var<T> mmcr_loss(Var<T> head_outputs, bool normalize = true);

// Normalised-temperature cross-entropy over the 2B x 2B cosine similarity
// matrix; each sample's positive is its counterpart in the other view.
template <typename T>
Var<T> nt_xent(Var<T> view_a, Var<T> view_b, double tau);

// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2 over the
// cross-correlation of the batch-standardised views.
template <typename T>
Var<T> barlow_twins(Var<T> view_a, Var<T> view_b, double lambda);

template <typename T>
using PairLoss = std::function<Var<T>(Var<T>, Var<T>)>;

// Mean of custom(out_a[:, i, :], out_b[:, j, :]) over all N^2 ordered pairs.
template <typename T>
Var<T> pairwise_head_loss(Var<T> out_a, Var<T> out_b,
                          const PairLoss<T>& custom);

// Terms feeding composite_loss. Only the ones the mode needs must be set.
template <typename T>
struct LossParts {
  std::optional<Var<T>> global;
  std::optional<Var<T>> local;
  std::optional<Var<T>> ua_t;
  std::optional<Var<T>> ua_next;
  std::optional<Var<T>> mmcr;    // computed from the first view only
  std::optional<Var<T>> custom;  // pairwise NT-Xent / Barlow Twins
};

// Weighted contributions; they sum to `total`.
template <typename T>
struct CompositeLoss {
  Var<T> total;
  double global = 0.0;
  double local = 0.0;
  double ua = 0.0;
  double mmcr = 0.0;
  double custom = 0.0;
};

template <typename T>
CompositeLoss<T> composite_loss(Mode mode, const LossParts<T>& parts,
                                const LossWeights& weights);

// log B - loss: the InfoNCE lower bound on mutual information.
double estimate_mi_lower_bound(double loss_value, std::size_t batch_size);

}  // namespace capreg

#endif  // CAPREG_LOSSES_H_
