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

#include "capreg/train.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "capreg/autodiff/ops.h"
#include "capreg/autodiff/optim.h"
#include "capreg/util/hash.h"
#include "capreg/util/rng.h"

namespace capreg {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;   // "init"
constexpr std::uint64_t kBatchTag = 0x62617463;  // "batc"

}  // namespace

template <typename T>
Model<T>::Model(const RunConfig& config) {
  config.validate();
  Rng rng(config.seed, {kInitTag});
  encoder_.emplace(config.encoder, store_, rng);
  atlas_.emplace(config.atlas, config.encoder.latent_dim(), store_, rng);
  if (is_dim_mode(config.mode)) {
    const std::size_t channels = config.encoder.local_shape().channels;
    global_critic_.emplace(store_, "critic.global", config.atlas.units_per_head, channels, rng);
    local_critic_.emplace(store_, "critic.local", channels, channels, rng);
  }
}

template <typename T>
StepGraph<T> build_step(const RunConfig& config, const Dataset& data, const Model<T>& model,
                        ad::Tape<T>& tape, int step) {
  Rng rng(config.seed, {kBatchTag, static_cast<std::uint64_t>(step)});
  const std::vector<std::size_t> pool = data.episodes_in(Split::kTrain);
  const double scale = config.pixel_factor();
  StepGraph<T> graph;

  if (is_dim_mode(config.mode)) {
    const PairBatch batch = sample_batch(data, pool, config.batch_size, rng);
    ad::Var<T> x_t = tape.constant(gather_frames<T>(data, batch.anchors, scale, 0));
    ad::Var<T> x_next = tape.constant(gather_frames<T>(data, batch.anchors, scale, 1));
    const EncoderOutput<T> enc_t = model.encoder().forward(x_t);
    const EncoderOutput<T> enc_next = model.encoder().forward(x_next);
    const AtlasOutput<T> out_t = model.atlas().forward(enc_t.latent, true);
    graph.charts_first = out_t.charts;
    graph.parts.global = global_local_loss(out_t.charts, enc_next.local,
                                           model.global_critic()->projection(tape),
                                           config.pooling(), out_t.membership);
    graph.parts.local = local_local_loss(enc_t.local, enc_next.local,
                                         model.local_critic()->projection(tape));
    if (uses_membership(config.mode)) {
      graph.parts.ua_t = ua_discrepancy(*out_t.membership);
      graph.parts.ua_next = ua_discrepancy(model.atlas().membership(enc_next.latent));
    }
  } else {
    const std::vector<FrameRef> refs = sample_frames(data, pool, config.batch_size, rng);
    const ViewPair<T> views =
        two_view_batch(gather_frames<T>(data, refs, scale), config.augment, rng);
    const EncoderOutput<T> enc_a = model.encoder().forward(tape.constant(views.first));
    const EncoderOutput<T> enc_b = model.encoder().forward(tape.constant(views.second));
    graph.charts_first = model.atlas().forward(enc_a.latent, true).charts;
    graph.charts_second = model.atlas().forward(enc_b.latent, true).charts;
    const bool simclr = config.mode == Mode::kSimclr || config.mode == Mode::kSimclrC;
    const LossWeights w = config.weights;
    PairLoss<T> custom = simclr ? PairLoss<T>([w](ad::Var<T> a, ad::Var<T> b) {
      return nt_xent(a, b, w.tau);
    })
                                : PairLoss<T>([w](ad::Var<T> a, ad::Var<T> b) {
                                    return barlow_twins(a, b, w.lambda);
                                  });
    graph.parts.custom = pairwise_head_loss(graph.charts_first, graph.charts_second, custom);
  }
  if (uses_capacity(config.mode)) {
    graph.parts.mmcr = mmcr_loss(graph.charts_first, config.mmcr_normalize);
  }
  graph.loss = composite_loss(config.mode, graph.parts, config.weights);
  return graph;
}

namespace {

double clean(double v) { return v == 0.0 ? 0.0 : v; }

std::string describe(const TraceRow& r) {
  std::ostringstream out;
  out << "total=" << r.total << " global=" << r.global << " local=" << r.local
      << " ua=" << r.ua << " mmcr=" << r.mmcr;
  return out.str();
}

}  // namespace

template <typename T>
std::vector<TraceRow> pretrain(const RunConfig& config, const Dataset& data, Model<T>& model,
                               const std::function<void(const TraceRow&)>& on_row) {
  ad::Adam<T> adam(model.store(), ad::AdamOptions{.lr = config.lr,
                                                   .weight_decay = config.weight_decay});
  std::vector<TraceRow> rows;
  rows.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    ad::Tape<T> tape;
    const StepGraph<T> graph = build_step(config, data, model, tape, step);
    const CompositeLoss<T>& loss = graph.loss;
    TraceRow row{step,
                 clean(loss.total.item()),
                 clean(is_dim_mode(config.mode) ? loss.global : loss.custom),
                 clean(loss.local),
                 clean(loss.ua),
                 clean(loss.mmcr)};
    if (!std::isfinite(row.total) || !std::isfinite(row.global) || !std::isfinite(row.local) ||
        !std::isfinite(row.ua) || !std::isfinite(row.mmcr)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step) + ": " +
                              describe(row),
                          step);
    }
    model.store().zero_grad();
    tape.backward(loss.total);
    try {
      adam.step();
    } catch (const ad::NumericError& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what() + " (" +
                              describe(row) + ")",
                          step);
    }
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string out = "step,loss_total,loss_global,loss_local,loss_ua,loss_mmcr\n";
  char buf[256];
  for (const TraceRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, clean(r.total),
                  clean(r.global), clean(r.local), clean(r.ua), clean(r.mmcr));
    out += buf;
  }
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << trace_csv(rows);
}

std::string dataset_hash(const Dataset& data, const DatasetConfig& config) {
  return sha256_hex(data.world.hash() + "|" + std::to_string(data.seed) + "|" +
                    std::to_string(config.episodes) + "|" +
                    std::to_string(config.episode_length));
}

template class Model<float>;
template class Model<double>;
template StepGraph<float> build_step(const RunConfig&, const Dataset&, const Model<float>&,
                                     ad::Tape<float>&, int);
template StepGraph<double> build_step(const RunConfig&, const Dataset&, const Model<double>&,
                                      ad::Tape<double>&, int);
template std::vector<TraceRow> pretrain(const RunConfig&, const Dataset&, Model<float>&,
                                        const std::function<void(const TraceRow&)>&);
template std::vector<TraceRow> pretrain(const RunConfig&, const Dataset&, Model<double>&,
                                        const std::function<void(const TraceRow&)>&);

}  // namespace capreg
