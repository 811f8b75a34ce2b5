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

#include "capreg/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "capreg/atlas.h"
#include "capreg/autodiff/ops.h"
#include "capreg/autodiff/params.h"
#include "capreg/losses.h"
#include "capreg/models.h"

namespace capreg {

namespace {

using Tn = ad::Tensor<double>;
using V = ad::Var<double>;
using TensorPtr = std::shared_ptr<Tn>;
using Build = std::function<V(ad::Tape<double>&, const std::vector<V>&)>;

TensorPtr gaussian(ad::Shape shape, Rng& rng, double sd = 1.0) {
  auto t = std::make_shared<Tn>(std::move(shape));
  for (double& v : t->storage()) v = rng.normal(0.0, sd);
  return t;
}

// Magnitudes in [0.2, 1.2] so kinks (relu) sit far from every sample.
TensorPtr off_zero(ad::Shape shape, Rng& rng) {
  auto t = std::make_shared<Tn>(std::move(shape));
  for (double& v : t->storage()) v = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.2, 1.2);
  return t;
}

// Leaves for `inputs`, then `build`. Non-scalar outputs are contracted
// against a fixed random weighting so every output element matters.
GradProblem problem(std::vector<TensorPtr> inputs, Build build, std::uint64_t weight_seed) {
  auto weights = std::make_shared<TensorPtr>();
  GradProblem p;
  p.inputs = inputs;
  p.loss = [inputs, build, weights, weight_seed](ad::Tape<double>& tape) {
    std::vector<V> leaves;
    for (const TensorPtr& t : inputs) leaves.push_back(tape.leaf(t));
    V out = build(tape, leaves);
    if (out.value().size() == 1) return ad::reshape(out, ad::Shape{});
    if (!*weights) {
      Rng rng(weight_seed, {0x77});
      *weights = gaussian(out.shape(), rng);
    }
    return ad::sum(ad::mul(out, tape.constant(**weights)));
  };
  return p;
}

GradCase op(std::string name, std::string group,
            std::function<std::vector<TensorPtr>(Rng&)> inputs, Build build) {
  return GradCase{name, std::move(group), [inputs, build](Rng& rng) {
                    std::vector<TensorPtr> in = inputs(rng);
                    const auto seed = static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 30));
                    return problem(std::move(in), build, seed);
                  }};
}

V membership_of(V logits) { return ad::softmax(logits); }

// Tiny encoder + atlas + critics. Parameters are the checked inputs; the
// frame pair is constant.
GradProblem tiny_model(Mode mode, Rng& rng) {
  struct Bundle {
    ad::ParameterStore<double> store;
    std::optional<Encoder<double>> encoder;
    std::optional<Atlas<double>> atlas;
    std::optional<Critic<double>> global_critic, local_critic;
    Tn frames_t, frames_next;
  };
  auto b = std::make_shared<Bundle>();
  EncoderConfig enc;
  enc.input_height = 12;
  enc.input_width = 12;
  enc.convs = {{4, 2, 3}, {3, 1, 4}, {3, 1, 4}};
  enc.local_tap_index = 1;
  AtlasConfig atlas;
  atlas.n_heads = 2;
  atlas.units_per_head = 4;
  atlas.hidden_units = 6;
  atlas.membership_enabled = uses_membership(mode);
  b->encoder.emplace(enc, b->store, rng, "encoder");
  b->atlas.emplace(atlas, enc.latent_dim(), b->store, rng, "atlas");
  const std::size_t channels = enc.local_shape().channels;
  b->global_critic.emplace(b->store, "critic.global", atlas.units_per_head, channels, rng);
  b->local_critic.emplace(b->store, "critic.local", channels, channels, rng);
  // Random (not orthogonal) parameters keep activations away from zero
  // more evenly than the training initialisation.
  for (const auto& e : b->store.entries()) {
    if (e.trainable) {
      for (double& v : e.tensor->storage()) v = rng.normal(0.0, 0.5);
    }
  }
  const std::size_t batch = 5;
  b->frames_t = *gaussian({batch, 1, 12, 12}, rng);
  b->frames_next = *gaussian({batch, 1, 12, 12}, rng);

  GradProblem p;
  for (const auto& e : b->store.entries()) {
    if (e.trainable) p.inputs.push_back(e.tensor);
  }
  p.owner = b;
  Bundle* raw = b.get();
  p.loss = [raw, mode](ad::Tape<double>& tape) {
    const auto enc_t = raw->encoder->forward(tape.constant(raw->frames_t));
    const auto enc_next = raw->encoder->forward(tape.constant(raw->frames_next));
    const AtlasOutput<double> out = raw->atlas->forward(enc_t.latent, true);
    LossParts<double> parts;
    const bool ua = uses_membership(mode);
    parts.global = global_local_loss(out.charts, enc_next.local,
                                     raw->global_critic->projection(tape),
                                     ua ? GlobalPooling::kHeadMean : GlobalPooling::kPerHead,
                                     out.membership);
    parts.local = local_local_loss(enc_t.local, enc_next.local, raw->local_critic->projection(tape));
    if (ua) {
      parts.ua_t = ua_discrepancy(*out.membership);
      parts.ua_next = ua_discrepancy(raw->atlas->membership(enc_next.latent));
    }
    parts.mmcr = mmcr_loss(out.charts, true);
    LossWeights w;
    w.epsilon = 0.5;
    return composite_loss(mode, parts, w).total;
  };
  return p;
}

std::vector<GradCase> build_registry() {
  using S = ad::Shape;
  auto shapes = [](std::vector<S> list, bool avoid_zero = false) {
    return [list, avoid_zero](Rng& rng) {
      std::vector<TensorPtr> out;
      for (const S& s : list) out.push_back(avoid_zero ? off_zero(s, rng) : gaussian(s, rng));
      return out;
    };
  };
  std::vector<GradCase> r;

  // Kernels.
  r.push_back(op("matmul", "op", shapes({{4, 5}, {5, 6}}),
                 [](auto&, const auto& x) { return ad::matmul(x[0], x[1]); }));
  r.push_back(op("conv2d", "op", shapes({{2, 2, 7, 7}, {3, 2, 3, 3}, {3}}),
                 [](auto&, const auto& x) { return ad::conv2d<double>(x[0], x[1], x[2], 2); }));
  r.push_back(op("relu", "op", shapes({{4, 6}}, true),
                 [](auto&, const auto& x) { return ad::relu(x[0]); }));
  r.push_back(op("batchnorm_train", "op", shapes({{6, 4}, {4}, {4}}), [](auto&, const auto& x) {
    return ad::batchnorm<double>(x[0], nullptr, ad::BatchNormOptions{}, x[1], x[2]);
  }));
  r.push_back(op("batchnorm_eval", "op", shapes({{6, 4}, {4}, {4}}), [](auto&, const auto& x) {
    static ad::BatchNormState<double> state{{0.1, -0.2, 0.3, 0.0}, {0.5, 1.5, 2.0, 0.8}};
    ad::BatchNormOptions o;
    o.training = false;
    return ad::batchnorm<double>(x[0], &state, o, x[1], x[2]);
  }));
  r.push_back(op("softmax_cross_entropy", "op", shapes({{6, 4}}), [](auto&, const auto& x) {
    return ad::softmax_cross_entropy(x[0], {0, 3, 1, 2, 2, 0});
  }));
  r.push_back(op("mean", "op", shapes({{4, 6}}), [](auto&, const auto& x) { return ad::mean(x[0]); }));
  r.push_back(op("sum", "op", shapes({{4, 6}}), [](auto&, const auto& x) { return ad::sum(x[0]); }));
  r.push_back(op("l2_normalize", "op", shapes({{4, 6}}),
                 [](auto&, const auto& x) { return ad::l2_normalize(x[0]); }));
  r.push_back(op("add", "op", shapes({{4, 6}, {4, 6}}),
                 [](auto&, const auto& x) { return ad::add(x[0], x[1]); }));
  r.push_back(op("sub", "op", shapes({{4, 6}, {4, 6}}),
                 [](auto&, const auto& x) { return ad::sub(x[0], x[1]); }));
  r.push_back(op("mul", "op", shapes({{4, 6}, {4, 6}}),
                 [](auto&, const auto& x) { return ad::mul(x[0], x[1]); }));
  r.push_back(op("scale", "op", shapes({{4, 6}}),
                 [](auto&, const auto& x) { return ad::scale(x[0], -1.7); }));
  r.push_back(op("add_scalar", "op", shapes({{4, 6}}),
                 [](auto&, const auto& x) { return ad::add_scalar(x[0], 0.3); }));
  r.push_back(op("add_n", "op", shapes({{4, 6}, {4, 6}, {4, 6}}),
                 [](auto&, const auto& x) { return ad::add_n<double>({x[0], x[1], x[2]}); }));
  r.push_back(op("transpose", "op", shapes({{4, 6}}),
                 [](auto&, const auto& x) { return ad::transpose(x[0]); }));
  r.push_back(op("reshape", "op", shapes({{4, 6}}),
                 [](auto&, const auto& x) { return ad::reshape(x[0], S{3, 8}); }));
  r.push_back(op("softmax", "op", shapes({{4, 6}}),
                 [](auto&, const auto& x) { return ad::softmax(x[0]); }));
  r.push_back(op("reduce_mean", "op", shapes({{3, 4, 5}}),
                 [](auto&, const auto& x) { return ad::reduce_mean(x[0], 1); }));
  r.push_back(op("select", "op", shapes({{3, 4, 5}}),
                 [](auto&, const auto& x) { return ad::select(x[0], 2); }));
  r.push_back(op("stack", "op", shapes({{3, 4}, {3, 4}, {3, 4}}),
                 [](auto&, const auto& x) { return ad::stack<double>({x[0], x[1], x[2]}); }));
  r.push_back(op("concat_rows", "op", shapes({{3, 4}, {4, 4}}),
                 [](auto&, const auto& x) { return ad::concat_rows(x[0], x[1]); }));
  r.push_back(op("to_channel_last", "op", shapes({{2, 3, 4, 5}}),
                 [](auto&, const auto& x) { return ad::to_channel_last(x[0]); }));
  r.push_back(op("location", "op", shapes({{2, 3, 4, 5}}),
                 [](auto&, const auto& x) { return ad::location(x[0], 1, 2); }));
  r.push_back(op("weighted_heads", "op", shapes({{3, 4, 5}, {3, 4}}),
                 [](auto&, const auto& x) { return ad::weighted_heads(x[0], x[1]); }));
  r.push_back(op("nuclear_norm", "op", shapes({{4, 6}}),
                 [](auto&, const auto& x) { return ad::nuclear_norm(x[0]); }));
  r.push_back(op("linear", "op", shapes({{3, 4}, {4, 5}, {5}}),
                 [](auto&, const auto& x) { return ad::linear<double>(x[0], x[1], x[2]); }));

  // Objectives.
  r.push_back(op("info_nce", "loss", shapes({{6, 6}}),
                 [](auto&, const auto& x) { return info_nce(x[0]); }));
  r.push_back(op("global_local_per_head", "loss", shapes({{4, 3, 5}, {4, 2, 2, 6}, {5, 6}}),
                 [](auto&, const auto& x) {
                   return global_local_loss(x[0], x[1], x[2], GlobalPooling::kPerHead);
                 }));
  r.push_back(op("global_local_head_mean", "loss", shapes({{4, 3, 5}, {4, 2, 2, 6}, {5, 6}}),
                 [](auto&, const auto& x) {
                   return global_local_loss(x[0], x[1], x[2], GlobalPooling::kHeadMean);
                 }));
  r.push_back(op("global_local_membership", "loss",
                 shapes({{4, 3, 5}, {4, 2, 2, 6}, {5, 6}, {4, 3}}), [](auto&, const auto& x) {
                   return global_local_loss<double>(x[0], x[1], x[2], GlobalPooling::kMembershipWeighted,
                                            membership_of(x[3]));
                 }));
  r.push_back(op("local_local", "loss", shapes({{4, 2, 2, 6}, {4, 2, 2, 6}, {6, 6}}),
                 [](auto&, const auto& x) { return local_local_loss(x[0], x[1], x[2]); }));
  r.push_back(op("ua_discrepancy", "loss", shapes({{6, 4}}),
                 [](auto&, const auto& x) { return ua_discrepancy(membership_of(x[0])); }));
  r.push_back(op("mmcr_normalized", "loss", shapes({{5, 3, 8}}),
                 [](auto&, const auto& x) { return mmcr_loss(x[0], true); }));
  r.push_back(op("mmcr_raw", "loss", shapes({{5, 3, 8}}),
                 [](auto&, const auto& x) { return mmcr_loss(x[0], false); }));
  r.push_back(op("nt_xent", "loss", shapes({{5, 6}, {5, 6}}),
                 [](auto&, const auto& x) { return nt_xent(x[0], x[1], 0.5); }));
  r.push_back(op("barlow_twins", "loss", shapes({{8, 4}, {8, 4}}),
                 [](auto&, const auto& x) { return barlow_twins(x[0], x[1], 0.005); }));
  r.push_back(op("pairwise_nt_xent", "loss", shapes({{5, 3, 4}, {5, 3, 4}}),
                 [](auto&, const auto& x) {
                   return pairwise_head_loss<double>(
                       x[0], x[1], [](V a, V b) { return nt_xent(a, b, 0.5); });
                 }));
  r.push_back(op("pairwise_barlow_twins", "loss", shapes({{8, 2, 4}, {8, 2, 4}}),
                 [](auto&, const auto& x) {
                   return pairwise_head_loss<double>(
                       x[0], x[1], [](V a, V b) { return barlow_twins(a, b, 0.005); });
                 }));

  // Composite objectives on free head outputs and local maps.
  LossWeights heavy;
  heavy.epsilon = 0.5;
  r.push_back(op("composite_dim_c", "composite",
                 shapes({{4, 3, 5}, {4, 2, 2, 6}, {4, 2, 2, 6}, {5, 6}, {6, 6}}),
                 [heavy](auto&, const auto& x) {
                   LossParts<double> p;
                   p.global = global_local_loss(x[0], x[2], x[3], GlobalPooling::kPerHead);
                   p.local = local_local_loss(x[1], x[2], x[4]);
                   p.mmcr = mmcr_loss(x[0], true);
                   return composite_loss(Mode::kDimC, p, heavy).total;
                 }));
  r.push_back(op("composite_dim_uac", "composite",
                 shapes({{4, 3, 5}, {4, 2, 2, 6}, {4, 2, 2, 6}, {5, 6}, {6, 6}, {4, 3}, {4, 3}}),
                 [heavy](auto&, const auto& x) {
                   LossParts<double> p;
                   p.global = global_local_loss(x[0], x[2], x[3], GlobalPooling::kHeadMean);
                   p.local = local_local_loss(x[1], x[2], x[4]);
                   p.ua_t = ua_discrepancy(membership_of(x[5]));
                   p.ua_next = ua_discrepancy(membership_of(x[6]));
                   p.mmcr = mmcr_loss(x[0], true);
                   return composite_loss(Mode::kDimUac, p, heavy).total;
                 }));
  r.push_back(op("composite_simclr_c", "composite", shapes({{5, 3, 4}, {5, 3, 4}}),
                 [heavy](auto&, const auto& x) {
                   LossParts<double> p;
                   p.custom = pairwise_head_loss<double>(
                       x[0], x[1], [](V a, V b) { return nt_xent(a, b, 0.5); });
                   p.mmcr = mmcr_loss(x[0], true);
                   return composite_loss(Mode::kSimclrC, p, heavy).total;
                 }));
  r.push_back(op("composite_bt_c", "composite", shapes({{8, 2, 4}, {8, 2, 4}}),
                 [heavy](auto&, const auto& x) {
                   LossParts<double> p;
                   p.custom = pairwise_head_loss<double>(
                       x[0], x[1], [](V a, V b) { return barlow_twins(a, b, 0.005); });
                   p.mmcr = mmcr_loss(x[0], true);
                   return composite_loss(Mode::kBtC, p, heavy).total;
                 }));

  // End to end through convolutions, heads and critics.
  r.push_back({"model_dim_c", "model", [](Rng& rng) { return tiny_model(Mode::kDimC, rng); }});
  r.push_back({"model_dim_uac", "model", [](Rng& rng) { return tiny_model(Mode::kDimUac, rng); }});
  return r;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) h = (h ^ ch) * 1099511628211ull;
  return h;
}

double evaluate(const GradProblem& p) {
  ad::Tape<double> tape;
  return p.loss(tape).item();
}

}  // namespace

const std::vector<GradCase>& gradcheck_registry() {
  static const std::vector<GradCase> registry = build_registry();
  return registry;
}

GradcheckResult run_gradcheck(const GradCase& c, const GradcheckOptions& options) {
  Rng rng(options.seed, {fnv1a(c.name)});
  GradProblem p = c.make(rng);

  for (const TensorPtr& t : p.inputs) t->zero_grad();
  {
    ad::Tape<double> tape;
    tape.backward(p.loss(tape));
  }
  std::vector<std::vector<double>> analytic;
  std::size_t total = 0;
  for (const TensorPtr& t : p.inputs) {
    std::span<const double> g = std::as_const(*t).grad();
    analytic.emplace_back(g.begin(), g.end());
    analytic.back().resize(t->size(), 0.0);
    total += t->size();
  }

  // Coordinates without replacement when there are enough of them.
  std::vector<std::size_t> flat(total);
  std::iota(flat.begin(), flat.end(), 0);
  std::shuffle(flat.begin(), flat.end(), rng.engine());
  const auto points = static_cast<std::size_t>(std::max(options.points, 1));
  std::vector<std::size_t> picks;
  for (std::size_t k = 0; k < points; ++k) {
    picks.push_back(k < total ? flat[k] : flat[static_cast<std::size_t>(rng.uniform_int(
                                             0, static_cast<std::int64_t>(total) - 1))]);
  }

  GradcheckResult result{c.name, c.group, static_cast<int>(picks.size()), 0.0, true};
  for (std::size_t index : picks) {
    std::size_t input = 0;
    while (index >= p.inputs[input]->size()) index -= p.inputs[input++]->size();
    double& x = p.inputs[input]->storage()[index];
    const double saved = x;
    x = saved + options.step;
    const double up = evaluate(p);
    x = saved - options.step;
    const double down = evaluate(p);
    x = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    double a = analytic[input][index];
    if (options.inject_fault) a += 1e-2 * (1.0 + std::abs(a));
    const double err = std::abs(a - numeric) / std::max(std::abs(numeric), 1.0);
    if (!(err <= result.max_rel_error)) result.max_rel_error = err;  // NaN sticks
  }
  result.passed = result.max_rel_error <= options.tolerance;
  return result;
}

std::vector<GradcheckResult> run_gradcheck(std::string_view scope,
                                           const GradcheckOptions& options) {
  std::vector<GradcheckResult> out;
  for (const GradCase& c : gradcheck_registry()) {
    if (scope == "all" || scope == c.name) out.push_back(run_gradcheck(c, options));
  }
  if (out.empty()) throw UnknownCaseError("unknown gradcheck scope '" + std::string(scope) + "'");
  return out;
}

std::string gradcheck_table(const std::vector<GradcheckResult>& results) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-26s %-10s %6s %14s  %s\n", "case", "group", "points",
                "max_rel_err", "status");
  out += line;
  for (const GradcheckResult& r : results) {
    std::snprintf(line, sizeof(line), "%-26s %-10s %6d %14.3e  %s\n", r.name.c_str(),
                  r.group.c_str(), r.points, r.max_rel_error, r.passed ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace capreg
