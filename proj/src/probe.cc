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

#include "capreg/probe.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

#include "capreg/autodiff/ops.h"
#include "capreg/autodiff/optim.h"

namespace capreg {

namespace {

constexpr std::uint64_t kProbeTag = 0x70726f62;    // "prob"
constexpr std::uint64_t kShuffleTag = 0x73687566;  // "shuf"
constexpr std::size_t kProbeBatch = 256;
constexpr std::size_t kFeatureBatch = 256;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<FrameRef> all_frames(const Dataset& data, const std::vector<std::size_t>& episodes) {
  std::vector<FrameRef> refs;
  for (std::size_t e : episodes) {
    for (int t = 0; t < data.episodes[e].length; ++t) refs.push_back({e, t});
  }
  return refs;
}

std::vector<std::vector<int>> labels_of(const Dataset& data,
                                        const std::vector<std::size_t>& episodes) {
  std::vector<std::vector<int>> out(data.world.factors.size());
  for (std::size_t e : episodes) {
    const Episode& ep = data.episodes[e];
    for (int t = 0; t < ep.length; ++t) {
      for (std::size_t f = 0; f < out.size(); ++f) out[f].push_back(ep.label(t, f));
    }
  }
  return out;
}

// Standardise every split with train statistics. Constant columns keep
// unit scale.
void standardize(ProbeData& p) {
  const std::size_t d = p.dim;
  const std::size_t n = p.train.size() / d;
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += p.train[i * d + j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = p.train[i * d + j] - mean[j];
      sd[j] += c * c;
    }
  }
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < 1e-8) s = 1.0;
  }
  for (std::vector<double>* split : {&p.train, &p.val, &p.test}) {
    for (std::size_t i = 0; i < split->size(); ++i) {
      (*split)[i] = ((*split)[i] - mean[i % d]) / sd[i % d];
    }
  }
}

std::vector<int> predict(const ConstRowMap& x, const Eigen::MatrixXd& w, const Eigen::RowVectorXd& b) {
  const Eigen::MatrixXd logits = (x * w).rowwise() + b;
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

void shuffle(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

ProbeReport probe_all(const RunConfig& config, const Dataset& data, ProbeData p) {
  standardize(p);
  if (config.probe.shuffle_labels) {
    for (std::size_t f = 0; f < p.train_labels.size(); ++f) {
      Rng rng(config.seed, {kShuffleTag, f});
      shuffle(p.train_labels[f], rng);
      shuffle(p.val_labels[f], rng);
    }
  }
  std::vector<FactorPredictions> predictions;
  std::vector<FactorScore> extras;
  for (std::size_t f = 0; f < data.world.factors.size(); ++f) {
    FactorScore score;
    predictions.push_back(
        train_linear_probe(p, f, data.world.factors[f], config.probe, config.seed, &score));
    extras.push_back(score);
  }
  ProbeReport report = evaluate(predictions);
  for (std::size_t f = 0; f < report.factors.size(); ++f) {
    report.factors[f].train_classes = extras[f].train_classes;
    report.factors[f].best_step = extras[f].best_step;
    report.factors[f].steps_run = extras[f].steps_run;
  }
  report.seed = config.seed;
  report.config_hash = config.hash();
  return report;
}

}  // namespace

double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size() || truth.empty()) {
    throw std::invalid_argument("macro_f1: need equally sized, non-empty label vectors");
  }
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(predicted.begin(), predicted.end());
  double total = 0;
  for (int c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool t = truth[i] == c, p = predicted[i] == c;
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    total += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
  return total / static_cast<double>(classes.size());
}

double accuracy(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size() || truth.empty()) {
    throw std::invalid_argument("accuracy: need equally sized, non-empty label vectors");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

ProbeReport evaluate(const std::vector<FactorPredictions>& predictions) {
  ProbeReport report;
  std::map<Category, std::vector<std::size_t>> by_category;
  for (const FactorPredictions& p : predictions) {
    FactorScore s;
    s.name = p.name;
    s.category = p.category;
    s.f1 = macro_f1(p.truth, p.predicted);
    s.accuracy = accuracy(p.truth, p.predicted);
    by_category[p.category].push_back(report.factors.size());
    report.factors.push_back(s);
  }
  std::vector<double> f1s, accs;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    const auto category = static_cast<Category>(c);
    auto it = by_category.find(category);
    if (it == by_category.end()) {
      report.excluded_categories.push_back(category);
      continue;
    }
    CategoryScore cs;
    cs.category = category;
    std::vector<double> f, a;
    for (std::size_t i : it->second) {
      f.push_back(report.factors[i].f1);
      a.push_back(report.factors[i].accuracy);
      cs.factors.push_back(report.factors[i].name);
    }
    cs.f1 = mean_of(f);
    cs.accuracy = mean_of(a);
    f1s.push_back(cs.f1);
    accs.push_back(cs.accuracy);
    report.categories.push_back(cs);
  }
  if (report.categories.empty()) throw ProbeError("evaluate: no factors to score");
  report.mean_f1 = mean_of(f1s);
  report.mean_acc = mean_of(accs);
  return report;
}

template <typename T>
std::vector<double> extract_features(const RunConfig& config, const Dataset& data,
                                     const Model<T>& model, const std::vector<std::size_t>& episodes,
                                     std::size_t* feature_dim) {
  const std::vector<FrameRef> refs = all_frames(data, episodes);
  const FeatureRule rule = config.feature_rule();
  std::vector<double> out;
  std::size_t dim = 0;
  for (std::size_t start = 0; start < refs.size(); start += kFeatureBatch) {
    const std::vector<FrameRef> chunk(
        refs.begin() + static_cast<std::ptrdiff_t>(start),
        refs.begin() + static_cast<std::ptrdiff_t>(std::min(refs.size(), start + kFeatureBatch)));
    ad::Tape<T> tape;
    const EncoderOutput<T> enc =
        model.encoder().forward(tape.constant(gather_frames<T>(data, chunk, config.pixel_factor())));
    ad::Tensor<T> features;
    if (rule == FeatureRule::kBackboneOnly) {
      features = inference_features<T>(enc.latent.value(), ad::Tensor<T>(), nullptr, rule);
    } else {
      const AtlasOutput<T> out_heads = model.atlas().forward(enc.latent, false);
      if (!out_heads.membership) {
        throw std::invalid_argument("argmax-head features need a membership mode");
      }
      features = inference_features<T>(enc.latent.value(), out_heads.charts.value(),
                                       &out_heads.membership->value(), rule);
    }
    dim = features.dim(1);
    for (T v : features.data()) out.push_back(static_cast<double>(v));
  }
  if (feature_dim) *feature_dim = dim;
  return out;
}

FactorPredictions train_linear_probe(const ProbeData& p, std::size_t factor, const Factor& meta,
                                     const ProbeConfig& config, std::uint64_t seed,
                                     FactorScore* score) {
  const std::size_t d = p.dim;
  const std::vector<int>& ytrain = p.train_labels.at(factor);
  const std::set<int> present(ytrain.begin(), ytrain.end());
  if (present.size() < 2) {
    throw ProbeError("probe: factor '" + meta.name + "' has fewer than 2 classes in training");
  }
  const int k = meta.cardinality;
  const std::size_t n = ytrain.size();
  const ConstRowMap xtrain(p.train.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const ConstRowMap xval(p.val.data(), static_cast<Eigen::Index>(p.val.size() / d),
                         static_cast<Eigen::Index>(d));
  const ConstRowMap xtest(p.test.data(), static_cast<Eigen::Index>(p.test.size() / d),
                          static_cast<Eigen::Index>(d));

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
  Eigen::MatrixXd best_w = w;
  Eigen::RowVectorXd best_b = b;
  ad::AdamMoments<double> mw, mb;
  const ad::AdamOptions opts{.lr = config.lr};
  const std::string wname = "probe." + meta.name + ".weight";
  const std::string bname = "probe." + meta.name + ".bias";

  const std::size_t nb = std::min(n, kProbeBatch);
  RowMatrix xb(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(d));
  std::vector<int> yb(nb);
  double best_acc = -1.0;
  int best_step = 0, stale = 0, steps_run = 0;
  for (int step = 1; step <= config.steps; ++step) {
    Rng rng(seed, {kProbeTag, factor, static_cast<std::uint64_t>(step)});
    for (std::size_t i = 0; i < nb; ++i) {
      const auto r = nb == n ? i : static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      xb.row(static_cast<Eigen::Index>(i)) = xtrain.row(static_cast<Eigen::Index>(r));
      yb[i] = ytrain[r];
    }
    Eigen::MatrixXd probs = (xb * w).rowwise() + b;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      const double m = probs.row(i).maxCoeff();
      probs.row(i) = (probs.row(i).array() - m).exp().matrix();
      probs.row(i) /= probs.row(i).sum();
      probs(i, yb[static_cast<std::size_t>(i)]) -= 1.0;
    }
    probs /= static_cast<double>(nb);
    const Eigen::MatrixXd gw = xb.transpose() * probs;
    const Eigen::RowVectorXd gb = probs.colwise().sum();
    ad::adam_step<double>(wname, std::span<double>(w.data(), w.size()),
                          std::span<const double>(gw.data(), gw.size()), mw, opts);
    ad::adam_step<double>(bname, std::span<double>(b.data(), b.size()),
                          std::span<const double>(gb.data(), gb.size()), mb, opts);
    steps_run = step;
    if (step % config.eval_every == 0 || step == config.steps) {
      const double acc = accuracy(p.val_labels.at(factor), predict(xval, w, b));
      if (acc > best_acc) {
        best_acc = acc;
        best_w = w;
        best_b = b;
        best_step = step;
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  if (score) {
    score->train_classes = static_cast<int>(present.size());
    score->best_step = best_step;
    score->steps_run = steps_run;
  }
  return {meta.name, meta.category, p.test_labels.at(factor), predict(xtest, best_w, best_b)};
}

template <typename T>
ProbeReport run_probe(const RunConfig& config, const Dataset& data, const Model<T>& model) {
  const std::string before = model.store().fingerprint();
  ProbeData p;
  p.train = extract_features(config, data, model, data.episodes_in(Split::kTrain), &p.dim);
  p.val = extract_features(config, data, model, data.episodes_in(Split::kVal), nullptr);
  p.test = extract_features(config, data, model, data.episodes_in(Split::kTest), nullptr);
  p.train_labels = labels_of(data, data.episodes_in(Split::kTrain));
  p.val_labels = labels_of(data, data.episodes_in(Split::kVal));
  p.test_labels = labels_of(data, data.episodes_in(Split::kTest));
  ProbeReport report = probe_all(config, data, std::move(p));
  const std::string after = model.store().fingerprint();
  if (before != after) throw std::logic_error("probe: model parameters changed while probing");
  report.feature_rule = config.feature_rule() == FeatureRule::kBackboneOnly ? "backbone" : "argmax_head";
  report.encoder_sha256 = after;
  return report;
}

ProbeReport run_pixel_probe(const RunConfig& config, const Dataset& data) {
  ProbeData p;
  p.dim = static_cast<std::size_t>(data.world.height) * data.world.width;
  auto pixels = [&](Split split) {
    const ad::Tensor<double> t =
        gather_frames<double>(data, all_frames(data, data.episodes_in(split)), config.pixel_factor());
    return std::vector<double>(t.data().begin(), t.data().end());
  };
  p.train = pixels(Split::kTrain);
  p.val = pixels(Split::kVal);
  p.test = pixels(Split::kTest);
  p.train_labels = labels_of(data, data.episodes_in(Split::kTrain));
  p.val_labels = labels_of(data, data.episodes_in(Split::kVal));
  p.test_labels = labels_of(data, data.episodes_in(Split::kTest));
  ProbeReport report = probe_all(config, data, std::move(p));
  report.feature_rule = "pixels";
  return report;
}

std::string report_json(const ProbeReport& r) {
  nlohmann::json factors = nlohmann::json::array();
  for (const FactorScore& f : r.factors) {
    factors.push_back({{"name", f.name},
                       {"category", to_string(f.category)},
                       {"f1", f.f1},
                       {"accuracy", f.accuracy},
                       {"train_classes", f.train_classes},
                       {"best_step", f.best_step},
                       {"steps_run", f.steps_run}});
  }
  nlohmann::json categories = nlohmann::json::object();
  for (const CategoryScore& c : r.categories) {
    categories[std::string(to_string(c.category))] = {
        {"f1", c.f1}, {"accuracy", c.accuracy}, {"factors", c.factors}};
  }
  nlohmann::json excluded = nlohmann::json::array();
  for (Category c : r.excluded_categories) excluded.push_back(to_string(c));
  const nlohmann::json doc = {{"format", "capreg-probe-report"},
                              {"version", 1},
                              {"seed", r.seed},
                              {"config_hash", r.config_hash},
                              {"feature_rule", r.feature_rule},
                              {"encoder_sha256", r.encoder_sha256},
                              {"factors", factors},
                              {"categories", categories},
                              {"excluded_categories", excluded},
                              {"mean_f1", r.mean_f1},
                              {"mean_acc", r.mean_acc}};
  return doc.dump(2) + "\n";
}

template std::vector<double> extract_features(const RunConfig&, const Dataset&, const Model<float>&,
                                              const std::vector<std::size_t>&, std::size_t*);
template std::vector<double> extract_features(const RunConfig&, const Dataset&,
                                              const Model<double>&,
                                              const std::vector<std::size_t>&, std::size_t*);
template ProbeReport run_probe(const RunConfig&, const Dataset&, const Model<float>&);
template ProbeReport run_probe(const RunConfig&, const Dataset&, const Model<double>&);

}  // namespace capreg
