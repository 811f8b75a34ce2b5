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

#include "capreg/config.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "capreg/util/hash.h"

namespace capreg {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string_view to_string(GlobalPooling p) {
  switch (p) {
    case GlobalPooling::kPerHead: return "per_head";
    case GlobalPooling::kHeadMean: return "head_mean";
    case GlobalPooling::kMembershipWeighted: return "membership";
  }
  return "?";
}

std::string_view to_string(FeatureRule r) {
  return r == FeatureRule::kBackboneOnly ? "backbone" : "argmax_head";
}

std::string convs_text(const std::vector<ConvSpec>& convs) {
  std::string out;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(convs[i].kernel) + "/" + std::to_string(convs[i].stride) + "/" +
           std::to_string(convs[i].out_channels);
  }
  return out;
}

// Consumes one section of the document, rejecting keys nobody asked for.
class SectionReader {
 public:
  SectionReader(const IniDocument& doc, const std::string& name) : name_(name) {
    auto it = doc.find(name);
    if (it != doc.end()) entries_ = &it->second;
  }

  const IniValue* find(const std::string& key) {
    seen_.insert(key);
    if (entries_ == nullptr) return nullptr;
    auto it = entries_->find(key);
    return it == entries_->end() ? nullptr : &it->second;
  }

  template <typename Fn>
  void with(const std::string& key, Fn&& fn) {
    const IniValue* v = find(key);
    if (v == nullptr) return;
    try {
      fn(v->text);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(field(key) + ": " + e.what(), v->line, field(key));
    }
  }

  void number(const std::string& key, double& out) {
    with(key, [&](const std::string& t) { out = parse_double(t); });
  }
  void integer(const std::string& key, int& out) {
    with(key, [&](const std::string& t) {
      const long long v = parse_int(t);
      if (v < INT32_MIN || v > INT32_MAX) throw std::invalid_argument("out of range");
      out = static_cast<int>(v);
    });
  }
  void extent(const std::string& key, std::size_t& out) {
    with(key, [&](const std::string& t) {
      const long long v = parse_int(t);
      if (v <= 0) throw std::invalid_argument("must be a positive integer");
      out = static_cast<std::size_t>(v);
    });
  }
  void seed(const std::string& key, std::uint64_t& out) {
    with(key, [&](const std::string& t) {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || p != t.data() + t.size()) {
        throw std::invalid_argument("expected an unsigned integer, got '" + t + "'");
      }
      out = v;
    });
  }
  void boolean(const std::string& key, bool& out) {
    with(key, [&](const std::string& t) {
      if (t == "true" || t == "1" || t == "yes") {
        out = true;
      } else if (t == "false" || t == "0" || t == "no") {
        out = false;
      } else {
        throw std::invalid_argument("expected true or false, got '" + t + "'");
      }
    });
  }

  void finish() const {
    if (entries_ == nullptr) return;
    for (const auto& [key, value] : *entries_) {
      if (!seen_.count(key)) {
        throw ConfigError("unknown key '" + field(key) + "'", value.line, field(key));
      }
    }
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

  static double parse_double(const std::string& t) {
    double v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v)) {
      throw std::invalid_argument("expected a finite number, got '" + t + "'");
    }
    return v;
  }
  static long long parse_int(const std::string& t) {
    long long v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) {
      throw std::invalid_argument("expected an integer, got '" + t + "'");
    }
    return v;
  }

 private:
  std::string name_;
  const std::map<std::string, IniValue>* entries_ = nullptr;
  std::set<std::string> seen_;
};

std::vector<ConvSpec> parse_convs(const std::string& text) {
  std::vector<ConvSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string spec(trim(item));
    unsigned k = 0, s = 0, c = 0;
    char tail = 0;
    if (std::sscanf(spec.c_str(), "%u/%u/%u%c", &k, &s, &c, &tail) != 3) {
      throw std::invalid_argument("expected kernel/stride/channels entries, got '" + spec + "'");
    }
    out.push_back({k, s, c});
  }
  if (out.empty()) throw std::invalid_argument("empty conv plan");
  return out;
}

}  // namespace

IniDocument parse_ini(std::string_view text) {
  IniDocument doc;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string_view::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("malformed section header '" + std::string(line) + "'", line_no);
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("expected 'key = value', got '" + std::string(line) + "'", line_no);
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (section.empty()) throw ConfigError("key '" + key + "' outside any section", line_no, key);
    if (key.empty()) throw ConfigError("empty key", line_no);
    auto& entries = doc[section];
    if (entries.count(key)) {
      throw ConfigError("duplicate key '" + section + "." + key + "'", line_no,
                        section + "." + key);
    }
    entries[key] = {value, line_no};
  }
  return doc;
}

GlobalPooling RunConfig::pooling() const {
  if (global_pooling) return *global_pooling;
  return uses_membership(mode) ? GlobalPooling::kHeadMean : GlobalPooling::kPerHead;
}

FeatureRule RunConfig::feature_rule() const {
  if (probe.feature_rule) return *probe.feature_rule;
  return uses_membership(mode) ? FeatureRule::kArgmaxHead : FeatureRule::kBackboneOnly;
}

void RunConfig::validate() const {
  if (!(weights.epsilon >= 0.0)) throw ConfigError("train.epsilon must be >= 0", 0, "train.epsilon");
  if (!(weights.tau > 0.0)) throw ConfigError("train.tau must be > 0", 0, "train.tau");
  if (!(weights.lambda >= 0.0)) throw ConfigError("train.lambda must be >= 0", 0, "train.lambda");
  if (steps < 0) throw ConfigError("train.steps must be >= 0", 0, "train.steps");
  if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0", 0, "train.lr");
  if (weight_decay < 0.0) {
    throw ConfigError("train.weight_decay must be >= 0", 0, "train.weight_decay");
  }
  if (is_dim_mode(mode) && batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!is_dim_mode(mode) && mode != Mode::kSimclr && mode != Mode::kSimclrC && batch_size < 2) {
    throw ConfigError("train.batch_size must be >= 2 for Barlow Twins", 0, "train.batch_size");
  }
  if (pooling() == GlobalPooling::kMembershipWeighted && !uses_membership(mode)) {
    throw ConfigError("train.global_pooling = membership needs a membership mode", 0,
                      "train.global_pooling");
  }
  try {
    encoder.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), 0, "encoder.convs");
  }
  if (encoder.input_height != static_cast<std::size_t>(world.height) ||
      encoder.input_width != static_cast<std::size_t>(world.width)) {
    throw ConfigError("encoder input " + std::to_string(encoder.input_height) + "x" +
                          std::to_string(encoder.input_width) + " does not match the " +
                          std::to_string(world.height) + "x" + std::to_string(world.width) +
                          " world",
                      0, "encoder.profile");
  }
  try {
    atlas.validate();
    world.validate();
    data.validate();
    augment.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (probe.steps < 1 || probe.eval_every < 1 || probe.patience < 1 || !(probe.lr > 0.0)) {
    throw ConfigError("probe.steps, probe.eval_every, probe.patience and probe.lr must be positive");
  }
  if (feature_rule() == FeatureRule::kArgmaxHead && !atlas.membership_enabled) {
    throw ConfigError("probe.feature_rule = argmax_head needs a membership mode", 0,
                      "probe.feature_rule");
  }
}

std::string RunConfig::canonical() const {
  std::ostringstream out;
  out << "[train]\n"
      << "mode = " << to_string(mode) << "\n"
      << "batch_size = " << batch_size << "\n"
      << "steps = " << steps << "\n"
      << "lr = " << format_double(lr) << "\n"
      << "weight_decay = " << format_double(weight_decay) << "\n"
      << "epsilon = " << format_double(weights.epsilon) << "\n"
      << "ua_coefficient = " << format_double(weights.ua_coefficient) << "\n"
      << "tau = " << format_double(weights.tau) << "\n"
      << "lambda = " << format_double(weights.lambda) << "\n"
      << "seed = " << seed << "\n"
      << "precision = " << ad::to_string(precision) << "\n"
      << "global_pooling = " << to_string(pooling()) << "\n"
      << "mmcr_normalize = " << (mmcr_normalize ? "true" : "false") << "\n"
      << "\n[encoder]\n"
      << "profile = " << encoder_profile << "\n"
      << "convs = " << convs_text(encoder.convs) << "\n"
      << "local_tap_index = " << encoder.local_tap_index << "\n"
      << "pixel_scale = " << (pixel_scale == PixelScale::kUnit ? "unit" : "raw") << "\n"
      << "\n[atlas]\n"
      << "n_heads = " << atlas.n_heads << "\n"
      << "units_per_head = " << atlas.units_per_head << "\n"
      << "hidden_units = " << atlas.hidden_units << "\n"
      << "head_kind = " << to_string(atlas.head_kind) << "\n"
      << "membership_temperature = " << format_double(atlas.membership_temperature) << "\n"
      << "zero_init_membership = " << (atlas.zero_init_membership ? "true" : "false") << "\n"
      << "\n[world]\n"
      << "preset = " << world_preset << "\n"
      << "\n[data]\n"
      << "episodes = " << data.episodes << "\n"
      << "episode_length = " << data.episode_length << "\n"
      << "seed = " << data_seed << "\n"
      << "crop_min_scale = " << format_double(augment.crop_min_scale) << "\n"
      << "crop_max_scale = " << format_double(augment.crop_max_scale) << "\n"
      << "flip_probability = " << format_double(augment.flip_probability) << "\n"
      << "noise_amplitude = " << format_double(augment.noise_amplitude) << "\n"
      << "\n[probe]\n"
      << "steps = " << probe.steps << "\n"
      << "lr = " << format_double(probe.lr) << "\n"
      << "eval_every = " << probe.eval_every << "\n"
      << "patience = " << probe.patience << "\n"
      << "shuffle_labels = " << (probe.shuffle_labels ? "true" : "false") << "\n"
      << "feature_rule = " << to_string(feature_rule()) << "\n";
  return out.str();
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }

RunConfig parse_run_config(std::string_view text) {
  const IniDocument doc = parse_ini(text);
  static const std::set<std::string> kSections = {"train", "encoder", "atlas",
                                                  "world", "data",    "probe"};
  for (const auto& [name, entries] : doc) {
    if (!kSections.count(name)) {
      const int line = entries.empty() ? 0 : entries.begin()->second.line;
      throw ConfigError("unknown section [" + name + "]", line, name);
    }
  }

  RunConfig c;
  SectionReader train(doc, "train");
  if (train.find("mode") == nullptr) {
    throw ConfigError("missing required field 'train.mode'", 0, "train.mode");
  }
  train.with("mode", [&](const std::string& t) { c.mode = parse_mode(t); });
  train.extent("batch_size", c.batch_size);
  train.integer("steps", c.steps);
  train.number("lr", c.lr);
  train.number("weight_decay", c.weight_decay);
  train.number("epsilon", c.weights.epsilon);
  train.number("ua_coefficient", c.weights.ua_coefficient);
  train.number("tau", c.weights.tau);
  train.number("lambda", c.weights.lambda);
  train.seed("seed", c.seed);
  train.with("precision", [&](const std::string& t) { c.precision = ad::parse_precision(t); });
  train.with("global_pooling", [&](const std::string& t) {
    if (t == "per_head") {
      c.global_pooling = GlobalPooling::kPerHead;
    } else if (t == "head_mean") {
      c.global_pooling = GlobalPooling::kHeadMean;
    } else if (t == "membership") {
      c.global_pooling = GlobalPooling::kMembershipWeighted;
    } else {
      throw std::invalid_argument("expected per_head, head_mean or membership");
    }
  });
  train.boolean("mmcr_normalize", c.mmcr_normalize);
  train.finish();

  SectionReader world(doc, "world");
  world.with("preset", [&](const std::string& t) {
    if (t == "desk") {
      c.world = WorldConfig::desk();
    } else if (t == "paper") {
      c.world = WorldConfig::paper();
    } else {
      throw std::invalid_argument("expected desk or paper");
    }
    c.world_preset = t;
  });
  world.finish();

  SectionReader encoder(doc, "encoder");
  encoder.with("profile", [&](const std::string& t) {
    if (t == "desk") {
      c.encoder = EncoderConfig::desk();
    } else if (t == "paper") {
      c.encoder = EncoderConfig::paper();
    } else {
      throw std::invalid_argument("expected desk or paper");
    }
    c.encoder_profile = t;
  });
  encoder.with("convs", [&](const std::string& t) { c.encoder.convs = parse_convs(t); });
  int tap = static_cast<int>(c.encoder.local_tap_index);
  encoder.integer("local_tap_index", tap);
  if (tap < 0) throw ConfigError("encoder.local_tap_index must be >= 0", 0, "encoder.local_tap_index");
  c.encoder.local_tap_index = static_cast<std::size_t>(tap);
  encoder.with("pixel_scale", [&](const std::string& t) {
    if (t == "unit") {
      c.pixel_scale = PixelScale::kUnit;
    } else if (t == "raw") {
      c.pixel_scale = PixelScale::kRaw;
    } else {
      throw std::invalid_argument("expected unit or raw");
    }
  });
  encoder.finish();
  c.encoder.unit_pixel_range = c.pixel_scale == PixelScale::kUnit;

  SectionReader atlas(doc, "atlas");
  atlas.extent("n_heads", c.atlas.n_heads);
  atlas.extent("units_per_head", c.atlas.units_per_head);
  atlas.extent("hidden_units", c.atlas.hidden_units);
  atlas.with("head_kind", [&](const std::string& t) { c.atlas.head_kind = parse_head_kind(t); });
  atlas.number("membership_temperature", c.atlas.membership_temperature);
  atlas.boolean("zero_init_membership", c.atlas.zero_init_membership);
  atlas.finish();
  c.atlas.membership_enabled = uses_membership(c.mode);

  SectionReader data(doc, "data");
  data.integer("episodes", c.data.episodes);
  data.integer("episode_length", c.data.episode_length);
  data.seed("seed", c.data_seed);
  data.number("crop_min_scale", c.augment.crop_min_scale);
  data.number("crop_max_scale", c.augment.crop_max_scale);
  data.number("flip_probability", c.augment.flip_probability);
  data.number("noise_amplitude", c.augment.noise_amplitude);
  data.finish();

  SectionReader probe(doc, "probe");
  probe.integer("steps", c.probe.steps);
  probe.number("lr", c.probe.lr);
  probe.integer("eval_every", c.probe.eval_every);
  probe.integer("patience", c.probe.patience);
  probe.boolean("shuffle_labels", c.probe.shuffle_labels);
  probe.with("feature_rule", [&](const std::string& t) {
    if (t == "backbone") {
      c.probe.feature_rule = FeatureRule::kBackboneOnly;
    } else if (t == "argmax_head") {
      c.probe.feature_rule = FeatureRule::kArgmaxHead;
    } else if (t != "auto") {
      throw std::invalid_argument("expected auto, backbone or argmax_head");
    }
  });
  probe.finish();

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace capreg
