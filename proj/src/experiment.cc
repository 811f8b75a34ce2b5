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

#include "capreg/experiment.h"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "capreg/checkpoint.h"
#include "capreg/util/hash.h"
#include "json.hpp"

namespace capreg {

namespace {

using Clock = std::chrono::steady_clock;

// Shortest text that parses back to the same double.
std::string axis_value(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof(buf), v).ptr;
  return std::string(buf, end);
}

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CompatibilityError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
PretrainResult pretrain_as(const RunConfig& config, const Dataset& data,
                           const std::filesystem::path& out_dir) {
  const auto t0 = Clock::now();
  Model<T> model(config);
  PretrainResult result;
  result.trace = pretrain(config, data, model);
  result.seconds = since(t0);
  if (out_dir.empty()) return result;

  std::filesystem::create_directories(out_dir);
  const std::string canonical = config.canonical();
  save_checkpoint(out_dir / kCheckpointFile, model.store(), canonical);
  write_trace_csv(out_dir / kTraceFile, result.trace);
  write_text(out_dir / kConfigFile, canonical);

  nlohmann::json artifacts = nlohmann::json::array();
  for (const auto& [role, file] : {std::pair{"checkpoint", kCheckpointFile},
                                   std::pair{"loss_trace", kTraceFile},
                                   std::pair{"config", kConfigFile}}) {
    artifacts.push_back(
        {{"role", role}, {"path", file}, {"sha256", sha256_file(out_dir / file)}});
  }
  const nlohmann::json manifest = {
      {"format", "capreg-run-manifest"},
      {"version", 1},
      {"mode", std::string(to_string(config.mode))},
      {"seed", config.seed},
      {"precision", std::string(ad::to_string(config.precision))},
      {"config_hash", config.hash()},
      {"config", canonical},
      {"dataset_hash", dataset_hash(data, config.data)},
      {"steps", config.steps},
      {"wall_clock_seconds", result.seconds},
      {"artifacts", artifacts}};
  result.manifest_path = (out_dir / kManifestFile).string();
  write_text(out_dir / kManifestFile, manifest.dump(2) + "\n");
  return result;
}

template <typename T>
ProbeReport probe_restored(const RunConfig& config, const Checkpoint& ck, const Dataset& data) {
  Model<T> model(config);
  restore(ck, model.store());
  return run_probe(config, data, model);
}

}  // namespace

Dataset dataset_for(const RunConfig& config) {
  return generate_dataset(config.world, config.data, config.data_seed);
}

PretrainResult run_pretrain(const RunConfig& config, const Dataset& data,
                            const std::filesystem::path& out_dir) {
  return config.precision == ad::Precision::kFloat64 ? pretrain_as<double>(config, data, out_dir)
                                                     : pretrain_as<float>(config, data, out_dir);
}

ProbeReport probe_checkpoint(const std::filesystem::path& checkpoint, const Dataset& data,
                             const ProbeConfig* override_probe,
                             const std::uint64_t* override_seed) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig config;
  try {
    config = parse_run_config(ck.config_text);
  } catch (const ConfigError& e) {
    throw CompatibilityError(checkpoint.string() + ": embedded config unreadable: " + e.what());
  }
  if (data.world.hash() != config.world.hash()) {
    throw CompatibilityError("dataset world " + data.world.hash().substr(0, 12) +
                             " does not match the checkpoint's world " +
                             config.world.hash().substr(0, 12));
  }
  if (override_probe) config.probe = *override_probe;
  if (override_seed) config.seed = *override_seed;
  config.precision = ck.precision;
  return ck.precision == ad::Precision::kFloat64 ? probe_restored<double>(config, ck, data)
                                                 : probe_restored<float>(config, ck, data);
}

ProbeReport pretrain_and_probe(const RunConfig& config, const Dataset& data,
                               std::vector<TraceRow>* trace) {
  auto go = [&](auto tag) {
    using T = decltype(tag);
    Model<T> model(config);
    auto rows = pretrain(config, data, model);
    if (trace) *trace = std::move(rows);
    return run_probe(config, data, model);
  };
  return config.precision == ad::Precision::kFloat64 ? go(double{}) : go(float{});
}

void verify_manifest(const std::filesystem::path& manifest) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(manifest.string() + ": not valid JSON: " + e.what());
  }
  if (doc.value("format", "") != "capreg-run-manifest" || !doc.contains("artifacts")) {
    throw CompatibilityError(manifest.string() + ": not a run manifest");
  }
  const std::filesystem::path dir = manifest.parent_path();
  for (const auto& a : doc["artifacts"]) {
    const std::filesystem::path file = dir / a.at("path").get<std::string>();
    if (!std::filesystem::exists(file)) {
      throw CompatibilityError("manifest artifact missing: " + file.string());
    }
    if (sha256_file(file) != a.at("sha256").get<std::string>()) {
      throw CompatibilityError("manifest artifact hash mismatch: " + file.string());
    }
  }
}

SweepAxis parse_sweep_axis(std::string_view text) {
  if (text == "epsilon") return SweepAxis::kEpsilon;
  if (text == "units") return SweepAxis::kUnits;
  if (text == "heads") return SweepAxis::kHeads;
  throw ConfigError("unknown sweep axis '" + std::string(text) +
                        "' (expected epsilon, units or heads)",
                    0, "axis");
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kEpsilon: return "epsilon";
    case SweepAxis::kUnits: return "units";
    case SweepAxis::kHeads: return "heads";
  }
  return "?";
}

RunConfig apply_axis(const RunConfig& base, SweepAxis axis, double value,
                     std::size_t total_units) {
  RunConfig c = base;
  auto whole = [&](const char* what) {
    if (!(value >= 1) || value != std::floor(value)) {
      throw ConfigError(std::string(what) + " value must be a positive integer, got " +
                            std::to_string(value),
                        0, "values");
    }
    return static_cast<std::size_t>(value);
  };
  switch (axis) {
    case SweepAxis::kEpsilon:
      if (!(value >= 0)) throw ConfigError("epsilon must be >= 0", 0, "values");
      c.weights.epsilon = value;
      break;
    case SweepAxis::kUnits:
      c.atlas.units_per_head = whole("units");
      break;
    case SweepAxis::kHeads: {
      const std::size_t heads = whole("heads");
      const std::size_t total =
          total_units ? total_units : base.atlas.n_heads * base.atlas.units_per_head;
      if (total % heads != 0) {
        throw ConfigError("heads sweep: " + std::to_string(total) +
                              " total units are not divisible by " + std::to_string(heads) +
                              " heads",
                          0, "values");
      }
      c.atlas.n_heads = heads;
      c.atlas.units_per_head = total / heads;
      break;
    }
  }
  c.validate();
  return c;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const SweepOptions& options) {
  if (options.values.empty()) throw ConfigError("sweep needs at least one value", 0, "values");
  if (options.seeds.empty()) throw ConfigError("sweep needs at least one seed", 0, "seeds");
  // Validate every point before spending any compute.
  std::vector<RunConfig> configs;
  std::vector<SweepRow> rows;
  for (double v : options.values) {
    for (std::uint64_t s : options.seeds) {
      RunConfig c = apply_axis(base, options.axis, v, options.total_units);
      c.seed = s;
      configs.push_back(c);
      SweepRow row;
      row.value = v;
      row.seed = s;
      rows.push_back(row);
    }
  }
  const Dataset data = dataset_for(base);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      SweepRow& row = rows[i];
      const auto t0 = Clock::now();
      try {
        std::vector<TraceRow> trace;
        const ProbeReport report = pretrain_and_probe(configs[i], data, &trace);
        row.mean_f1 = report.mean_f1;
        row.mean_acc = report.mean_acc;
        row.ok = true;
        if (!options.out_dir.empty()) {
          char name[96];
          std::snprintf(name, sizeof(name), "%s=%s/seed=%llu",
                        std::string(to_string(options.axis)).c_str(), axis_value(row.value).c_str(),
                        static_cast<unsigned long long>(row.seed));
          const auto dir = options.out_dir / name;
          std::filesystem::create_directories(dir);
          write_trace_csv(dir / kTraceFile, trace);
          write_text(dir / kReportFile, report_json(report));
        }
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      row.seconds = since(t0);
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(options.workers,
                                                     static_cast<unsigned>(configs.size())));
  std::vector<std::thread> pool;
  for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  return rows;
}

namespace {

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

}  // namespace

std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::string out = "axis,value,seed,status,mean_f1,mean_acc,error\n";
  char buf[256];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%s,%.17g,%.17g,",
                  std::string(to_string(axis)).c_str(), axis_value(r.value).c_str(),
                  static_cast<unsigned long long>(r.seed), r.ok ? "ok" : "failed",
                  r.ok ? r.mean_f1 : NAN, r.ok ? r.mean_acc : NAN);
    out += buf;
    out += csv_field(r.error) + "\n";
  }
  return out;
}

std::string sweep_means_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::string out = "axis,value,runs,failed,mean_f1,se_f1,mean_acc\n";
  std::vector<double> order;
  std::map<double, std::vector<const SweepRow*>> groups;
  for (const SweepRow& r : rows) {
    if (!groups.count(r.value)) order.push_back(r.value);
    groups[r.value].push_back(&r);
  }
  char buf[256];
  for (double v : order) {
    std::vector<double> f1, acc;
    int failed = 0;
    for (const SweepRow* r : groups[v]) {
      if (r->ok) {
        f1.push_back(r->mean_f1);
        acc.push_back(r->mean_acc);
      } else {
        ++failed;
      }
    }
    double m = NAN, se = NAN, ma = NAN;
    if (!f1.empty()) {
      m = ma = 0;
      for (std::size_t i = 0; i < f1.size(); ++i) {
        m += f1[i];
        ma += acc[i];
      }
      m /= f1.size();
      ma /= f1.size();
      if (f1.size() > 1) {
        double ss = 0;
        for (double x : f1) ss += (x - m) * (x - m);
        se = std::sqrt(ss / (f1.size() - 1) / f1.size());
      }
    }
    std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%d,%.17g,%.17g,%.17g\n",
                  std::string(to_string(axis)).c_str(), axis_value(v).c_str(), groups[v].size(),
                  failed, m, se, ma);
    out += buf;
  }
  return out;
}

}  // namespace capreg
