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

#include "capreg/cli.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "capreg/checkpoint.h"
#include "capreg/experiment.h"
#include "capreg/gradcheck.h"
#include "json.hpp"

namespace capreg::cli {

namespace {

namespace fs = std::filesystem;

// Options shared by the subcommands that take them.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::string> precision;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

RunConfig load_config(const Common& c) {
  RunConfig config = load_run_config(c.config);
  if (c.seed) config.seed = *c.seed;
  if (c.precision) {
    try {
      config.precision = ad::parse_precision(*c.precision);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), 0, "precision");
    }
  }
  return config;
}

Dataset load_or_generate(const std::string& dir, const RunConfig& config) {
  return dir.empty() ? dataset_for(config) : read_dataset(dir);
}

int cmd_pretrain(const Common& c, const std::string& dataset_dir, std::ostream& out) {
  const RunConfig config = load_config(c);
  const Dataset data = load_or_generate(dataset_dir, config);
  const PretrainResult r = run_pretrain(config, data, c.out_dir.empty() ? "run" : c.out_dir);
  const TraceRow& last = r.trace.empty() ? TraceRow{} : r.trace.back();
  out << "mode=" << to_string(config.mode) << " steps=" << r.trace.size()
      << " final_loss=" << fmt(last.total) << " seconds=" << fmt(r.seconds) << "\n";
  out << "manifest=" << r.manifest_path << "\n";
  return kOk;
}

int cmd_probe(const Common& c, const std::string& checkpoint, const std::string& dataset_dir,
              bool shuffle_labels, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig embedded;
  try {
    embedded = parse_run_config(ck.config_text);
  } catch (const ConfigError& e) {
    throw CompatibilityError(checkpoint + ": embedded config unreadable: " + e.what());
  }
  ProbeConfig probe = embedded.probe;
  if (!c.config.empty()) probe = load_run_config(c.config).probe;
  if (shuffle_labels) probe.shuffle_labels = true;
  const Dataset data = load_or_generate(dataset_dir, embedded);
  const std::uint64_t* seed = c.seed ? &*c.seed : nullptr;
  const ProbeReport report = probe_checkpoint(checkpoint, data, &probe, seed);
  const fs::path dir = c.out_dir.empty() ? fs::path(checkpoint).parent_path() : fs::path(c.out_dir);
  write_file(dir / kReportFile, report_json(report));
  out << "mean_f1=" << fmt(report.mean_f1) << " mean_acc=" << fmt(report.mean_acc) << "\n";
  return kOk;
}

int cmd_sweep(const Common& c, const std::string& axis, const std::vector<double>& values,
              std::vector<std::uint64_t> seeds, std::size_t total_units, std::ostream& out,
              std::ostream& err) {
  const RunConfig base = load_config(c);
  if (seeds.empty()) seeds.push_back(base.seed);
  SweepOptions o;
  o.axis = parse_sweep_axis(axis);
  o.values = values;
  o.seeds = seeds;
  o.total_units = total_units;
  o.workers = c.workers;
  o.out_dir = c.out_dir.empty() ? "sweep" : c.out_dir;
  const std::vector<SweepRow> rows = run_sweep(base, o);
  write_file(o.out_dir / "sweep.csv", sweep_csv(o.axis, rows));
  const std::string means = sweep_means_csv(o.axis, rows);
  write_file(o.out_dir / "sweep_means.csv", means);
  out << means;
  int failed = 0;
  for (const SweepRow& r : rows) {
    err << "run " << to_string(o.axis) << "=" << fmt(r.value) << " seed=" << r.seed
        << " seconds=" << fmt(r.seconds) << "\n";
    if (!r.ok) {
      ++failed;
      err << "run " << to_string(o.axis) << "=" << fmt(r.value) << " seed=" << r.seed
          << " failed: " << r.error << "\n";
    }
  }
  if (failed) {
    err << failed << " of " << rows.size() << " runs failed\n";
    return kFailed;
  }
  return kOk;
}

int cmd_gradcheck(const Common& c, const std::string& scope, int points, bool inject_fault,
                  std::ostream& out) {
  if (c.precision && ad::parse_precision(*c.precision) != ad::Precision::kFloat64) {
    throw ConfigError("gradcheck runs in 64-bit mode only", 0, "precision");
  }
  GradcheckOptions o;
  o.points = points;
  o.inject_fault = inject_fault;
  if (c.seed) o.seed = *c.seed;
  std::vector<GradcheckResult> results;
  try {
    results = run_gradcheck(scope, o);
  } catch (const UnknownCaseError& e) {
    throw ConfigError(e.what(), 0, "scope");
  }
  out << gradcheck_table(results);
  for (const GradcheckResult& r : results) {
    if (!r.passed) return kFailed;
  }
  return kOk;
}

int cmd_dataset_gen(const Common& c, std::ostream& out) {
  RunConfig config = load_run_config(c.config);
  if (c.seed) config.data_seed = *c.seed;
  const Dataset data = dataset_for(config);
  const fs::path dir = c.out_dir.empty() ? "dataset" : c.out_dir;
  write_dataset(dir, data, config.data);
  out << "episodes=" << data.episodes.size() << " world=" << data.world.hash()
      << " dir=" << dir.string() << "\n";
  return kOk;
}

int cmd_report(const Common& c, const std::vector<std::string>& reports,
               const std::vector<std::string>& manifests, std::ostream& out) {
  for (const std::string& m : manifests) {
    verify_manifest(m);
    out << "manifest ok: " << m << "\n";
  }
  if (reports.empty()) return kOk;
  std::string csv = "report,seed,mean_f1,mean_acc,agent,small_object,other,misc,score\n";
  std::vector<double> f1s;
  for (const std::string& path : reports) {
    std::ifstream in(path);
    if (!in) throw CompatibilityError("cannot read " + path);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw CompatibilityError(path + ": not valid JSON: " + e.what());
    }
    if (doc.value("format", "") != "capreg-probe-report") {
      throw CompatibilityError(path + ": not a probe report");
    }
    const double f1 = doc.at("mean_f1").get<double>();
    f1s.push_back(f1);
    csv += path + "," + std::to_string(doc.at("seed").get<std::uint64_t>()) + "," + fmt(f1) +
           "," + fmt(doc.at("mean_acc").get<double>());
    for (const char* cat : {"agent", "small_object", "other", "misc", "score"}) {
      const auto& cats = doc.at("categories");
      csv += "," + (cats.contains(cat) ? fmt(cats[cat].at("f1").get<double>()) : std::string());
    }
    csv += "\n";
  }
  double mean = 0;
  for (double v : f1s) mean += v;
  mean /= f1s.size();
  double se = 0;
  if (f1s.size() > 1) {
    for (double v : f1s) se += (v - mean) * (v - mean);
    se = std::sqrt(se / (f1s.size() - 1) / f1s.size());
  }
  out << csv << "reports=" << f1s.size() << " mean_f1=" << fmt(mean) << " se_f1=" << fmt(se)
      << "\n";
  if (!c.out_dir.empty()) write_file(fs::path(c.out_dir) / "summary.csv", csv);
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"capreg: capacity-regularised self-supervised training and probing"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub, bool config_required, bool with_precision) {
    auto* opt = sub->add_option("--config", common.config, "run configuration file");
    if (config_required) opt->required();
    sub->add_option("--seed", common.seed, "seed override");
    sub->add_option("--out-dir", common.out_dir, "output directory");
    if (with_precision) sub->add_option("--precision", common.precision, "f32 or f64");
  };

  std::string dataset_dir;
  CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain an encoder and write a run");
  add_common(pretrain, true, true);
  pretrain->add_option("--dataset", dataset_dir, "dataset directory (default: generate)");

  std::string checkpoint;
  bool shuffle = false;
  CLI::App* probe = app.add_subcommand("probe", "linear-probe a checkpoint");
  add_common(probe, false, false);
  probe->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  probe->add_option("--dataset", dataset_dir, "dataset directory (default: generate)");
  probe->add_flag("--shuffle-labels", shuffle, "permute training labels (chance baseline)");

  std::string axis = "epsilon";
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  std::size_t total_units = 0;
  CLI::App* sweep = app.add_subcommand("sweep", "pretrain+probe over an axis and seeds");
  add_common(sweep, true, true);
  sweep->add_option("--axis", axis, "epsilon | units | heads");
  sweep->add_option("--values", values, "comma separated values")->delimiter(',')->required();
  sweep->add_option("--seeds", seeds, "comma separated seeds")->delimiter(',');
  sweep->add_option("--total-units", total_units, "heads axis: fixed total output units");
  sweep->add_option("--workers", common.workers, "parallel sub-runs")
      ->check(CLI::PositiveNumber);

  std::string scope = "all";
  int points = 24;
  bool inject = false;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--scope", scope, "all or one case name");
  gradcheck->add_option("--seed", common.seed, "seed");
  gradcheck->add_option("--points", points, "coordinates per case")->check(CLI::Range(20, 100000));
  gradcheck->add_option("--precision", common.precision, "must be f64");
  gradcheck->add_flag("--inject-fault", inject, "corrupt analytic gradients (test hook)");

  CLI::App* dataset = app.add_subcommand("dataset-gen", "generate and write a dataset");
  add_common(dataset, true, false);

  std::vector<std::string> reports, manifests;
  CLI::App* report = app.add_subcommand("report", "summarise probe reports, verify manifests");
  report->add_option("reports", reports, "probe report JSON files");
  report->add_option("--manifest", manifests, "run manifest(s) to verify");
  report->add_option("--out-dir", common.out_dir, "write summary.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*pretrain) return cmd_pretrain(common, dataset_dir, out);
    if (*probe) return cmd_probe(common, checkpoint, dataset_dir, shuffle, out);
    if (*sweep) return cmd_sweep(common, axis, values, seeds, total_units, out, err);
    if (*gradcheck) return cmd_gradcheck(common, scope, points, inject, out);
    if (*dataset) return cmd_dataset_gen(common, out);
    if (*report) return cmd_report(common, reports, manifests, out);
  } catch (const ConfigError& e) {
    err << "config error";
    if (!e.field().empty()) err << " [" << e.field() << "]";
    err << ": " << e.what() << "\n";
    return kConfigError;
  } catch (const CompatibilityError& e) {
    err << "compatibility error: " << e.what() << "\n";
    return kCompatError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kCompatError;
  } catch (const TrainingError& e) {
    err << "numeric error at step " << e.step() << ": " << e.what() << "\n";
    return kNumericError;
  } catch (const ad::NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kFailed;
}

}  // namespace capreg::cli
