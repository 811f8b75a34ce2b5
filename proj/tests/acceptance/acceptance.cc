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


// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   acceptance [work_dir] [--only=N[,N...]]

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "capreg/autodiff/params.h"
#include "capreg/autodiff/svd.h"
#include "capreg/cli.h"
#include "capreg/experiment.h"
#include "capreg/gradcheck.h"
#include "capreg/losses.h"
#include "capreg/models.h"
#include "capreg/train.h"
#include "capreg/util/rng.h"

namespace capreg {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using Td = ad::Tensor<double>;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

struct Stats {
  double mean = 0, se = 0;
};

// Mean and standard error of the mean (sample sd / sqrt(n)).
Stats stats(const std::vector<double>& x) {
  Stats s;
  s.mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double ss = 0;
  for (double v : x) ss += (v - s.mean) * (v - s.mean);
  s.se = x.size() > 1 ? std::sqrt(ss / (x.size() - 1) / x.size()) : 0.0;
  return s;
}

// Runs jobs on up to `workers` threads.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < std::max(1u, workers); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

// 1. Finite-difference gradient suite.
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  GradcheckOptions opts;
  opts.points = 24;
  const auto rows = run_gradcheck("all", opts);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name, failed;
  std::set<std::string> groups;
  for (const auto& r : rows) {
    groups.insert(r.group);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    if (!r.passed || r.points < 20) failed += " " + r.name;
  }
  const bool ok = failed.empty() && secs < 120.0 && groups.size() == 4;
  return {ok, format("%zu cases, worst %.2e (%s), %.1f s%s", rows.size(), worst, worst_name.c_str(),
                     secs, failed.empty() ? "" : ("; failing:" + failed).c_str())};
}

// 2. Closed-form loss values.
Outcome loss_goldens() {
  ad::Tape<double> tape;
  const double b = 64;
  const double nce = info_nce(tape.constant(Td({64, 64}, 0.37))).item();
  Td onehot({1, 4}, 0.0);
  onehot[2] = 1.0;
  const double ua = ua_discrepancy(tape.constant(onehot)).item();

  // Orthonormal centroids: D = 10, B = 6, each repeated over 3 heads.
  Rng rng(5);
  Eigen::MatrixXd g(10, 6);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 6; ++j) g(i, j) = rng.normal();
  const Eigen::MatrixXd q =
      Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(10, 6);
  Td heads({6, 3, 10});
  for (int s = 0; s < 6; ++s)
    for (int n = 0; n < 3; ++n)
      for (int d = 0; d < 10; ++d) heads[(s * 3 + n) * 10 + d] = q(d, s);
  const double mmcr = mmcr_loss(tape.constant(heads)).item();

  Td z({32, 5});
  for (double& v : z.storage()) v = rng.normal();
  const double bt = barlow_twins(tape.constant(z), tape.constant(z), 0.0).item();

  const double e1 = std::abs(nce - std::log(b)), e2 = std::abs(ua - 0.75),
               e3 = std::abs(mmcr + 6.0), e4 = std::abs(bt);
  const bool ok = e1 <= 1e-9 && e2 <= 1e-9 && e3 <= 1e-8 && e4 <= 1e-8;
  return {ok, format("info_nce err %.1e, ua err %.1e, mmcr err %.1e, barlow diag %.1e", e1, e2, e3, e4)};
}

// 3. Nuclear-norm properties on random matrices.
Outcome nuclear_norm_properties() {
  const auto t0 = Clock::now();
  Rng rng(3);
  double worst_recon = 0, worst_homog = 0, worst_sandwich = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto rows = trial == 0 ? 64 : static_cast<std::size_t>(rng.uniform_int(1, 64));
    const auto cols = trial == 0 ? 128 : static_cast<std::size_t>(rng.uniform_int(1, 128));
    Td a({rows, cols});
    for (double& v : a.storage()) v = rng.normal();
    const double c = rng.uniform(-3.0, 3.0);
    Td ca = a;
    for (double& v : ca.storage()) v *= c;

    ad::Tape<double> tape;
    const double n = ad::nuclear_norm(tape.constant(a)).item();
    const double nc = ad::nuclear_norm(tape.constant(ca)).item();
    worst_homog = std::max(worst_homog, std::abs(nc - std::abs(c) * n) / std::max(1.0, n));

    const Eigen::MatrixXd m = ad::to_matrix(a);
    const double fro = m.norm();
    const double k = static_cast<double>(std::min(rows, cols));
    // ||A||_F <= ||A||_* <= sqrt(rank) ||A||_F
    const double below = fro - n, above = n - std::sqrt(k) * fro;
    worst_sandwich = std::max({worst_sandwich, below, above});

    const ad::SvdResult s = ad::svd(m);
    const Eigen::MatrixXd back = s.u * s.singular_values.asDiagonal() * s.v.transpose();
    worst_recon = std::max(worst_recon, (back - m).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_recon <= 1e-10 && worst_homog <= 1e-10 && worst_sandwich <= 1e-10 && secs < 30;
  return {ok, format("reconstruction %.1e, homogeneity %.1e, sandwich slack %.1e, %.1f s", worst_recon,
                     worst_homog, worst_sandwich, secs)};
}

// 4. log B - L bound for a bilinear critic: a copy task and independent pairs.
// Plain gradient descent: on independent pairs the gradient is pure noise of
// size O(1/sqrt(B)), and a scale-free optimizer would inflate it into
// unit-size steps that drive the held-out bound below zero.
struct BoundRun {
  double initial = 0, final = 0;
};

BoundRun train_bilinear_critic(bool copy, std::uint64_t seed) {
  constexpr std::size_t kBatch = 64, kDim = 16;
  Rng rng(seed);
  ad::ParameterStore<double> store;
  auto w = store.add("critic", Td({kDim, kDim}));
  constexpr double kLr = 1e-2;
  auto draw = [&](Td& x, Td& y) {
    x = Td({kBatch, kDim});
    for (double& v : x.storage()) v = rng.normal();
    if (copy) {
      y = x;
    } else {
      y = Td({kBatch, kDim});
      for (double& v : y.storage()) v = rng.normal();
    }
  };
  auto loss = [&](ad::Tape<double>& tape, const Td& x, const Td& y) {
    return info_nce(score_pairs(ad::matmul(tape.constant(x), tape.leaf(w)), tape.constant(y)));
  };
  auto held_out = [&] {
    Td x, y;
    draw(x, y);
    ad::Tape<double> tape;
    return estimate_mi_lower_bound(loss(tape, x, y).item(), kBatch);
  };
  BoundRun r;
  r.initial = held_out();
  for (int step = 0; step < 500; ++step) {
    Td x, y;
    draw(x, y);
    ad::Tape<double> tape;
    store.zero_grad();
    tape.backward(loss(tape, x, y));
    const auto g = w->grad();
    for (std::size_t i = 0; i < g.size(); ++i) w->storage()[i] -= kLr * g[i];
  }
  r.final = held_out();
  return r;
}

Outcome mi_bound() {
  const auto t0 = Clock::now();
  const double target = 0.9 * std::log(64.0);
  double worst_copy = 1e9, worst_start = 0;
  std::vector<double> independent;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const BoundRun c = train_bilinear_critic(true, seed);
    worst_copy = std::min(worst_copy, c.final);
    worst_start = std::max(worst_start, std::abs(c.initial));
    independent.push_back(train_bilinear_critic(false, 100 + seed).final);
  }
  const Stats ind = stats(independent);
  const double secs = seconds_since(t0);
  const bool ok = worst_start < 1e-6 && worst_copy >= target &&
                  std::abs(ind.mean) <= 3 * ind.se && secs < 120;
  return {ok, format("copy: start %.1e, min final %.3f (target %.3f); independent: %.4f +- %.4f SE; %.1f s",
                     worst_start, worst_copy, target, ind.mean, ind.se, secs)};
}

// 5 and 6 share the trained desk runs.
struct DeskResults {
  std::vector<double> trained_low, trained_high, random_init, shuffled;
  double worst_run_seconds = 0;
  double total_seconds = 0;
  unsigned workers = 1;
  std::string error;
};

RunConfig desk_config(double epsilon, std::uint64_t seed) {
  RunConfig c = parse_run_config("[train]\nmode = dim-c\n");
  c.weights.epsilon = epsilon;
  c.seed = seed;
  return c;
}

DeskResults run_desk(const fs::path& work) {
  DeskResults out;
  constexpr int kSeeds = 5;
  const double eps[2] = {0.0005, 0.1};
  out.trained_low.resize(kSeeds);
  out.trained_high.resize(kSeeds);
  out.random_init.resize(kSeeds);
  out.shuffled.resize(kSeeds);
  out.workers = std::clamp(std::thread::hardware_concurrency(), 1u, 4u);
  const Dataset data = dataset_for(desk_config(eps[0], 0));
  std::mutex mu;
  const auto t0 = Clock::now();
  // Jobs 0..9 train (epsilon, seed); 10..14 probe random-init encoders.
  parallel_for(3 * kSeeds, out.workers, [&](std::size_t job) {
    try {
      const auto start = Clock::now();
      if (job < 2 * kSeeds) {
        const int e = static_cast<int>(job / kSeeds);
        const std::uint64_t seed = job % kSeeds;
        const RunConfig cfg = desk_config(eps[e], seed);
        const fs::path dir = work / format("desk/eps=%g/seed=%llu", eps[e], (unsigned long long)seed);
        run_pretrain(cfg, data, dir);
        const ProbeReport r = probe_checkpoint(dir / kCheckpointFile, data);
        double shuffled = 0;
        if (e == 0) {
          ProbeConfig p = cfg.probe;
          p.shuffle_labels = true;
          shuffled = probe_checkpoint(dir / kCheckpointFile, data, &p).mean_f1;
        }
        const double secs = seconds_since(start);
        std::lock_guard<std::mutex> lock(mu);
        (e == 0 ? out.trained_low : out.trained_high)[seed] = r.mean_f1;
        if (e == 0) out.shuffled[seed] = shuffled;
        out.worst_run_seconds = std::max(out.worst_run_seconds, secs);
        std::cerr << format("  dim-c eps=%g seed=%llu: mean_f1 %.4f (%.0f s)\n", eps[e],
                            (unsigned long long)seed, r.mean_f1, secs);
      } else {
        const std::uint64_t seed = job - 2 * kSeeds;
        RunConfig cfg = desk_config(eps[0], seed);
        cfg.steps = 0;
        const double f1 = pretrain_and_probe(cfg, data).mean_f1;
        std::lock_guard<std::mutex> lock(mu);
        out.random_init[seed] = f1;
        std::cerr << format("  random-init seed=%llu: mean_f1 %.4f\n", (unsigned long long)seed, f1);
      }
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      out.error += std::string(e.what()) + "; ";
    }
  });
  out.total_seconds = seconds_since(t0);
  return out;
}

// Trained beats baseline by at least 3 standard errors of the difference.
bool beats(const Stats& a, const Stats& b, double* margin_in_se) {
  const double se = std::sqrt(a.se * a.se + b.se * b.se);
  *margin_in_se = se > 0 ? (a.mean - b.mean) / se : INFINITY;
  return a.mean - b.mean >= 3 * se && a.mean > b.mean;
}

Outcome protocol_end_to_end(const DeskResults& d) {
  if (!d.error.empty()) return {false, "run error: " + d.error};
  const Stats t = stats(d.trained_low), r = stats(d.random_init), s = stats(d.shuffled);
  double mr = 0, ms = 0;
  const bool ok = beats(t, r, &mr) && beats(t, s, &ms) && d.worst_run_seconds < 15 * 60;
  return {ok, format("trained %.4f +- %.4f, random-init %.4f +- %.4f (%.1f SE), shuffled %.4f +- %.4f "
                     "(%.1f SE); slowest run %.0f s, all runs %.0f s on %u worker(s)",
                     t.mean, t.se, r.mean, r.se, mr, s.mean, s.se, ms, d.worst_run_seconds,
                     d.total_seconds, d.workers)};
}

Outcome epsilon_trend(const DeskResults& d) {
  if (!d.error.empty()) return {false, "run error: " + d.error};
  const Stats lo = stats(d.trained_low), hi = stats(d.trained_high);
  return {hi.mean <= lo.mean, format("mean F1 eps=0.1 %.4f +- %.4f vs eps=0.0005 %.4f +- %.4f", hi.mean,
                                     hi.se, lo.mean, lo.se)};
}

// 7. Degenerate configurations.
Outcome mode_equivalences() {
  RunConfig with = parse_run_config(
      "[train]\nmode = dim-c\nepsilon = 0\n[atlas]\nn_heads = 1\n");
  RunConfig plain = with;
  plain.mode = Mode::kDim;
  const Dataset data = dataset_for(with);
  Model<float> a(with), b(plain);
  const std::string ta = trace_csv(pretrain(with, data, a));
  const std::string tb = trace_csv(pretrain(plain, data, b));

  RunConfig uac = parse_run_config("[train]\nmode = dim-uac\n[atlas]\nzero_init_membership = true\n");
  Model<float> m(uac);
  int nonzero = 0, rows = 0;
  pretrain(uac, data, m, [&](const TraceRow& r) {
    ++rows;
    if (r.ua != 0.0) ++nonzero;
  });
  const bool ok = ta == tb && nonzero == 0 && rows == uac.steps;
  return {ok, format("eps=0,N=1 trace %s plain baseline (%d steps); uniform dim-uac: %d of %d steps with a "
                     "non-zero UA term",
                     ta == tb ? "identical to" : "differs from", with.steps, nonzero, rows)};
}

// 8. Every command twice with the same config and seed.
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "capreg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  return code;
}

Outcome determinism(const fs::path& work) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<std::string> mismatches;
  int compared = 0;
  auto same = [&](const fs::path& a, const fs::path& b) {
    ++compared;
    if (!fs::exists(a) || slurp(a) != slurp(b)) mismatches.push_back(a.lexically_relative(root).string());
  };
  bool commands_ok = true;
  auto twice = [&](std::vector<std::string> args, const std::string& tag, std::string* out_a = nullptr,
                   std::string* out_b = nullptr) {
    for (const char* run : {"a", "b"}) {
      std::vector<std::string> full = args;
      full.push_back("--out-dir");
      full.push_back((root / tag / run).string());
      const int code = run_cli(full, std::string(run) == "a" ? out_a : out_b);
      if (code != 0) commands_ok = false;
    }
  };

  for (const char* mode : {"dim-c", "dim-uac", "simclr-c", "bt-c"}) {
    for (const char* precision : {"f32", "f64"}) {
      const fs::path cfg = root / (std::string(mode) + ".ini");
      std::ofstream(cfg) << "[train]\nmode = " << mode
                         << "\nbatch_size = 16\nsteps = 25\nseed = 11\n[probe]\nsteps = 100\n";
      const std::string tag = std::string(mode) + "-" + precision;
      twice({"pretrain", "--config", cfg.string(), "--precision", precision}, tag);
      same(root / tag / "a" / kTraceFile, root / tag / "b" / kTraceFile);
      same(root / tag / "a" / kCheckpointFile, root / tag / "b" / kCheckpointFile);
      same(root / tag / "a" / kConfigFile, root / tag / "b" / kConfigFile);
      std::string pa, pb;
      for (const char* run : {"a", "b"}) {
        const int code = run_cli({"probe", "--checkpoint", (root / tag / run / kCheckpointFile).string()},
                                 std::string(run) == "a" ? &pa : &pb);
        if (code != 0) commands_ok = false;
      }
      same(root / tag / "a" / kReportFile, root / tag / "b" / kReportFile);
      if (pa != pb) mismatches.push_back(tag + " probe stdout");
    }
  }

  const fs::path sweep_cfg = root / "sweep.ini";
  std::ofstream(sweep_cfg) << "[train]\nmode = dim-c\nbatch_size = 16\nsteps = 10\n"
                              "[data]\nepisodes = 12\nepisode_length = 30\n[probe]\nsteps = 50\n";
  const std::vector<std::string> sweep = {"sweep", "--config", sweep_cfg.string(), "--axis", "epsilon",
                                          "--values", "0.0005,0.1", "--seeds", "0,1"};
  auto with_workers = [](std::vector<std::string> v, const char* w) {
    v.push_back("--workers");
    v.push_back(w);
    return v;
  };
  // Worker count must not change results either.
  for (const char* run : {"a", "b"}) {
    std::vector<std::string> full = with_workers(sweep, std::string(run) == "a" ? "1" : "3");
    full.push_back("--out-dir");
    full.push_back((root / "sweep" / run).string());
    if (run_cli(full) != 0) commands_ok = false;
  }
  same(root / "sweep/a/sweep.csv", root / "sweep/b/sweep.csv");
  same(root / "sweep/a/sweep_means.csv", root / "sweep/b/sweep_means.csv");
  same(root / "sweep/a/epsilon=0.1/seed=1/report.json", root / "sweep/b/epsilon=0.1/seed=1/report.json");
  same(root / "sweep/a/epsilon=0.1/seed=1/trace.csv", root / "sweep/b/epsilon=0.1/seed=1/trace.csv");

  twice({"dataset-gen", "--config", sweep_cfg.string(), "--seed", "4"}, "dataset");
  same(root / "dataset/a/dataset.json", root / "dataset/b/dataset.json");
  same(root / "dataset/a/episodes/episode_0003.bin", root / "dataset/b/episodes/episode_0003.bin");

  std::string ga, gb;
  for (const char* run : {"a", "b"}) {
    if (run_cli({"gradcheck", "--scope", "all", "--seed", "2"}, std::string(run) == "a" ? &ga : &gb) != 0)
      commands_ok = false;
  }
  ++compared;
  if (ga != gb) mismatches.push_back("gradcheck table");

  twice({"report", (root / "dim-c-f32/a" / kReportFile).string(), (root / "bt-c-f64/a" / kReportFile).string()},
        "report");
  same(root / "report/a/summary.csv", root / "report/b/summary.csv");

  std::string list;
  for (const auto& m : mismatches) list += " " + m;
  const bool ok = commands_ok && mismatches.empty();
  return {ok, format("%d artifact pairs compared, %zu mismatched%s%s", compared, mismatches.size(),
                     list.c_str(), commands_ok ? "" : "; a command exited non-zero")};
}

}  // namespace
}  // namespace capreg

int main(int argc, char** argv) {
  using namespace capreg;
  fs::path work = fs::temp_directory_path() / "capreg_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.rfind("--only=", 0) == 0) {
      std::stringstream ss(a.substr(7));
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else {
      work = a;
    }
  }
  fs::create_directories(work);
  auto wanted = [&](int n) { return only.empty() || only.count(n); };

  int failures = 0;
  auto report = [&](int n, const char* name, const Outcome& o) {
    std::cout << format("criterion %d %-22s %s  %s", n, name, o.passed ? "PASS" : "FAIL", o.detail.c_str())
              << std::endl;
    if (!o.passed) ++failures;
  };
  auto guarded = [](const std::function<Outcome()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  if (wanted(1)) report(1, "gradient-suite", guarded(gradient_suite));
  if (wanted(2)) report(2, "loss-goldens", guarded(loss_goldens));
  if (wanted(3)) report(3, "nuclear-norm", guarded(nuclear_norm_properties));
  if (wanted(4)) report(4, "mi-bound", guarded(mi_bound));
  if (wanted(5) || wanted(6)) {
    const DeskResults desk = run_desk(work);
    if (wanted(5)) report(5, "protocol-end-to-end", guarded([&] { return protocol_end_to_end(desk); }));
    if (wanted(6)) report(6, "epsilon-trend", guarded([&] { return epsilon_trend(desk); }));
  }
  if (wanted(7)) report(7, "mode-equivalences", guarded(mode_equivalences));
  if (wanted(8)) report(8, "determinism", guarded([&] { return determinism(work); }));
  std::cout << (failures ? format("%d criterion/criteria failed", failures) : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
