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


#include <gtest/gtest.h>

#include <chrono>
#include <set>
#include <string>

#include "capreg/gradcheck.h"

namespace capreg {
namespace {

std::set<std::string> recorded_kinds(const GradCase& c) {
  Rng rng(1);
  GradProblem p = c.make(rng);
  ad::Tape<double> tape;
  p.loss(tape);
  std::set<std::string> kinds;
  for (const auto& r : tape.records()) kinds.insert(std::string(r.kind));
  return kinds;
}

std::string base_name(std::string name) {
  for (const char* suffix : {"_train", "_eval"}) {
    const std::string s = suffix;
    if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0)
      return name.substr(0, name.size() - s.size());
  }
  return name;
}

TEST(Gradcheck, RegistryCoversEveryRecordedOp) {
  std::set<std::string> op_cases, seen;
  std::set<std::string> names;
  for (const GradCase& c : gradcheck_registry()) {
    EXPECT_TRUE(names.insert(c.name).second) << "duplicate case " << c.name;
    if (c.group == "op") op_cases.insert(base_name(c.name));
    for (const std::string& k : recorded_kinds(c)) seen.insert(k);
  }
  seen.erase("leaf");
  seen.erase("constant");
  for (const std::string& k : seen) EXPECT_TRUE(op_cases.count(k)) << "no gradcheck case for op " << k;
  for (const std::string& op : op_cases) {
    if (op == "linear") continue;  // composed from matmul and add
    EXPECT_TRUE(seen.count(op)) << "case " << op << " records no op of that name";
  }
}

TEST(Gradcheck, EveryGroupIsPopulated) {
  std::set<std::string> groups, losses;
  for (const GradCase& c : gradcheck_registry()) {
    groups.insert(c.group);
    if (c.group == "loss") losses.insert(c.name);
  }
  EXPECT_EQ(groups, (std::set<std::string>{"op", "loss", "composite", "model"}));
  for (const char* l : {"info_nce", "global_local_per_head", "local_local", "ua_discrepancy",
                        "mmcr_normalized", "nt_xent", "barlow_twins"})
    EXPECT_TRUE(losses.count(l)) << l;
}

TEST(Gradcheck, AllCasesPassWithinTwoMinutes) {
  GradcheckOptions opts;
  opts.points = 20;
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradcheck("all", opts);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(results.size(), gradcheck_registry().size());
  for (const GradcheckResult& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " error " << r.max_rel_error;
    EXPECT_LE(r.max_rel_error, 1e-4) << r.name;
    EXPECT_GE(r.points, 20) << r.name;
  }
  EXPECT_LT(seconds, 120.0);
}

TEST(Gradcheck, NuclearNormScopeGivesOneRow) {
  const auto rows = run_gradcheck("nuclear_norm", GradcheckOptions{});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].name, "nuclear_norm");
  EXPECT_TRUE(rows[0].passed);
  EXPECT_LE(rows[0].max_rel_error, 1e-4);
}

TEST(Gradcheck, InjectedFaultIsCaught) {
  GradcheckOptions opts;
  opts.inject_fault = true;
  for (const char* name : {"matmul", "nuclear_norm", "info_nce", "composite_dim_c"}) {
    const auto rows = run_gradcheck(name, opts);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_FALSE(rows[0].passed) << name;
    EXPECT_GT(rows[0].max_rel_error, 1e-4) << name;
  }
}

TEST(Gradcheck, UnknownScopeAndDeterminism) {
  EXPECT_THROW(run_gradcheck("warp_drive", GradcheckOptions{}), UnknownCaseError);
  GradcheckOptions opts;
  opts.seed = 9;
  EXPECT_EQ(run_gradcheck("softmax", opts)[0].max_rel_error,
            run_gradcheck("softmax", opts)[0].max_rel_error);
  EXPECT_FALSE(gradcheck_table(run_gradcheck("relu", opts)).empty());
}

}  // namespace
}  // namespace capreg
