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

// The capreg command line: pretrain, probe, sweep, gradcheck, dataset-gen,
// report.

#ifndef CAPREG_CLI_H_
#define CAPREG_CLI_H_

#include <ostream>

namespace capreg::cli {

// Exit statuses. Failure classes are disjoint.
inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;         // checks failed, sub-runs failed, I/O
inline constexpr int kConfigError = 2;    // malformed config or arguments
inline constexpr int kNumericError = 3;   // non-finite loss or gradient
inline constexpr int kCompatError = 4;    // unreadable or mismatched artifacts

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capreg::cli

#endif  // CAPREG_CLI_H_
