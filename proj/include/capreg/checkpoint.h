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

// Parameter checkpoints.
//
// Layout (little endian):
//   "CRGCKPT\0" | u32 version | u32 dtype bytes (4 or 8)
//   | u32 len, canonical config text
//   | u32 count | per entry: u32 len, name | u8 trainable | u32 rank
//                            | u64 extents[rank] | raw values
//   | 32-byte SHA-256 of everything before it

#ifndef CAPREG_CHECKPOINT_H_
#define CAPREG_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "capreg/autodiff/params.h"
#include "capreg/autodiff/tensor.h"

namespace capreg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Unreadable, corrupted or version-incompatible checkpoint.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  bool trainable = true;
  ad::Shape shape;
  std::vector<double> values;  // widened; exact for both precisions
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ad::Precision precision = ad::Precision::kFloat32;
  std::string config_text;
  std::vector<NamedArray> arrays;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ad::ParameterStore<T>& store,
                     const std::string& config_text);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies the arrays into an identically laid out store.
template <typename T>
void restore(const Checkpoint& checkpoint, ad::ParameterStore<T>& store);

}  // namespace capreg

#endif  // CAPREG_CHECKPOINT_H_
