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

// Synthetic gridworld with labelled state factors, episode storage and the
// batch samplers used for pretraining.

#ifndef CAPREG_DATA_H_
#define CAPREG_DATA_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "capreg/autodiff/tensor.h"
#include "capreg/util/rng.h"

namespace capreg {

enum class Category {
  kAgent,        // agent localization
  kSmallObject,  // small object localization
  kOther,        // other localization
  kMisc,         // miscellaneous
  kScore,        // score / clock / lives / display
};
inline constexpr std::size_t kNumCategories = 5;

Category parse_category(std::string_view text);
std::string_view to_string(Category category);

// How a factor value is drawn. A sprite is a filled box whose origin moves
// by (step_row, step_col) per unit of value; a bar is a box at a fixed
// origin whose width is value * step_col.
enum class RenderKind { kSprite, kBar };

// How a factor evolves from one frame to the next.
enum class Dynamics {
  kStickyWalk,  // random policy over {-1, 0, +1}, sticky, reflecting borders
  kBounce,      // +-1 per step, reverses at the borders
  kCycle,       // +1 every `period` steps, wraps around
  kSwitch,      // jumps to a random other value with probability p
  kContact,     // +1 (mod cardinality) when two other factors are close
};

struct Factor {
  std::string name;
  Category category = Category::kMisc;
  int cardinality = 2;
  RenderKind render = RenderKind::kSprite;
  int row = 0, col = 0;            // origin
  int step_row = 0, step_col = 0;  // displacement per value unit
  int height = 1, width = 1;       // sprite size (bar height for bars)
  std::uint8_t intensity = 255;
  Dynamics dynamics = Dynamics::kSwitch;
  int period = 1;           // kCycle
  double probability = 0;   // kSwitch; stickiness for kStickyWalk
  int contact_a = -1, contact_b = -1;  // factor indices for kContact
  int contact_radius = 1;
};

struct WorldConfig {
  int height = 64;
  int width = 64;
  std::vector<Factor> factors;

  // 64x64 canvas; agent_x, ball_x, enemy_y, mode, score.
  static WorldConfig desk();
  // 160x210 canvas with the same factors, for the paper encoder profile.
  static WorldConfig paper();

  // Rejects sprites leaving the canvas, overlapping factor regions and
  // cardinalities below 2.
  void validate() const;
  // SHA-256 of the canonical description.
  std::string hash() const;
  std::string canonical() const;
};

struct Episode {
  std::uint64_t seed = 0;
  int length = 0;
  int height = 0, width = 0;
  std::vector<std::uint8_t> frames;  // [T, 1, H, W]
  std::vector<std::int32_t> labels;  // [T, F]
  std::size_t num_factors() const { return length ? labels.size() / length : 0; }
  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::int32_t label(int t, std::size_t f) const { return labels[t * num_factors() + f]; }
};

// Renders one frame for a label tuple into `out` (H*W bytes).
void render_frame(const WorldConfig& world, const std::vector<std::int32_t>& labels,
                  std::uint8_t* out);

// Throws std::invalid_argument for length < 2 or an invalid world.
Episode generate_episode(const WorldConfig& world, std::uint64_t seed, int length);

enum class Split { kTrain, kVal, kTest };
std::string_view to_string(Split split);

struct Dataset {
  WorldConfig world;
  std::uint64_t seed = 0;
  std::vector<Episode> episodes;
  std::vector<Split> splits;  // one per episode

  std::vector<std::size_t> episodes_in(Split split) const;
};

struct DatasetConfig {
  int episodes = 40;
  int episode_length = 100;
  void validate() const;
};

// Episode seeds are derived from (seed, index); episodes are assigned to
// train/val/test 70/10/20 in index order.
Dataset generate_dataset(const WorldConfig& world, const DatasetConfig& config,
                         std::uint64_t seed);

struct FrameRef {
  std::size_t episode = 0;
  int t = 0;
};

struct PairBatch {
  std::vector<FrameRef> anchors;  // x_t; x_t+1 is the same ref at t + 1
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// B temporally adjacent pairs from `pool` (episode indices). Pairs come from
// distinct episodes whenever the pool has at least B episodes; otherwise
// distinct (episode, t) pairs. Throws DataError if fewer than B pairs exist.
PairBatch sample_batch(const Dataset& data, const std::vector<std::size_t>& pool,
                       std::size_t batch_size, Rng& rng);

// [refs, 1, H, W] frames, scaled by `scale` (1/255 for unit range). `offset`
// shifts every ref in time.
template <typename T>
ad::Tensor<T> gather_frames(const Dataset& data, const std::vector<FrameRef>& refs,
                            double scale, int offset = 0);

struct AugmentConfig {
  double crop_min_scale = 0.8;  // side of the square crop relative to canvas
  double crop_max_scale = 1.0;
  double flip_probability = 0.5;
  double noise_amplitude = 0.05;  // uniform noise in scaled pixel units

  static AugmentConfig identity() { return {1.0, 1.0, 0.0, 0.0}; }
  void validate() const;
};

template <typename T>
struct ViewPair {
  ad::Tensor<T> first;   // [B, 1, H, W]
  ad::Tensor<T> second;
};

// Two independently augmented views of each image in `images` [B,1,H,W].
template <typename T>
ViewPair<T> two_view_batch(const ad::Tensor<T>& images, const AugmentConfig& config,
                           Rng& rng);

// Random single frames from `pool`.
std::vector<FrameRef> sample_frames(const Dataset& data, const std::vector<std::size_t>& pool,
                                    std::size_t count, Rng& rng);

// Binary episode container and dataset directory.
void write_episode(const std::filesystem::path& path, const WorldConfig& world,
                   const Episode& episode);
Episode read_episode(const std::filesystem::path& path, const WorldConfig& world);

// Writes episodes/*.bin, dataset.json (index) and factors.json (sidecar).
void write_dataset(const std::filesystem::path& dir, const Dataset& data,
                   const DatasetConfig& config);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace capreg

#endif  // CAPREG_DATA_H_
