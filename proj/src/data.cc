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

#include "capreg/data.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <utility>

#include "json.hpp"

#include "capreg/util/hash.h"

namespace capreg {

static_assert(std::endian::native == std::endian::little,
              "episode containers are written in host byte order");

namespace {

constexpr char kEpisodeMagic[8] = {'C', 'R', 'G', 'E', 'P', 'I', 'S', '\0'};
constexpr std::uint32_t kEpisodeVersion = 1;
constexpr std::uint64_t kEpisodeTag = 0x65706973;  // "epis"
constexpr std::uint64_t kDatasetTag = 0x64617461;  // "data"

struct Box {
  int r0, c0, r1, c1;  // half-open
  bool overlaps(const Box& o) const {
    return r0 < o.r1 && o.r0 < r1 && c0 < o.c1 && o.c0 < c1;
  }
};

Box region(const Factor& f) {
  const int last = f.cardinality - 1;
  if (f.render == RenderKind::kBar) {
    return {f.row, f.col, f.row + f.height, f.col + f.step_col * last};
  }
  return {f.row, f.col, f.row + f.step_row * last + f.height,
          f.col + f.step_col * last + f.width};
}

std::string_view to_string(RenderKind kind) {
  return kind == RenderKind::kBar ? "bar" : "sprite";
}

RenderKind parse_render(std::string_view text) {
  if (text == "sprite") return RenderKind::kSprite;
  if (text == "bar") return RenderKind::kBar;
  throw std::invalid_argument("unknown render kind '" + std::string(text) + "'");
}

constexpr std::array<std::pair<Dynamics, std::string_view>, 5> kDynamicsNames = {{
    {Dynamics::kStickyWalk, "sticky_walk"},
    {Dynamics::kBounce, "bounce"},
    {Dynamics::kCycle, "cycle"},
    {Dynamics::kSwitch, "switch"},
    {Dynamics::kContact, "contact"},
}};

std::string_view to_string(Dynamics d) {
  for (const auto& [k, name] : kDynamicsNames) {
    if (k == d) return name;
  }
  return "?";
}

Dynamics parse_dynamics(std::string_view text) {
  for (const auto& [k, name] : kDynamicsNames) {
    if (name == text) return k;
  }
  throw std::invalid_argument("unknown dynamics '" + std::string(text) + "'");
}

nlohmann::json factor_json(const Factor& f) {
  return {{"name", f.name},
          {"category", to_string(f.category)},
          {"cardinality", f.cardinality},
          {"render", to_string(f.render)},
          {"row", f.row},
          {"col", f.col},
          {"step_row", f.step_row},
          {"step_col", f.step_col},
          {"height", f.height},
          {"width", f.width},
          {"intensity", f.intensity},
          {"dynamics", to_string(f.dynamics)},
          {"period", f.period},
          {"probability", f.probability},
          {"contact_a", f.contact_a},
          {"contact_b", f.contact_b},
          {"contact_radius", f.contact_radius}};
}

Factor factor_from_json(const nlohmann::json& j) {
  Factor f;
  f.name = j.at("name").get<std::string>();
  f.category = parse_category(j.at("category").get<std::string>());
  f.cardinality = j.at("cardinality").get<int>();
  f.render = parse_render(j.at("render").get<std::string>());
  f.row = j.at("row").get<int>();
  f.col = j.at("col").get<int>();
  f.step_row = j.at("step_row").get<int>();
  f.step_col = j.at("step_col").get<int>();
  f.height = j.at("height").get<int>();
  f.width = j.at("width").get<int>();
  f.intensity = j.at("intensity").get<std::uint8_t>();
  f.dynamics = parse_dynamics(j.at("dynamics").get<std::string>());
  f.period = j.at("period").get<int>();
  f.probability = j.at("probability").get<double>();
  f.contact_a = j.at("contact_a").get<int>();
  f.contact_b = j.at("contact_b").get<int>();
  f.contact_radius = j.at("contact_radius").get<int>();
  return f;
}

nlohmann::json world_json(const WorldConfig& w) {
  nlohmann::json factors = nlohmann::json::array();
  for (const Factor& f : w.factors) factors.push_back(factor_json(f));
  return {{"height", w.height}, {"width", w.width}, {"factors", factors}};
}

WorldConfig world_from_json(const nlohmann::json& j) {
  WorldConfig w;
  w.height = j.at("height").get<int>();
  w.width = j.at("width").get<int>();
  for (const auto& f : j.at("factors")) w.factors.push_back(factor_from_json(f));
  return w;
}

// Little-endian binary helpers.
class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open " + path.string() + " for writing");
  }
  template <typename V>
  void put(V v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void close() {
    out_.close();
    if (!out_) throw DataError("write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw DataError("cannot open " + path.string());
  }
  template <typename V>
  V get() {
    V v{};
    bytes(&v, sizeof(V));
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw DataError(path_.string() + ": truncated episode container");
    }
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 16)) throw DataError(path_.string() + ": implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

constexpr std::array<std::pair<Category, std::string_view>, kNumCategories> kCategoryNames = {{
    {Category::kAgent, "agent"},
    {Category::kSmallObject, "small_object"},
    {Category::kOther, "other"},
    {Category::kMisc, "misc"},
    {Category::kScore, "score"},
}};

Category parse_category(std::string_view text) {
  for (const auto& [c, name] : kCategoryNames) {
    if (name == text) return c;
  }
  throw std::invalid_argument("unknown category '" + std::string(text) + "'");
}

std::string_view to_string(Category category) {
  return kCategoryNames[static_cast<std::size_t>(category)].second;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

WorldConfig WorldConfig::desk() {
  WorldConfig w;
  Factor agent{.name = "agent_x", .category = Category::kAgent, .cardinality = 16,
               .row = 46, .col = 0, .step_col = 3, .height = 4, .width = 3,
               .dynamics = Dynamics::kStickyWalk, .probability = 0.75};
  Factor ball{.name = "ball_x", .category = Category::kSmallObject, .cardinality = 16,
              .row = 30, .col = 1, .step_col = 3, .height = 2, .width = 2,
              .dynamics = Dynamics::kBounce};
  Factor enemy{.name = "enemy_y", .category = Category::kOther, .cardinality = 16,
               .row = 8, .col = 54, .step_row = 3, .height = 4, .width = 4,
               .dynamics = Dynamics::kCycle, .period = 2};
  Factor mode{.name = "mode", .category = Category::kMisc, .cardinality = 4,
              .row = 0, .col = 40, .step_col = 6, .height = 4, .width = 4,
              .dynamics = Dynamics::kSwitch, .probability = 0.1};
  Factor score{.name = "score", .category = Category::kScore, .cardinality = 8,
               .render = RenderKind::kBar, .row = 0, .col = 0, .step_col = 4,
               .height = 4, .width = 0, .dynamics = Dynamics::kContact,
               .contact_a = 0, .contact_b = 1, .contact_radius = 1};
  w.factors = {agent, ball, enemy, mode, score};
  return w;
}

WorldConfig WorldConfig::paper() {
  WorldConfig w = desk();
  w.height = 160;
  w.width = 210;
  Factor& agent = w.factors[0];
  agent.row = 140, agent.step_col = 8, agent.height = 10, agent.width = 8;
  Factor& ball = w.factors[1];
  ball.row = 75, ball.col = 2, ball.step_col = 8, ball.height = 4, ball.width = 4;
  Factor& enemy = w.factors[2];
  enemy.row = 20, enemy.col = 180, enemy.step_row = 7, enemy.height = 10, enemy.width = 10;
  Factor& mode = w.factors[3];
  mode.col = 130, mode.step_col = 16, mode.height = 10, mode.width = 10;
  Factor& score = w.factors[4];
  score.step_col = 12, score.height = 10;
  return w;
}

void WorldConfig::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("world: canvas must be non-empty");
  if (factors.empty()) throw std::invalid_argument("world: no factors");
  std::vector<Box> boxes;
  std::set<std::string> names;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const Factor& f = factors[i];
    const std::string where = "world: factor '" + f.name + "'";
    if (!names.insert(f.name).second) throw std::invalid_argument(where + " defined twice");
    if (f.cardinality < 2) throw std::invalid_argument(where + " needs cardinality >= 2");
    if (f.step_row < 0 || f.step_col < 0 || f.height < 1 ||
        (f.render == RenderKind::kSprite && f.width < 1)) {
      throw std::invalid_argument(where + " has a negative step or empty sprite");
    }
    if (f.render == RenderKind::kSprite && f.step_row == 0 && f.step_col == 0) {
      throw std::invalid_argument(where + " sprite never moves");
    }
    if (f.render == RenderKind::kBar && f.step_col < 1) {
      throw std::invalid_argument(where + " bar needs step_col >= 1");
    }
    if (f.intensity == 0) throw std::invalid_argument(where + " is invisible");
    const Box b = region(f);
    if (b.r0 < 0 || b.c0 < 0 || b.r1 > height || b.c1 > width) {
      throw std::invalid_argument(where + " exceeds the " + std::to_string(height) + "x" +
                                  std::to_string(width) + " canvas (rows " +
                                  std::to_string(b.r0) + ".." + std::to_string(b.r1) +
                                  ", cols " + std::to_string(b.c0) + ".." +
                                  std::to_string(b.c1) + ")");
    }
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (b.overlaps(boxes[j])) {
        throw std::invalid_argument(where + " overlaps factor '" + factors[j].name + "'");
      }
    }
    boxes.push_back(b);
    if (f.dynamics == Dynamics::kCycle && f.period < 1) {
      throw std::invalid_argument(where + " needs period >= 1");
    }
    if (f.probability < 0.0 || f.probability > 1.0) {
      throw std::invalid_argument(where + " probability outside [0, 1]");
    }
    if (f.dynamics == Dynamics::kContact) {
      const int n = static_cast<int>(factors.size());
      if (f.contact_a < 0 || f.contact_b < 0 || f.contact_a >= n || f.contact_b >= n ||
          f.contact_a == static_cast<int>(i) || f.contact_b == static_cast<int>(i) ||
          factors[f.contact_a].dynamics == Dynamics::kContact ||
          factors[f.contact_b].dynamics == Dynamics::kContact) {
        throw std::invalid_argument(where + " has invalid contact factors");
      }
    }
  }
}

std::string WorldConfig::canonical() const { return world_json(*this).dump(); }

std::string WorldConfig::hash() const { return sha256_hex(canonical()); }

void render_frame(const WorldConfig& world, const std::vector<std::int32_t>& labels,
                  std::uint8_t* out) {
  std::fill(out, out + static_cast<std::size_t>(world.height) * world.width, 0);
  for (std::size_t i = 0; i < world.factors.size(); ++i) {
    const Factor& f = world.factors[i];
    const int v = labels[i];
    int r0 = f.row, c0 = f.col, h = f.height, w = f.width;
    if (f.render == RenderKind::kBar) {
      w = v * f.step_col;
    } else {
      r0 += v * f.step_row;
      c0 += v * f.step_col;
    }
    for (int r = r0; r < r0 + h; ++r) {
      std::fill(out + r * world.width + c0, out + r * world.width + c0 + w, f.intensity);
    }
  }
}

Episode generate_episode(const WorldConfig& world, std::uint64_t seed, int length) {
  if (length < 2) throw std::invalid_argument("generate_episode: length must be >= 2");
  world.validate();
  const std::size_t nf = world.factors.size();
  Rng rng(seed, {kEpisodeTag});
  std::vector<std::int32_t> value(nf), heading(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    value[i] = static_cast<std::int32_t>(rng.uniform_int(0, world.factors[i].cardinality - 1));
    heading[i] = static_cast<std::int32_t>(world.factors[i].dynamics == Dynamics::kBounce
                                               ? (rng.bernoulli(0.5) ? 1 : -1)
                                               : rng.uniform_int(-1, 1));
  }

  Episode ep;
  ep.seed = seed;
  ep.length = length;
  ep.height = world.height;
  ep.width = world.width;
  ep.frames.resize(static_cast<std::size_t>(length) * ep.frame_size());
  ep.labels.reserve(static_cast<std::size_t>(length) * nf);

  for (int t = 0; t < length; ++t) {
    if (t > 0) {
      for (std::size_t i = 0; i < nf; ++i) {
        const Factor& f = world.factors[i];
        const int last = f.cardinality - 1;
        switch (f.dynamics) {
          case Dynamics::kStickyWalk: {
            if (!rng.bernoulli(f.probability)) {
              heading[i] = static_cast<std::int32_t>(rng.uniform_int(-1, 1));
            }
            int next = value[i] + heading[i];
            if (next < 0) {
              next = -next;
              heading[i] = 1;
            } else if (next > last) {
              next = 2 * last - next;
              heading[i] = -1;
            }
            value[i] = next;
            break;
          }
          case Dynamics::kBounce: {
            if (value[i] + heading[i] < 0 || value[i] + heading[i] > last) heading[i] = -heading[i];
            value[i] += heading[i];
            break;
          }
          case Dynamics::kCycle:
            if (t % f.period == 0) value[i] = (value[i] + 1) % f.cardinality;
            break;
          case Dynamics::kSwitch:
            if (rng.bernoulli(f.probability)) {
              const int jump = static_cast<int>(rng.uniform_int(1, last));
              value[i] = (value[i] + jump) % f.cardinality;
            }
            break;
          case Dynamics::kContact:
            break;
        }
      }
      // Contacts are judged on the updated positions.
      for (std::size_t i = 0; i < nf; ++i) {
        const Factor& f = world.factors[i];
        if (f.dynamics != Dynamics::kContact) continue;
        if (std::abs(value[f.contact_a] - value[f.contact_b]) <= f.contact_radius) {
          value[i] = (value[i] + 1) % f.cardinality;
        }
      }
    }
    ep.labels.insert(ep.labels.end(), value.begin(), value.end());
    render_frame(world, value, ep.frames.data() + t * ep.frame_size());
  }
  return ep;
}

std::vector<std::size_t> Dataset::episodes_in(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

void DatasetConfig::validate() const {
  // 70/10/20 by index leaves the test split empty below six episodes.
  if (episodes < 6) throw std::invalid_argument("data.episodes must be >= 6 so every split is non-empty");
  if (episode_length < 2) throw std::invalid_argument("data: episode_length must be >= 2");
}

Dataset generate_dataset(const WorldConfig& world, const DatasetConfig& config,
                         std::uint64_t seed) {
  world.validate();
  config.validate();
  Dataset data;
  data.world = world;
  data.seed = seed;
  const int n = config.episodes;
  const int n_train = std::max(1, static_cast<int>(std::lround(0.7 * n)));
  const int n_val = std::max(1, static_cast<int>(std::lround(0.1 * n)));
  for (int i = 0; i < n; ++i) {
    Rng derive(seed, {kDatasetTag, static_cast<std::uint64_t>(i)});
    const std::uint64_t episode_seed = derive.engine()();
    data.episodes.push_back(generate_episode(world, episode_seed, config.episode_length));
    data.splits.push_back(i < n_train           ? Split::kTrain
                          : i < n_train + n_val ? Split::kVal
                                                : Split::kTest);
  }
  if (data.episodes_in(Split::kTest).empty()) {
    throw std::invalid_argument("data: too few episodes for a test split");
  }
  return data;
}

namespace {

std::size_t draw_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
}

}  // namespace

PairBatch sample_batch(const Dataset& data, const std::vector<std::size_t>& pool,
                       std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw DataError("sample_batch: batch size must be positive");
  std::size_t pairs = 0;
  for (std::size_t e : pool) pairs += static_cast<std::size_t>(data.episodes.at(e).length - 1);
  if (pairs < batch_size) {
    throw DataError("sample_batch: " + std::to_string(pairs) + " adjacent pairs for a batch of " +
                    std::to_string(batch_size));
  }
  PairBatch batch;
  if (pool.size() >= batch_size) {
    std::vector<std::size_t> order = pool;
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::swap(order[i], order[i + draw_index(rng, order.size() - i)]);
      const Episode& ep = data.episodes[order[i]];
      batch.anchors.push_back({order[i], static_cast<int>(draw_index(rng, ep.length - 1))});
    }
    return batch;
  }
  std::set<std::pair<std::size_t, int>> seen;
  while (batch.anchors.size() < batch_size) {
    const std::size_t e = pool[draw_index(rng, pool.size())];
    const int t = static_cast<int>(draw_index(rng, data.episodes[e].length - 1));
    if (seen.insert({e, t}).second) batch.anchors.push_back({e, t});
  }
  return batch;
}

std::vector<FrameRef> sample_frames(const Dataset& data, const std::vector<std::size_t>& pool,
                                    std::size_t count, Rng& rng) {
  if (pool.empty()) throw DataError("sample_frames: empty episode pool");
  std::vector<FrameRef> refs;
  refs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t e = pool[draw_index(rng, pool.size())];
    refs.push_back({e, static_cast<int>(draw_index(rng, data.episodes[e].length))});
  }
  return refs;
}

template <typename T>
ad::Tensor<T> gather_frames(const Dataset& data, const std::vector<FrameRef>& refs,
                            double scale, int offset) {
  const std::size_t h = data.world.height, w = data.world.width, hw = h * w;
  ad::Tensor<T> out({refs.size(), 1, h, w});
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Episode& ep = data.episodes.at(refs[i].episode);
    const int t = refs[i].t + offset;
    if (t < 0 || t >= ep.length) throw DataError("gather_frames: time index out of range");
    const std::uint8_t* src = ep.frames.data() + static_cast<std::size_t>(t) * hw;
    for (std::size_t k = 0; k < hw; ++k) out[i * hw + k] = static_cast<T>(src[k] * scale);
  }
  return out;
}

void AugmentConfig::validate() const {
  if (!(crop_min_scale > 0.0) || crop_min_scale > crop_max_scale || crop_max_scale > 1.0) {
    throw std::invalid_argument(
        "augment: crop window must satisfy 0 < crop_min_scale <= crop_max_scale <= 1 "
        "(a larger window exceeds the canvas)");
  }
  if (flip_probability < 0.0 || flip_probability > 1.0) {
    throw std::invalid_argument("augment: flip_probability outside [0, 1]");
  }
  if (noise_amplitude < 0.0) throw std::invalid_argument("augment: negative noise amplitude");
}

namespace {

template <typename T>
void augment_one(const T* src, T* dst, std::size_t h, std::size_t w,
                 const AugmentConfig& c, Rng& rng) {
  const double s = c.crop_min_scale == c.crop_max_scale
                       ? c.crop_min_scale
                       : rng.uniform(c.crop_min_scale, c.crop_max_scale);
  const std::size_t ch = std::clamp<std::size_t>(std::lround(s * h), 1, h);
  const std::size_t cw = std::clamp<std::size_t>(std::lround(s * w), 1, w);
  const std::size_t oy = ch < h ? draw_index(rng, h - ch + 1) : 0;
  const std::size_t ox = cw < w ? draw_index(rng, w - cw + 1) : 0;
  const bool flip = c.flip_probability > 0.0 && rng.bernoulli(c.flip_probability);
  const double sy = static_cast<double>(ch) / h, sx = static_cast<double>(cw) / w;
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(ch - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, ch - 1);
    const double ay = fy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(cw - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, cw - 1);
      const double ax = fx - x0;
      auto px = [&](std::size_t r, std::size_t q) {
        return static_cast<double>(src[(oy + r) * w + ox + q]);
      };
      double v = (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x1)) +
                 ay * ((1 - ax) * px(y1, x0) + ax * px(y1, x1));
      if (c.noise_amplitude > 0.0) v += rng.uniform(-c.noise_amplitude, c.noise_amplitude);
      dst[y * w + (flip ? w - 1 - x : x)] = static_cast<T>(v);
    }
  }
}

}  // namespace

template <typename T>
ViewPair<T> two_view_batch(const ad::Tensor<T>& images, const AugmentConfig& config,
                           Rng& rng) {
  config.validate();
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw ad::ShapeError("two_view_batch: expected [B,1,H,W] images, got " +
                         ad::to_string(images.shape()));
  }
  const std::size_t b = images.dim(0), h = images.dim(2), w = images.dim(3);
  ViewPair<T> out{ad::Tensor<T>(images.shape()), ad::Tensor<T>(images.shape())};
  for (std::size_t i = 0; i < b; ++i) {
    const T* src = images.storage().data() + i * h * w;
    augment_one(src, out.first.storage().data() + i * h * w, h, w, config, rng);
    augment_one(src, out.second.storage().data() + i * h * w, h, w, config, rng);
  }
  return out;
}

void write_episode(const std::filesystem::path& path, const WorldConfig& world,
                   const Episode& episode) {
  Writer out(path);
  out.bytes(kEpisodeMagic, sizeof(kEpisodeMagic));
  out.put<std::uint32_t>(kEpisodeVersion);
  out.str(world.hash());
  out.put<std::uint64_t>(episode.seed);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(episode.length));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(episode.height));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(episode.width));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(world.factors.size()));
  for (const Factor& f : world.factors) {
    out.str(f.name);
    out.put<std::uint8_t>(static_cast<std::uint8_t>(f.category));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(f.cardinality));
  }
  out.bytes(episode.frames.data(), episode.frames.size());
  out.bytes(episode.labels.data(), episode.labels.size() * sizeof(std::int32_t));
  out.close();
}

Episode read_episode(const std::filesystem::path& path, const WorldConfig& world) {
  Reader in(path);
  char magic[sizeof(kEpisodeMagic)];
  in.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kEpisodeMagic, sizeof(magic)) != 0) {
    throw DataError(path.string() + ": not an episode container");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kEpisodeVersion) {
    throw DataError(path.string() + ": unsupported episode version " + std::to_string(version));
  }
  if (in.str() != world.hash()) throw DataError(path.string() + ": world hash mismatch");
  Episode ep;
  ep.seed = in.get<std::uint64_t>();
  ep.length = static_cast<int>(in.get<std::uint32_t>());
  ep.height = static_cast<int>(in.get<std::uint32_t>());
  ep.width = static_cast<int>(in.get<std::uint32_t>());
  const auto nf = in.get<std::uint32_t>();
  if (ep.height != world.height || ep.width != world.width || nf != world.factors.size()) {
    throw DataError(path.string() + ": shape disagrees with the world config");
  }
  for (const Factor& f : world.factors) {
    const std::string name = in.str();
    const auto category = in.get<std::uint8_t>();
    const auto card = in.get<std::uint32_t>();
    if (name != f.name || category != static_cast<std::uint8_t>(f.category) ||
        card != static_cast<std::uint32_t>(f.cardinality)) {
      throw DataError(path.string() + ": factor table disagrees at '" + name + "'");
    }
  }
  ep.frames.resize(static_cast<std::size_t>(ep.length) * ep.frame_size());
  in.bytes(ep.frames.data(), ep.frames.size());
  ep.labels.resize(static_cast<std::size_t>(ep.length) * nf);
  in.bytes(ep.labels.data(), ep.labels.size() * sizeof(std::int32_t));
  if (!in.at_end()) throw DataError(path.string() + ": trailing bytes");
  for (std::size_t i = 0; i < ep.labels.size(); ++i) {
    if (ep.labels[i] < 0 || ep.labels[i] >= world.factors[i % nf].cardinality) {
      throw DataError(path.string() + ": label out of range");
    }
  }
  return ep;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data,
                   const DatasetConfig& config) {
  std::filesystem::create_directories(dir / "episodes");
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < data.episodes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "episodes/episode_%04zu.bin", i);
    write_episode(dir / name, data.world, data.episodes[i]);
    index.push_back({{"file", name},
                     {"seed", data.episodes[i].seed},
                     {"split", to_string(data.splits[i])},
                     {"sha256", sha256_file(dir / name)}});
  }
  const nlohmann::json manifest = {{"format", "capreg-dataset"},
                                   {"version", 1},
                                   {"seed", data.seed},
                                   {"episodes", config.episodes},
                                   {"episode_length", config.episode_length},
                                   {"world_hash", data.world.hash()},
                                   {"world", world_json(data.world)},
                                   {"files", index}};
  std::ofstream(dir / "dataset.json") << manifest.dump(2) << "\n";

  nlohmann::json factors = nlohmann::json::array();
  for (const Factor& f : data.world.factors) {
    factors.push_back({{"name", f.name},
                       {"category", to_string(f.category)},
                       {"cardinality", f.cardinality},
                       {"render", to_string(f.render)},
                       {"dynamics", to_string(f.dynamics)}});
  }
  std::ofstream(dir / "factors.json")
      << nlohmann::json{{"world_hash", data.world.hash()},
                        {"canvas", {data.world.height, data.world.width}},
                        {"factors", factors}}
             .dump(2)
      << "\n";
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw DataError("no dataset.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset.json: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "capreg-dataset" || manifest.value("version", 0) != 1) {
    throw DataError("dataset.json: unsupported format or version");
  }
  Dataset data;
  data.world = world_from_json(manifest.at("world"));
  data.world.validate();
  if (data.world.hash() != manifest.at("world_hash").get<std::string>()) {
    throw DataError("dataset.json: world hash does not match the world description");
  }
  data.seed = manifest.at("seed").get<std::uint64_t>();
  for (const auto& entry : manifest.at("files")) {
    const std::filesystem::path file = dir / entry.at("file").get<std::string>();
    if (sha256_file(file) != entry.at("sha256").get<std::string>()) {
      throw DataError(file.string() + ": checksum mismatch");
    }
    data.episodes.push_back(read_episode(file, data.world));
    const std::string split = entry.at("split").get<std::string>();
    data.splits.push_back(split == "train" ? Split::kTrain
                          : split == "val" ? Split::kVal
                                           : Split::kTest);
  }
  return data;
}

template ad::Tensor<float> gather_frames(const Dataset&, const std::vector<FrameRef>&, double, int);
template ad::Tensor<double> gather_frames(const Dataset&, const std::vector<FrameRef>&, double, int);
template ViewPair<float> two_view_batch(const ad::Tensor<float>&, const AugmentConfig&, Rng&);
template ViewPair<double> two_view_batch(const ad::Tensor<double>&, const AugmentConfig&, Rng&);

}  // namespace capreg
