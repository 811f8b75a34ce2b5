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

#include "capreg/checkpoint.h"

#include <cstring>
#include <fstream>
#include <iterator>

#include "capreg/util/hash.h"

namespace capreg {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'G', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kDigestBytes = 32;

template <typename V>
void put(std::string& out, V v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Cursor {
 public:
  Cursor(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename V>
  V get() {
    V v{};
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw CompatibilityError("checkpoint: truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    return std::string(take(n), n);
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string digest_bytes(const std::string& payload) {
  Sha256 h;
  h.update(payload);
  const auto d = h.digest();
  return std::string(reinterpret_cast<const char*>(d.data()), d.size());
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ad::ParameterStore<T>& store,
                     const std::string& config_text) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, sizeof(T));
  put_str(out, config_text);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& e : store.entries()) {
    put_str(out, e.name);
    put<std::uint8_t>(out, e.trainable ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor->rank()));
    for (std::size_t d : e.tensor->shape()) put<std::uint64_t>(out, d);
    const auto data = e.tensor->data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(T));
  }
  out += digest_bytes(out);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CompatibilityError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 8 + kDigestBytes ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CompatibilityError(path.string() + ": not a checkpoint");
  }
  const std::size_t body = bytes.size() - kDigestBytes;
  Cursor c(bytes, body);
  c.take(sizeof(kMagic));
  Checkpoint ck;
  ck.version = c.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw CompatibilityError(path.string() + ": checkpoint version " + std::to_string(ck.version) +
                             ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  if (digest_bytes(bytes.substr(0, body)) != bytes.substr(body)) {
    throw CompatibilityError(path.string() + ": checksum mismatch (corrupted checkpoint)");
  }
  const auto width = c.get<std::uint32_t>();
  if (width != 4 && width != 8) throw CompatibilityError(path.string() + ": unknown dtype");
  ck.precision = width == 4 ? ad::Precision::kFloat32 : ad::Precision::kFloat64;
  ck.config_text = c.str();
  const auto count = c.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = c.str();
    a.trainable = c.get<std::uint8_t>() != 0;
    const auto rank = c.get<std::uint32_t>();
    if (rank > 8) throw CompatibilityError(path.string() + ": implausible rank");
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(c.get<std::uint64_t>());
    const std::size_t n = ad::numel(a.shape);
    const char* raw = c.take(n * width);
    a.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (width == 4) {
        float v;
        std::memcpy(&v, raw + 4 * k, 4);
        a.values[k] = v;
      } else {
        std::memcpy(&a.values[k], raw + 8 * k, 8);
      }
    }
    ck.arrays.push_back(std::move(a));
  }
  if (!c.done()) throw CompatibilityError(path.string() + ": trailing bytes");
  return ck;
}

template <typename T>
void restore(const Checkpoint& checkpoint, ad::ParameterStore<T>& store) {
  if (checkpoint.arrays.size() != store.entries().size()) {
    throw CompatibilityError("checkpoint has " + std::to_string(checkpoint.arrays.size()) +
                             " arrays, model expects " + std::to_string(store.entries().size()));
  }
  for (std::size_t i = 0; i < checkpoint.arrays.size(); ++i) {
    const NamedArray& a = checkpoint.arrays[i];
    const auto& e = store.entries()[i];
    if (a.name != e.name || a.shape != e.tensor->shape()) {
      throw CompatibilityError("checkpoint array '" + a.name + "' " + ad::to_string(a.shape) +
                               " does not match model entry '" + e.name + "' " +
                               ad::to_string(e.tensor->shape()));
    }
    auto data = e.tensor->data();
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = static_cast<T>(a.values[k]);
  }
}

template void save_checkpoint(const std::filesystem::path&, const ad::ParameterStore<float>&,
                              const std::string&);
template void save_checkpoint(const std::filesystem::path&, const ad::ParameterStore<double>&,
                              const std::string&);
template void restore(const Checkpoint&, ad::ParameterStore<float>&);
template void restore(const Checkpoint&, ad::ParameterStore<double>&);

}  // namespace capreg
