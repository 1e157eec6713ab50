// Copyright 2026 The audioret Authors.
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

#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "audioret/autograd.hpp"
#include "audioret/config.hpp"
#include "audioret/error.hpp"
#include "audioret/io.hpp"
#include "audioret/random.hpp"

namespace audioret {

using TensorMap = std::map<std::string, ad::Matrix>;

/// Named trainable tensors in registration order.
class ParamSet {
 public:
  ad::Var add(const std::string& name, ad::Matrix init) {
    require(!contains(name), "duplicate parameter '", name, "'");
    auto v = ad::parameter(std::move(init));
    entries_.emplace_back(name, v);
    return v;
  }

  bool contains(std::string_view name) const {
    for (const auto& [n, v] : entries_) {
      if (n == name) return true;
    }
    return false;
  }

  const ad::Var& at(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return e.second;
    }
    fail<NotFound>("no parameter named '", std::string(name), "'");
  }

  const std::vector<std::pair<std::string, ad::Var>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += static_cast<std::size_t>(v->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : entries_) v->grad.resize(0, 0);
  }

  TensorMap values() const {
    TensorMap out;
    for (const auto& [name, v] : entries_) out.emplace(name, v->value);
    return out;
  }

  /// Overwrites every parameter; names and shapes must match exactly.
  void assign(const TensorMap& values) {
    require(values.size() == entries_.size(), "parameter count mismatch: ", values.size(), " vs ", entries_.size());
    for (auto& [name, v] : entries_) {
      const auto it = values.find(name);
      require<NotFound>(it != values.end(), "missing parameter '", name, "'");
      require(it->second.rows() == v->value.rows() && it->second.cols() == v->value.cols(), "shape mismatch for '",
              name, "'");
      v->value = it->second;
    }
  }

 private:
  std::vector<std::pair<std::string, ad::Var>> entries_;
};

/// Symmetric uniform init scaled by 1/sqrt(fan_in).
inline ad::Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  ad::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint archive
//
//   "ARCKPT1\n"
//   u64 manifest length, manifest text (flat key=value config)
//   u32 tensor count, then per tensor: u32 name length, name, XFEAT1 matrix record

struct Archive {
  Config manifest;
  TensorMap tensors;
};

inline constexpr std::array<char, 8> kArchiveMagic{'A', 'R', 'C', 'K', 'P', 'T', '1', '\n'};

inline void save_archive(const fs::path& path, const Archive& archive) {
  io::write_atomic(
      path,
      [&](std::ostream& os) {
        os.write(kArchiveMagic.data(), kArchiveMagic.size());
        const std::string manifest = archive.manifest.to_string();
        io::put_u64(os, manifest.size());
        os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
        io::put_u32(os, static_cast<std::uint32_t>(archive.tensors.size()));
        for (const auto& [name, m] : archive.tensors) {
          io::put_u32(os, static_cast<std::uint32_t>(name.size()));
          os.write(name.data(), static_cast<std::streamsize>(name.size()));
          io::write_matrix(os, m.cast<float>());
        }
      },
      true);
}

inline Archive load_archive(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  require<IoError>(static_cast<bool>(is), "cannot open checkpoint ", path.string());
  const std::string ctx = path.string();
  std::array<char, 8> magic{};
  require<IoError>(static_cast<bool>(is.read(magic.data(), magic.size())) && magic == kArchiveMagic,
                   "not a checkpoint archive: ", ctx);
  const std::uint64_t manifest_len = io::get_u64(is, ctx);
  require<IoError>(manifest_len < (1ULL << 30), "implausible manifest size in ", ctx);
  std::string manifest(manifest_len, '\0');
  require<IoError>(static_cast<bool>(is.read(manifest.data(), static_cast<std::streamsize>(manifest_len))),
                   "truncated manifest in ", ctx);
  Archive out;
  out.manifest = Config::parse(manifest, ctx);
  const std::uint32_t count = io::get_u32(is, ctx);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = io::get_u32(is, ctx);
    require<IoError>(len < 4096, "implausible tensor name length in ", ctx);
    std::string name(len, '\0');
    require<IoError>(static_cast<bool>(is.read(name.data(), len)), "truncated tensor name in ", ctx);
    out.tensors.emplace(std::move(name), io::read_matrix(is, ctx).cast<double>());
  }
  return out;
}

}  // namespace audioret
