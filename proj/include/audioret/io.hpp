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
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "audioret/error.hpp"

namespace audioret {

namespace fs = std::filesystem;

/// Time-major feature matrix as stored on disk (T rows of D floats).
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace io {

inline constexpr std::array<char, 6> kMatrixMagic{'X', 'F', 'E', 'A', 'T', '1'};

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t get_u32(std::istream& is, const std::string& context) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) fail<IoError>("truncated record in ", context);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const std::string& context) {
  const std::uint64_t lo = get_u32(is, context);
  const std::uint64_t hi = get_u32(is, context);
  return lo | (hi << 32);
}

/// Writes one matrix record: "XFEAT1", u32 T, u32 D, T*D little-endian float32.
inline void write_matrix(std::ostream& os, const FeatureMatrix& m) {
  os.write(kMatrixMagic.data(), kMatrixMagic.size());
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_u32(os, std::bit_cast<std::uint32_t>(m(r, c)));
  }
}

inline FeatureMatrix read_matrix(std::istream& is, const std::string& context) {
  std::array<char, 6> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMatrixMagic) {
    fail<IoError>("bad matrix magic in ", context);
  }
  const std::uint32_t rows = get_u32(is, context);
  const std::uint32_t cols = get_u32(is, context);
  FeatureMatrix m(rows, cols);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols * 4);
  if (!buf.empty() && !is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    fail<IoError>("truncated matrix payload in ", context);
  }
  std::size_t k = 0;
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c, k += 4) {
      const std::uint32_t bits = static_cast<std::uint32_t>(buf[k]) | (static_cast<std::uint32_t>(buf[k + 1]) << 8) |
                                 (static_cast<std::uint32_t>(buf[k + 2]) << 16) |
                                 (static_cast<std::uint32_t>(buf[k + 3]) << 24);
      m(r, c) = std::bit_cast<float>(bits);
    }
  }
  return m;
}

/// Writes via a sibling temp file and renames it into place.
inline void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& writer,
                         bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, binary ? std::ios::binary : std::ios::out);
    if (!os) fail<IoError>("cannot open ", tmp.string(), " for writing");
    writer(os);
    os.flush();
    if (!os) fail<IoError>("write failed for ", tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_text_atomic(const fs::path& path, const std::string& content) {
  write_atomic(path, [&](std::ostream& os) { os << content; });
}

inline void save_matrix(const fs::path& path, const FeatureMatrix& m) {
  write_atomic(path, [&](std::ostream& os) { write_matrix(os, m); }, true);
}

inline FeatureMatrix load_matrix(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail<IoError>("cannot open ", path.string());
  return read_matrix(is, path.string());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail<IoError>("cannot open ", path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Lines with trailing CR removed.
inline std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) fail<IoError>("cannot open ", path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace io
}  // namespace audioret
