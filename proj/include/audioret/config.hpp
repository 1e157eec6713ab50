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

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "audioret/error.hpp"
#include "audioret/io.hpp"
#include "audioret/text.hpp"

namespace audioret {

/// Flat `section.key=value` configuration. Lines starting with '#' are comments.
/// Keys are kept sorted so the text form is canonical.
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view content, std::string_view origin = "<config>") {
    Config cfg;
    std::size_t ln = 0;
    for (const auto& raw : text::split(content, '\n')) {
      ++ln;
      const auto line = text::trim(raw);
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      require(eq != std::string_view::npos, origin, ":", ln, ": expected key=value");
      const std::string key(text::trim(line.substr(0, eq)));
      require(!key.empty(), origin, ":", ln, ": empty key");
      cfg.values_[key] = std::string(text::trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static Config load(const fs::path& path) { return parse(io::read_file(path), path.string()); }

  bool has(std::string_view key) const { return values_.count(std::string(key)) > 0; }

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }

  template <typename T>
  void set(std::string key, T value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    values_[std::move(key)] = os.str();
  }

  void erase(std::string_view key) { values_.erase(std::string(key)); }

  std::optional<std::string> get(std::string_view key) const {
    const auto it = values_.find(std::string(key));
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(std::string_view key, std::string fallback) const {
    return get(key).value_or(std::move(fallback));
  }

  std::string require_string(std::string_view key) const {
    auto v = get(key);
    require<NotFound>(v.has_value(), "missing config key '", std::string(key), "'");
    return *v;
  }

  double get_double(std::string_view key, double fallback) const {
    const auto v = get(key);
    return v ? text::to_double(*v, key) : fallback;
  }

  long long get_int(std::string_view key, long long fallback) const {
    const auto v = get(key);
    return v ? text::to_int(*v, key) : fallback;
  }

  bool get_bool(std::string_view key, bool fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    const std::string s = text::lower(*v);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    fail("config key '", std::string(key), "' is not a boolean: ", *v);
  }

  std::vector<std::string> get_list(std::string_view key) const {
    const auto v = get(key);
    return v ? text::split_list(*v) : std::vector<std::string>{};
  }

  /// Overlays every entry of `other` onto this config.
  void merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  /// Entries under `prefix.` with the prefix removed.
  Config section(std::string_view prefix) const {
    Config out;
    const std::string p = std::string(prefix) + ".";
    for (const auto& [k, v] : values_) {
      if (k.rfind(p, 0) == 0) out.values_[k.substr(p.size())] = v;
    }
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) {
      out += k;
      out += '=';
      out += v;
      out += '\n';
    }
    return out;
  }

  std::string hash() const { return text::hex(text::fnv1a(to_string())); }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace audioret
