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

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "audioret/error.hpp"
#include "audioret/io.hpp"
#include "audioret/text.hpp"

namespace audioret {

enum class ExpertKind { audio, visual };

struct ExpertInfo {
  std::string name;
  int dim = 0;
  ExpertKind kind = ExpertKind::audio;

  friend bool operator==(const ExpertInfo&, const ExpertInfo&) = default;
};

/// Known experts and their feature widths. Built-in entries cannot be redefined.
class ExpertRegistry {
 public:
  ExpertRegistry() {
    entries_ = {{"vggish", 128, ExpertKind::audio},
                {"vggsound", 512, ExpertKind::audio},
                {"inst", 2048, ExpertKind::visual},
                {"scene", 2208, ExpertKind::visual},
                {"r2p1d", 512, ExpertKind::visual}};
  }

  /// Registers an additional expert. Re-registering with the same shape is a no-op.
  void add(ExpertInfo info) {
    info.name = text::lower(info.name);
    require(info.dim > 0, "expert '", info.name, "' needs a positive dimension");
    if (auto existing = find(info.name)) {
      require(*existing == info, "expert '", info.name, "' already registered with dimension ", existing->dim);
      return;
    }
    entries_.push_back(std::move(info));
  }

  std::optional<ExpertInfo> find(std::string_view name) const {
    const std::string key = text::lower(name);
    for (const auto& e : entries_) {
      if (e.name == key) return e;
    }
    return std::nullopt;
  }

  const ExpertInfo& at(std::string_view name) const {
    const std::string key = text::lower(name);
    for (const auto& e : entries_) {
      if (e.name == key) return e;
    }
    fail<NotFound>("unregistered expert '", std::string(name), "'");
  }

  const std::vector<ExpertInfo>& entries() const { return entries_; }

 private:
  std::vector<ExpertInfo> entries_;
};

struct FeatureStream {
  std::string sample_id;
  std::string expert;
  FeatureMatrix matrix;  // T x D, time-major
};

/// Read-only access to precomputed expert features.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual bool contains(std::string_view sample_id, std::string_view expert) const = 0;
  virtual FeatureStream fetch(std::string_view sample_id, std::string_view expert) const = 0;
};

namespace detail {

inline void check_stream(const FeatureStream& s, int expected_dim) {
  require<IoError>(s.matrix.rows() >= 1, "empty feature record for sample '", s.sample_id, "' (", s.expert, ")");
  require<IoError>(s.matrix.cols() == expected_dim, "dimension mismatch for sample '", s.sample_id, "' (", s.expert,
                   "): got ", s.matrix.cols(), ", expected ", expected_dim);
  require<IoError>(s.matrix.allFinite(), "corrupt record for sample '", s.sample_id, "' (", s.expert,
                   "): non-finite values");
}

}  // namespace detail

/// Feature store on disk:
///
///   <root>/index.txt              expert<TAB>dim<TAB>count[<TAB>metadata...]
///   <root>/<expert>/<id>.mat      one XFEAT1 matrix record
///
/// Declared dimensions are validated against the registry when the store is opened.
class FeatureStore : public FeatureSource {
 public:
  struct ExpertEntry {
    std::string name;
    int dim = 0;
    std::size_t count = 0;
    std::vector<std::string> metadata;  // opaque extra columns, e.g. temporal stride
  };

  static FeatureStore open(const fs::path& root, const ExpertRegistry& registry = {}) {
    const fs::path index = root / "index.txt";
    require<NotFound>(fs::exists(index), "no index at ", index.string());
    FeatureStore store;
    store.root_ = root;
    const auto lines = io::read_lines(index);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
      const auto& line = lines[ln];
      if (text::trim(line).empty() || line.front() == '#') continue;
      const auto fields = text::split(line, '\t');
      require<IoError>(fields.size() >= 3, index.string(), ":", ln + 1, ": expected expert<TAB>dim<TAB>count");
      ExpertEntry e;
      e.name = text::lower(text::trim(fields[0]));
      e.dim = static_cast<int>(text::to_int(fields[1], "dim"));
      e.count = static_cast<std::size_t>(text::to_int(fields[2], "count"));
      e.metadata.assign(fields.begin() + 3, fields.end());
      const ExpertInfo& info = registry.at(e.name);
      require<IoError>(e.dim == info.dim, "dimension mismatch for expert '", e.name, "' (expected ", info.dim,
                       ", store declares ", e.dim, ")");
      store.experts_.push_back(std::move(e));
    }
    return store;
  }

  const std::vector<ExpertEntry>& experts() const { return experts_; }
  const fs::path& root() const { return root_; }

  bool has_expert(std::string_view expert) const { return entry(expert) != nullptr; }

  bool contains(std::string_view sample_id, std::string_view expert) const override {
    const ExpertEntry* e = entry(expert);
    return e != nullptr && fs::exists(path_for(e->name, sample_id));
  }

  FeatureStream fetch(std::string_view sample_id, std::string_view expert) const override {
    const ExpertEntry* e = entry(expert);
    require<NotFound>(e != nullptr, "expert '", std::string(expert), "' not in store ", root_.string());
    const fs::path path = path_for(e->name, sample_id);
    require<NotFound>(fs::exists(path), "sample not found: '", std::string(sample_id), "' (", e->name, ")");
    FeatureStream s{std::string(sample_id), e->name, io::load_matrix(path)};
    detail::check_stream(s, e->dim);
    return s;
  }

 private:
  const ExpertEntry* entry(std::string_view expert) const {
    const std::string key = text::lower(expert);
    for (const auto& e : experts_) {
      if (e.name == key) return &e;
    }
    return nullptr;
  }

  fs::path path_for(const std::string& expert, std::string_view sample_id) const {
    return root_ / expert / (std::string(sample_id) + ".mat");
  }

  fs::path root_;
  std::vector<ExpertEntry> experts_;
};

/// Accumulates feature records and writes the store index on `finish()`.
class FeatureStoreWriter {
 public:
  explicit FeatureStoreWriter(fs::path root, ExpertRegistry registry = {})
      : root_(std::move(root)), registry_(std::move(registry)) {}

  void write(std::string_view sample_id, std::string_view expert, const FeatureMatrix& m) {
    const ExpertInfo& info = registry_.at(expert);
    require(m.cols() == info.dim, "dimension mismatch for expert '", info.name, "' (expected ", info.dim, ")");
    io::save_matrix(root_ / info.name / (std::string(sample_id) + ".mat"), m);
    auto& slot = counts_[info.name];
    slot.first = info.dim;
    ++slot.second;
  }

  void set_metadata(std::string_view expert, std::vector<std::string> fields) {
    metadata_[text::lower(expert)] = std::move(fields);
  }

  void finish() {
    std::ostringstream os;
    for (const auto& [name, dc] : counts_) {
      os << name << '\t' << dc.first << '\t' << dc.second;
      if (auto it = metadata_.find(name); it != metadata_.end()) {
        for (const auto& f : it->second) os << '\t' << f;
      }
      os << '\n';
    }
    io::write_text_atomic(root_ / "index.txt", os.str());
  }

 private:
  fs::path root_;
  ExpertRegistry registry_;
  std::map<std::string, std::pair<int, std::size_t>> counts_;
  std::map<std::string, std::vector<std::string>> metadata_;
};

/// Feature source held in memory; used for generated corpora and tests.
class InMemoryFeatures : public FeatureSource {
 public:
  void put(std::string sample_id, std::string expert, FeatureMatrix m) {
    data_[key(sample_id, text::lower(expert))] = std::move(m);
  }

  bool contains(std::string_view sample_id, std::string_view expert) const override {
    return data_.count(key(sample_id, text::lower(expert))) > 0;
  }

  FeatureStream fetch(std::string_view sample_id, std::string_view expert) const override {
    const std::string e = text::lower(expert);
    const auto it = data_.find(key(sample_id, e));
    require<NotFound>(it != data_.end(), "sample not found: '", std::string(sample_id), "' (", e, ")");
    FeatureStream s{std::string(sample_id), e, it->second};
    require<IoError>(s.matrix.allFinite(), "corrupt record for sample '", s.sample_id, "' (", e,
                     "): non-finite values");
    return s;
  }

 private:
  static std::string key(std::string_view id, std::string_view expert) {
    std::string k(expert);
    k += '\x1f';
    k += id;
    return k;
  }

  std::unordered_map<std::string, FeatureMatrix> data_;
};

// ---------------------------------------------------------------------------
// Word embeddings

/// Lowercases and splits on whitespace and ASCII punctuation.
inline std::vector<std::string> tokenize(std::string_view caption) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : caption) {
    const auto u = static_cast<unsigned char>(ch);
    const bool sep = u < 0x80 && (text::is_space(ch) || std::ispunct(u));
    if (sep) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += (ch >= 'A' && ch <= 'Z') ? static_cast<char>(ch - 'A' + 'a') : ch;
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

/// Word-embedding table in the text format `V Dw` header then `token v1 ... vDw`.
class WordTable {
 public:
  WordTable() = default;

  WordTable(std::vector<std::string> tokens, FeatureMatrix vectors) : vectors_(std::move(vectors)) {
    require(static_cast<Eigen::Index>(tokens.size()) == vectors_.rows(), "token count does not match table rows");
    for (std::size_t i = 0; i < tokens.size(); ++i) index_.emplace(std::move(tokens[i]), static_cast<int>(i));
  }

  /// Loads a table; when `vocabulary` is given only those tokens are kept.
  static WordTable load(const fs::path& path, const std::unordered_set<std::string>* vocabulary = nullptr) {
    std::ifstream is(path);
    require<IoError>(static_cast<bool>(is), "cannot open word table ", path.string());
    std::string line;
    require<IoError>(static_cast<bool>(std::getline(is, line)), "empty word table ", path.string());
    const auto header = text::split_whitespace(line);
    require<IoError>(header.size() == 2, path.string(), ": header must be 'V Dw'");
    const auto count = text::to_int(header[0], "vocabulary size");
    const auto dim = text::to_int(header[1], "embedding dimension");
    require<IoError>(count >= 0 && dim > 0, path.string(), ": invalid header");

    std::vector<std::string> tokens;
    std::vector<float> values;
    std::size_t ln = 1;
    while (std::getline(is, line)) {
      ++ln;
      if (text::trim(line).empty()) continue;
      const auto fields = text::split_whitespace(line);
      require<IoError>(static_cast<long long>(fields.size()) == dim + 1, path.string(), ":", ln, ": expected ",
                       dim + 1, " fields");
      if (vocabulary && !vocabulary->count(fields[0])) continue;
      tokens.push_back(fields[0]);
      for (std::size_t k = 1; k < fields.size(); ++k) {
        values.push_back(static_cast<float>(text::to_double(fields[k], "embedding value")));
      }
    }
    FeatureMatrix m(static_cast<Eigen::Index>(tokens.size()), dim);
    std::copy(values.begin(), values.end(), m.data());
    WordTable t;
    t.vectors_ = std::move(m);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!t.index_.count(tokens[i])) t.index_.emplace(tokens[i], static_cast<int>(i));
    }
    return t;
  }

  void save(const fs::path& path) const {
    std::vector<std::pair<int, std::string>> rows;
    for (const auto& [tok, i] : index_) rows.emplace_back(i, tok);
    std::sort(rows.begin(), rows.end());
    io::write_atomic(path, [&](std::ostream& os) {
      os.precision(9);
      os << rows.size() << ' ' << dim() << '\n';
      for (const auto& [i, tok] : rows) {
        os << tok;
        for (Eigen::Index c = 0; c < vectors_.cols(); ++c) os << ' ' << vectors_(i, c);
        os << '\n';
      }
    });
  }

  int dim() const { return static_cast<int>(vectors_.cols()); }
  std::size_t size() const { return index_.size(); }

  std::optional<int> lookup(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  auto row(int i) const { return vectors_.row(i); }

 private:
  std::unordered_map<std::string, int> index_;
  FeatureMatrix vectors_;
};

/// Token-level text representation; rows with mask 0 are all zero.
struct TextEmbedding {
  std::string caption_id;
  FeatureMatrix tokens;           // T_w x D_w
  std::vector<std::uint8_t> mask;  // length T_w
};

/// Maps in-vocabulary tokens to their table rows; out-of-vocabulary tokens are
/// dropped, and a caption with no known token becomes one masked zero row.
inline TextEmbedding embed_tokens(std::string_view caption, const WordTable& table, std::string caption_id = {}) {
  require(!text::trim(caption).empty(), "cannot embed empty text");
  std::vector<int> rows;
  for (const auto& tok : tokenize(caption)) {
    if (auto r = table.lookup(tok)) rows.push_back(*r);
  }
  TextEmbedding out;
  out.caption_id = std::move(caption_id);
  if (rows.empty()) {
    out.tokens = FeatureMatrix::Zero(1, table.dim());
    out.mask = {0};
    return out;
  }
  out.tokens.resize(static_cast<Eigen::Index>(rows.size()), table.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) out.tokens.row(static_cast<Eigen::Index>(i)) = table.row(rows[i]);
  out.mask.assign(rows.size(), 1);
  return out;
}

// ---------------------------------------------------------------------------
// Padded batches

/// B sequences padded (or cut) to a common length; padded positions are zero.
struct PaddedBatch {
  int batch = 0;
  int max_len = 0;
  int dim = 0;
  std::vector<float> data;         // B * max_len * dim
  std::vector<std::uint8_t> mask;  // B * max_len
  std::vector<int> lengths;        // valid steps per row

  static PaddedBatch zeros(int batch, int max_len, int dim) {
    require(batch >= 0 && max_len >= 1 && dim >= 1, "invalid padded batch shape");
    PaddedBatch p;
    p.batch = batch;
    p.max_len = max_len;
    p.dim = dim;
    p.data.assign(static_cast<std::size_t>(batch) * max_len * dim, 0.0f);
    p.mask.assign(static_cast<std::size_t>(batch) * max_len, 0);
    p.lengths.assign(static_cast<std::size_t>(batch), 0);
    return p;
  }

  Eigen::Map<const FeatureMatrix> row(int b) const {
    return {data.data() + static_cast<std::size_t>(b) * max_len * dim, max_len, dim};
  }

  bool valid(int b, int t) const { return mask[static_cast<std::size_t>(b) * max_len + t] != 0; }

  /// Copies the first `max_len` steps of `frames`; `step_mask` (if given)
  /// marks which of them are real.
  void set_row(int b, const Eigen::Ref<const FeatureMatrix>& frames,
               std::span<const std::uint8_t> step_mask = {}) {
    require(b >= 0 && b < batch, "row ", b, " out of range");
    require(frames.cols() == dim, "inconsistent feature dims within batch: ", frames.cols(), " vs ", dim);
    Eigen::Map<FeatureMatrix> dst(data.data() + static_cast<std::size_t>(b) * max_len * dim, max_len, dim);
    dst.setZero();
    const int keep = static_cast<int>(std::min<Eigen::Index>(frames.rows(), max_len));
    int valid_steps = 0;
    for (int t = 0; t < keep; ++t) {
      const bool on = step_mask.empty() || step_mask[static_cast<std::size_t>(t)] != 0;
      mask[static_cast<std::size_t>(b) * max_len + t] = on ? 1 : 0;
      if (on) {
        dst.row(t) = frames.row(t);
        ++valid_steps;
      }
    }
    for (int t = keep; t < max_len; ++t) mask[static_cast<std::size_t>(b) * max_len + t] = 0;
    lengths[static_cast<std::size_t>(b)] = valid_steps;
  }

  /// Valid steps of row b, in order.
  FeatureMatrix valid_rows(int b) const {
    FeatureMatrix out(lengths[static_cast<std::size_t>(b)], dim);
    const auto r = row(b);
    Eigen::Index k = 0;
    for (int t = 0; t < max_len; ++t) {
      if (valid(b, t)) out.row(k++) = r.row(t);
    }
    return out;
  }
};

template <typename S>
concept Sequence = requires(const S& s) {
  { s.matrix } -> std::convertible_to<const FeatureMatrix&>;
} || requires(const S& s) {
  { s.tokens } -> std::convertible_to<const FeatureMatrix&>;
  s.mask;
};

namespace detail {

inline const FeatureMatrix& frames_of(const FeatureStream& s) { return s.matrix; }
inline const FeatureMatrix& frames_of(const TextEmbedding& s) { return s.tokens; }
inline std::span<const std::uint8_t> mask_of(const FeatureStream&) { return {}; }
inline std::span<const std::uint8_t> mask_of(const TextEmbedding& s) { return s.mask; }

}  // namespace detail

/// Keeps the head of each sequence up to `max_len` steps and zero-pads the rest.
template <Sequence S>
PaddedBatch cap_and_pad(std::span<const S> items, int max_len) {
  require(max_len >= 1, "max_len must be positive");
  require(!items.empty(), "cannot pad an empty batch");
  const int dim = static_cast<int>(detail::frames_of(items.front()).cols());
  for (const auto& s : items) {
    require(detail::frames_of(s).cols() == dim, "inconsistent feature dims within batch: ",
            detail::frames_of(s).cols(), " vs ", dim);
  }
  PaddedBatch out = PaddedBatch::zeros(static_cast<int>(items.size()), max_len, dim);
  for (std::size_t b = 0; b < items.size(); ++b) {
    out.set_row(static_cast<int>(b), detail::frames_of(items[b]), detail::mask_of(items[b]));
  }
  return out;
}

template <Sequence S>
PaddedBatch cap_and_pad(const std::vector<S>& items, int max_len) {
  return cap_and_pad(std::span<const S>(items), max_len);
}

}  // namespace audioret
