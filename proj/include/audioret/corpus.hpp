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
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "audioret/error.hpp"
#include "audioret/io.hpp"
#include "audioret/random.hpp"
#include "audioret/text.hpp"

namespace audioret {

enum class Split { train, val, test, unassigned };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned") return Split::unassigned;
  fail("unknown split '", std::string(s), "'");
}

struct SampleRecord {
  std::string sample_id;
  double duration = 0.0;  // seconds
  std::vector<std::string> categories;
  Split split = Split::unassigned;
};

struct CaptionRecord {
  std::string caption_id;
  std::string sample_id;
  std::string text;
};

/// A named collection of audio samples, their captions and split assignment.
struct Corpus {
  std::string name;
  std::vector<SampleRecord> samples;
  std::vector<CaptionRecord> captions;
  std::uint64_t split_seed = 0;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [s](const SampleRecord& r) { return r.split == s; }));
  }

  /// Sample ids of one split, in corpus order.
  std::vector<std::string> split_ids(Split s) const {
    std::vector<std::string> out;
    for (const auto& r : samples) {
      if (r.split == s) out.push_back(r.sample_id);
    }
    return out;
  }

  std::unordered_map<std::string, std::size_t> sample_index() const {
    std::unordered_map<std::string, std::size_t> idx;
    idx.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) idx.emplace(samples[i].sample_id, i);
    return idx;
  }

  const SampleRecord& sample(std::string_view id) const {
    for (const auto& r : samples) {
      if (r.sample_id == id) return r;
    }
    fail<NotFound>("sample not found: ", std::string(id));
  }

  /// Checks id uniqueness, caption references, text and duration validity.
  void validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& r : samples) {
      require(ids.insert(r.sample_id).second, "duplicate sample id '", r.sample_id, "' in corpus ", name);
      require(std::isfinite(r.duration) && r.duration >= 0.0, "invalid duration for sample '", r.sample_id, "'");
    }
    for (const auto& c : captions) {
      require(ids.count(c.sample_id) > 0, "caption '", c.caption_id, "' references unknown sample '", c.sample_id,
              "'");
      require(!text::trim(c.text).empty(), "caption '", c.caption_id, "' has empty text");
    }
  }
};

/// Keeps the samples of the listed splits (and their captions), preserving order.
inline Corpus restrict_to(const Corpus& corpus, const std::vector<Split>& splits) {
  Corpus out;
  out.name = corpus.name;
  out.split_seed = corpus.split_seed;
  std::unordered_set<std::string> keep;
  for (const auto& r : corpus.samples) {
    if (std::find(splits.begin(), splits.end(), r.split) != splits.end()) {
      out.samples.push_back(r);
      keep.insert(r.sample_id);
    }
  }
  for (const auto& c : corpus.captions) {
    if (keep.count(c.sample_id)) out.captions.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SoundDescs manifest

struct SplitSpec {
  std::array<double, 3> ratios{0.70, 0.15, 0.15};  // train, val, test
  std::uint64_t seed = 0;

  void validate() const {
    double sum = 0.0;
    for (double r : ratios) {
      require(r > 0.0 && r < 1.0, "split ratio ", r, " outside (0,1)");
      sum += r;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "split ratios sum to ", sum, ", expected 1");
  }
};

struct ManifestReport {
  std::size_t entries = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::vector<std::string> dropped_ids;
};

struct Manifest {
  Corpus corpus;
  ManifestReport report;
};

/// Builds the SoundDescs corpus from an index and a descriptions file.
///
/// Index lines: `id<TAB>duration_seconds<TAB>tag1,tag2,...` (tags may be empty).
/// Description lines: `id<TAB>text`. Blank lines and lines starting with '#'
/// are ignored. Entries without a non-empty description are dropped and
/// reported; each kept entry yields one caption whose id equals the sample id.
inline Manifest build_sounddescs_manifest(const fs::path& index_path, const fs::path& descriptions_path) {
  const auto index_lines = io::read_lines(index_path);
  const auto desc_lines = io::read_lines(descriptions_path);

  std::unordered_map<std::string, std::string> descriptions;
  for (std::size_t ln = 0; ln < desc_lines.size(); ++ln) {
    const auto& line = desc_lines[ln];
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    const std::string id(text::trim(std::string_view(line).substr(0, tab)));
    const std::string body = tab == std::string::npos ? std::string() : std::string(text::trim(line.substr(tab + 1)));
    if (!body.empty()) descriptions[id] = body;
  }

  Manifest out;
  out.corpus.name = "sounddescs";
  std::unordered_set<std::string> seen;
  for (std::size_t ln = 0; ln < index_lines.size(); ++ln) {
    const auto& line = index_lines[ln];
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto fields = text::split(line, '\t');
    if (fields.size() < 2) {
      fail<IoError>(index_path.string(), ":", ln + 1, ": expected id<TAB>duration[<TAB>tags]");
    }
    SampleRecord rec;
    rec.sample_id = std::string(text::trim(fields[0]));
    require<IoError>(!rec.sample_id.empty(), index_path.string(), ":", ln + 1, ": empty id");
    require<IoError>(seen.insert(rec.sample_id).second, index_path.string(), ":", ln + 1, ": duplicate id '",
                     rec.sample_id, "'");
    rec.duration = text::to_double(fields[1], "duration");
    require<IoError>(std::isfinite(rec.duration) && rec.duration >= 0.0, index_path.string(), ":", ln + 1,
                     ": invalid duration");
    if (fields.size() > 2) rec.categories = text::split_list(fields[2]);
    ++out.report.entries;

    const auto it = descriptions.find(rec.sample_id);
    if (it == descriptions.end()) {
      ++out.report.dropped;
      out.report.dropped_ids.push_back(rec.sample_id);
      continue;
    }
    out.corpus.captions.push_back({rec.sample_id, rec.sample_id, it->second});
    out.corpus.samples.push_back(std::move(rec));
    ++out.report.kept;
  }
  require(out.report.kept > 0, "zero valid entries in ", index_path.string());
  return out;
}

/// Per-split sample counts for `n` samples: val and test are rounded to the
/// nearest integer and train receives the remainder.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  const auto nearest = [n](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 0.5 + 1e-9));
  };
  const std::size_t val = nearest(spec.ratios[1]);
  const std::size_t test = nearest(spec.ratios[2]);
  return {n - val - test, val, test};
}

/// Seeded, input-order-independent split of an unsplit corpus.
inline Corpus assign_splits(Corpus corpus, const SplitSpec& spec) {
  spec.validate();
  for (const auto& r : corpus.samples) {
    require(r.split == Split::unassigned, "corpus ", corpus.name, " is already split");
  }
  std::vector<std::size_t> order(corpus.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus.samples[a].sample_id < corpus.samples[b].sample_id;
  });
  Rng rng(spec.seed);
  rng.shuffle(order);

  const auto counts = split_counts(order.size(), spec);
  for (std::size_t k = 0; k < order.size(); ++k) {
    Split s = Split::train;
    if (k >= counts[0] + counts[1]) {
      s = Split::test;
    } else if (k >= counts[0]) {
      s = Split::val;
    }
    corpus.samples[order[k]].split = s;
  }
  corpus.split_seed = spec.seed;
  return corpus;
}

// ---------------------------------------------------------------------------
// Benchmark corpora on disk
//
//   <root>/<name>/samples.tsv     id<TAB>duration<TAB>tags
//   <root>/<name>/captions.tsv    caption_id<TAB>sample_id<TAB>text
//   <root>/<name>/splits/{train,val,test}.txt   one sample id per line
//   <root>/<name>/exclude.txt     optional ids removed before splitting

struct BenchmarkInfo {
  std::string name;
  std::string focus;  // "audio" or "visual"
  std::array<std::size_t, 3> canonical_counts;
  bool has_val;
};

inline const std::vector<BenchmarkInfo>& benchmark_registry() {
  static const std::vector<BenchmarkInfo> registry = {
      {"audiocaps", "audio", {49291, 428, 816}, true},
      {"clotho", "audio", {2314, 579, 1045}, true},
      {"sounddescs", "audio", {23085, 4947, 4947}, true},
      {"activitynet", "visual", {10009, 0, 4917}, false},
      {"queryd", "visual", {9114, 1952, 1954}, true},
  };
  return registry;
}

inline const BenchmarkInfo& benchmark_info(std::string_view name) {
  const std::string key = text::lower(name);
  for (const auto& info : benchmark_registry()) {
    if (info.name == key) return info;
  }
  fail<NotFound>("unknown dataset '", std::string(name), "'");
}

namespace detail {

inline std::vector<std::string> read_id_list(const fs::path& path) {
  std::vector<std::string> ids;
  for (const auto& line : io::read_lines(path)) {
    const auto t = text::trim(line);
    if (!t.empty() && t.front() != '#') ids.emplace_back(t);
  }
  return ids;
}

inline std::vector<SampleRecord> read_samples_tsv(const fs::path& path) {
  std::vector<SampleRecord> out;
  const auto lines = io::read_lines(path);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto& line = lines[ln];
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto fields = text::split(line, '\t');
    require<IoError>(fields.size() >= 2, path.string(), ":", ln + 1, ": expected id<TAB>duration[<TAB>tags]");
    SampleRecord r;
    r.sample_id = std::string(text::trim(fields[0]));
    r.duration = text::to_double(fields[1], "duration");
    if (fields.size() > 2) r.categories = text::split_list(fields[2]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<CaptionRecord> read_captions_tsv(const fs::path& path) {
  std::vector<CaptionRecord> out;
  const auto lines = io::read_lines(path);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto& line = lines[ln];
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    require<IoError>(tab2 != std::string::npos, path.string(), ":", ln + 1,
                     ": expected caption_id<TAB>sample_id<TAB>text");
    out.push_back({std::string(text::trim(line.substr(0, tab1))),
                   std::string(text::trim(line.substr(tab1 + 1, tab2 - tab1 - 1))),
                   std::string(text::trim(line.substr(tab2 + 1)))});
  }
  return out;
}

}  // namespace detail

/// Loads a corpus in the on-disk benchmark layout with its canonical splits.
inline Corpus load_benchmark(std::string_view name, const fs::path& root) {
  const BenchmarkInfo& info = benchmark_info(name);
  const fs::path dir = root / info.name;
  require<NotFound>(fs::exists(dir / "samples.tsv"), "missing ", (dir / "samples.tsv").string());
  require<NotFound>(fs::exists(dir / "captions.tsv"), "missing ", (dir / "captions.tsv").string());

  std::unordered_set<std::string> excluded;
  if (fs::exists(dir / "exclude.txt")) {
    for (auto& id : detail::read_id_list(dir / "exclude.txt")) excluded.insert(std::move(id));
  }

  Corpus corpus;
  corpus.name = info.name;
  for (auto& r : detail::read_samples_tsv(dir / "samples.tsv")) {
    if (!excluded.count(r.sample_id)) corpus.samples.push_back(std::move(r));
  }
  for (auto& c : detail::read_captions_tsv(dir / "captions.tsv")) {
    if (!excluded.count(c.sample_id)) corpus.captions.push_back(std::move(c));
  }
  corpus.validate();

  const auto index = corpus.sample_index();
  const std::array<std::pair<Split, const char*>, 3> lists{
      {{Split::train, "train"}, {Split::val, "val"}, {Split::test, "test"}}};
  for (const auto& [split, file] : lists) {
    const fs::path path = dir / "splits" / (std::string(file) + ".txt");
    if (!fs::exists(path)) {
      if (split == Split::val && !info.has_val) continue;
      fail<NotFound>("split list missing: ", path.string());
    }
    for (const auto& id : detail::read_id_list(path)) {
      if (excluded.count(id)) continue;
      const auto it = index.find(id);
      require<IoError>(it != index.end(), path.string(), " references unknown sample '", id, "'");
      auto& rec = corpus.samples[it->second];
      require<IoError>(rec.split == Split::unassigned, "sample '", id, "' listed in more than one split");
      rec.split = split;
    }
  }
  return corpus;
}

/// Describes any disagreement between loaded split sizes and the published
/// ones. Corpora outside the registry have nothing to compare against.
inline std::optional<std::string> canonical_count_mismatch(const Corpus& corpus) {
  const auto& registry = benchmark_registry();
  const auto it = std::find_if(registry.begin(), registry.end(),
                               [&](const BenchmarkInfo& b) { return b.name == text::lower(corpus.name); });
  if (it == registry.end()) return std::nullopt;
  const BenchmarkInfo& info = *it;
  const std::array<std::size_t, 3> got{corpus.count(Split::train), corpus.count(Split::val),
                                       corpus.count(Split::test)};
  if (got == info.canonical_counts) return std::nullopt;
  std::ostringstream os;
  os << corpus.name << " split sizes " << got[0] << "/" << got[1] << "/" << got[2] << " differ from canonical "
     << info.canonical_counts[0] << "/" << info.canonical_counts[1] << "/" << info.canonical_counts[2];
  return os.str();
}

/// Writes a corpus in the benchmark layout under `root/<corpus.name>`.
inline void save_benchmark(const Corpus& corpus, const fs::path& root) {
  const fs::path dir = root / corpus.name;
  std::ostringstream samples, captions;
  samples.precision(17);
  std::array<std::ostringstream, 3> lists;
  for (const auto& r : corpus.samples) {
    samples << r.sample_id << '\t' << r.duration << '\t' << text::join(r.categories, ",") << '\n';
    if (r.split != Split::unassigned) lists[static_cast<std::size_t>(r.split)] << r.sample_id << '\n';
  }
  for (const auto& c : corpus.captions) captions << c.caption_id << '\t' << c.sample_id << '\t' << c.text << '\n';
  io::write_text_atomic(dir / "samples.tsv", samples.str());
  io::write_text_atomic(dir / "captions.tsv", captions.str());
  io::write_text_atomic(dir / "splits" / "train.txt", lists[0].str());
  io::write_text_atomic(dir / "splits" / "val.txt", lists[1].str());
  io::write_text_atomic(dir / "splits" / "test.txt", lists[2].str());
}

// ---------------------------------------------------------------------------
// Statistics

/// Fixed-width histogram starting at zero; the last bin is open-ended.
struct Histogram {
  double bin_width = 1.0;
  std::vector<std::size_t> counts;

  void add(double v, std::size_t max_bins) {
    std::size_t b = v <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(v / bin_width));
    b = std::min(b, max_bins - 1);
    if (counts.size() <= b) counts.resize(b + 1, 0);
    ++counts[b];
  }

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  /// CSV with header `bin_start,bin_end,count`.
  std::string to_csv() const {
    std::ostringstream os;
    os << "bin_start,bin_end,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i) {
      os << static_cast<double>(i) * bin_width << ',' << static_cast<double>(i + 1) * bin_width << ',' << counts[i]
         << '\n';
    }
    return os.str();
  }
};

struct StatsOptions {
  double duration_bin_seconds = 5.0;
  double words_bin = 1.0;
  std::size_t max_bins = 2000;
};

struct StatsReport {
  std::string name;
  std::size_t num_samples = 0;
  std::size_t num_captions = 0;
  std::array<std::size_t, 4> split_counts{};  // train, val, test, unassigned
  double total_duration = 0.0;                // seconds
  double mean_duration = 0.0;
  double max_duration = 0.0;
  double mean_words = 0.0;
  std::size_t max_words = 0;
  std::map<std::string, std::size_t> category_counts;
  Histogram duration_histogram;
  Histogram words_histogram;

  double total_hours() const { return total_duration / 3600.0; }

  /// `key=value` lines; category counts appear as `category.<tag>=<n>`.
  std::string to_key_value() const {
    std::ostringstream os;
    os.precision(10);
    os << "name=" << name << '\n'
       << "num_samples=" << num_samples << '\n'
       << "num_captions=" << num_captions << '\n'
       << "train=" << split_counts[0] << '\n'
       << "val=" << split_counts[1] << '\n'
       << "test=" << split_counts[2] << '\n'
       << "unassigned=" << split_counts[3] << '\n'
       << "total_duration_s=" << total_duration << '\n'
       << "total_duration_h=" << total_hours() << '\n'
       << "mean_duration_s=" << mean_duration << '\n'
       << "max_duration_s=" << max_duration << '\n'
       << "mean_words=" << mean_words << '\n'
       << "max_words=" << max_words << '\n';
    for (const auto& [tag, n] : category_counts) os << "category." << tag << '=' << n << '\n';
    return os.str();
  }
};

/// Number of whitespace-separated words of a caption, punctuation kept attached.
inline std::size_t caption_word_count(std::string_view caption) {
  return text::split_whitespace(text::trim(caption)).size();
}

inline StatsReport corpus_stats(const Corpus& corpus, const StatsOptions& opts = {}) {
  require(!corpus.samples.empty(), "cannot compute statistics of empty corpus ", corpus.name);
  StatsReport rep;
  rep.name = corpus.name;
  rep.num_samples = corpus.samples.size();
  rep.num_captions = corpus.captions.size();
  rep.duration_histogram.bin_width = opts.duration_bin_seconds;
  rep.words_histogram.bin_width = opts.words_bin;
  for (const auto& r : corpus.samples) {
    ++rep.split_counts[static_cast<std::size_t>(r.split)];
    rep.total_duration += r.duration;
    rep.max_duration = std::max(rep.max_duration, r.duration);
    rep.duration_histogram.add(r.duration, opts.max_bins);
    for (const auto& tag : r.categories) ++rep.category_counts[tag];
  }
  rep.mean_duration = rep.total_duration / static_cast<double>(rep.num_samples);
  std::size_t total_words = 0;
  for (const auto& c : corpus.captions) {
    const std::size_t w = caption_word_count(c.text);
    total_words += w;
    rep.max_words = std::max(rep.max_words, w);
    rep.words_histogram.add(static_cast<double>(w), opts.max_bins);
  }
  if (rep.num_captions > 0) rep.mean_words = static_cast<double>(total_words) / static_cast<double>(rep.num_captions);
  return rep;
}

}  // namespace audioret
