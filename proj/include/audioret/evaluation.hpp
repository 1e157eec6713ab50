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

// Retrieval metrics (R@k, medR, meanR) in both directions, seed aggregation
// and duration-bucketed reporting.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "audioret/corpus.hpp"
#include "audioret/error.hpp"

namespace audioret {

enum class Direction { t2a, a2t };

inline std::string_view to_string(Direction d) { return d == Direction::t2a ? "t2a" : "a2t"; }

/// Query row q of a similarity matrix is relevant to pool columns relevance[q].
struct GroundTruth {
  Direction direction = Direction::t2a;
  std::vector<std::vector<int>> relevance;
  int pool_size = 0;

  void validate() const {
    require(pool_size >= 1, "empty retrieval pool");
    for (std::size_t q = 0; q < relevance.size(); ++q) {
      require(!relevance[q].empty(), "query ", q, " has no relevant item");
      for (int r : relevance[q]) require(r >= 0 && r < pool_size, "relevant item ", r, " outside the pool");
    }
  }
};

/// Audio pool and caption queries of one split. Audio items are in sorted id
/// order, which is also the tie-break order.
struct EvalPool {
  std::vector<std::string> sample_ids;
  std::vector<std::string> caption_ids;
  std::vector<std::string> caption_texts;
  std::vector<int> caption_sample;  // caption -> audio index
};

inline EvalPool make_pool(const Corpus& corpus, Split split) {
  EvalPool pool;
  pool.sample_ids = corpus.split_ids(split);
  std::sort(pool.sample_ids.begin(), pool.sample_ids.end());
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < pool.sample_ids.size(); ++i) index.emplace(pool.sample_ids[i], static_cast<int>(i));
  for (const auto& c : corpus.captions) {
    const auto it = index.find(c.sample_id);
    if (it == index.end()) continue;
    pool.caption_ids.push_back(c.caption_id);
    pool.caption_texts.push_back(c.text);
    pool.caption_sample.push_back(it->second);
  }
  require(!pool.sample_ids.empty(), "split '", std::string(to_string(split)), "' of ", corpus.name, " is empty");
  return pool;
}

/// Every caption is a query; its only relevant item is its source audio.
inline GroundTruth t2a_ground_truth(const EvalPool& pool) {
  GroundTruth gt{Direction::t2a, {}, static_cast<int>(pool.sample_ids.size())};
  for (int s : pool.caption_sample) gt.relevance.push_back({s});
  return gt;
}

/// Every audio item is a query; all of its captions are relevant. With
/// `first_caption_only`, only the earliest caption of each audio counts.
inline GroundTruth a2t_ground_truth(const EvalPool& pool, bool first_caption_only = false) {
  GroundTruth gt{Direction::a2t, std::vector<std::vector<int>>(pool.sample_ids.size()),
                 static_cast<int>(pool.caption_ids.size())};
  for (std::size_t c = 0; c < pool.caption_sample.size(); ++c) {
    auto& rel = gt.relevance[static_cast<std::size_t>(pool.caption_sample[c])];
    if (!first_caption_only || rel.empty()) rel.push_back(static_cast<int>(c));
  }
  return gt;
}

/// Pool indices by descending score; equal scores keep ascending index.
inline std::vector<int> rank_order(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

/// Best (minimum) 1-based rank among the relevant items.
inline int rank_of_target(std::span<const double> scores, std::span<const int> relevant) {
  require(!scores.empty(), "empty retrieval pool");
  require(!relevant.empty(), "empty relevant set");
  const int n = static_cast<int>(scores.size());
  int best = std::numeric_limits<int>::max();
  for (int r : relevant) {
    require(r >= 0 && r < n, "relevant item ", r, " outside the pool");
    const double s = scores[static_cast<std::size_t>(r)];
    int ahead = 0;
    for (int k = 0; k < n; ++k) {
      const double v = scores[static_cast<std::size_t>(k)];
      if (v > s || (v == s && k < r)) ++ahead;
    }
    best = std::min(best, ahead + 1);
  }
  return best;
}

struct MetricsReport {
  double r1 = 0, r5 = 0, r10 = 0, r50 = 0;
  double medr = 0, meanr = 0;
  int pool_size = 0;
  int num_queries = 0;
  std::vector<int> ranks;

  /// Value by column name: R@1, R@5, R@10, R@50, medR, meanR.
  double get(std::string_view column) const {
    if (column == "R@1") return r1;
    if (column == "R@5") return r5;
    if (column == "R@10") return r10;
    if (column == "R@50") return r50;
    if (column == "medR") return medr;
    if (column == "meanR") return meanr;
    fail("unknown metric column '", std::string(column), "'");
  }
};

inline constexpr std::string_view kMetricColumns[] = {"R@1", "R@5", "R@10", "R@50", "medR", "meanR"};

inline MetricsReport metrics_from_ranks(std::vector<int> ranks, int pool_size) {
  require(!ranks.empty(), "no queries to evaluate");
  MetricsReport rep;
  rep.pool_size = pool_size;
  rep.num_queries = static_cast<int>(ranks.size());
  const double n = static_cast<double>(ranks.size());
  auto recall = [&](int k) {
    return 100.0 * static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [k](int r) { return r <= k; })) / n;
  };
  rep.r1 = recall(1);
  rep.r5 = recall(5);
  rep.r10 = recall(10);
  rep.r50 = recall(50);
  std::vector<int> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  rep.medr = sorted[(sorted.size() - 1) / 2];
  double total = 0.0;
  for (int r : ranks) total += r;
  rep.meanr = total / n;
  rep.ranks = std::move(ranks);
  return rep;
}

/// Rows of `s` are queries, columns the pool.
inline MetricsReport compute_metrics(const Eigen::MatrixXd& s, const GroundTruth& gt) {
  gt.validate();
  require(s.rows() == static_cast<Eigen::Index>(gt.relevance.size()) && s.cols() == gt.pool_size,
          "similarity matrix ", s.rows(), "x", s.cols(), " does not match ground truth with ", gt.relevance.size(),
          " queries over ", gt.pool_size, " items");
  std::vector<int> ranks;
  ranks.reserve(gt.relevance.size());
  std::vector<double> row(static_cast<std::size_t>(s.cols()));
  for (Eigen::Index q = 0; q < s.rows(); ++q) {
    for (Eigen::Index k = 0; k < s.cols(); ++k) row[static_cast<std::size_t>(k)] = s(q, k);
    ranks.push_back(rank_of_target(row, gt.relevance[static_cast<std::size_t>(q)]));
  }
  return metrics_from_ranks(std::move(ranks), gt.pool_size);
}

/// (R@1 * R@5 * R@10)^(1/3)
inline double selection_score(const MetricsReport& rep) {
  const double x = rep.r1 * rep.r5 * rep.r10;
  double y = std::cbrt(x);
  // glibc's cbrt can be an ulp off on perfect cubes (cbrt(13824) != 24).
  if (y > 0.0 && std::isfinite(y)) y -= (y * y * y - x) / (3.0 * y * y);
  return y;
}

/// Index of the report with the highest selection score; the earliest wins ties.
inline std::size_t select_best(std::span<const MetricsReport> history) {
  require(!history.empty(), "cannot select from an empty history");
  std::size_t best = 0;
  double best_score = selection_score(history[0]);
  for (std::size_t i = 1; i < history.size(); ++i) {
    const double s = selection_score(history[i]);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;
};

struct SeedAggregate {
  MetricStat r1, r5, r10, r50, medr, meanr;
  int runs = 0;
  int pool_size = 0;

  const MetricStat& get(std::string_view column) const {
    if (column == "R@1") return r1;
    if (column == "R@5") return r5;
    if (column == "R@10") return r10;
    if (column == "R@50") return r50;
    if (column == "medR") return medr;
    if (column == "meanR") return meanr;
    fail("unknown metric column '", std::string(column), "'");
  }
};

namespace detail {

inline MetricStat mean_std(const std::vector<double>& v) {
  MetricStat s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(v.size() - 1));
  } else {
    s.std = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

inline SeedAggregate summarize(std::span<const MetricsReport> reports) {
  SeedAggregate agg;
  agg.runs = static_cast<int>(reports.size());
  agg.pool_size = reports.front().pool_size;
  auto column = [&](double MetricsReport::*field) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(r.*field);
    return mean_std(v);
  };
  agg.r1 = column(&MetricsReport::r1);
  agg.r5 = column(&MetricsReport::r5);
  agg.r10 = column(&MetricsReport::r10);
  agg.r50 = column(&MetricsReport::r50);
  agg.medr = column(&MetricsReport::medr);
  agg.meanr = column(&MetricsReport::meanr);
  return agg;
}

}  // namespace detail

/// Mean and sample (n-1) standard deviation over at least two runs.
inline SeedAggregate aggregate_seeds(std::span<const MetricsReport> reports) {
  require(reports.size() >= 2, "seed aggregation needs at least 2 runs, got ", reports.size());
  for (const auto& r : reports) {
    require(r.pool_size == reports.front().pool_size, "mixed pool sizes: ", r.pool_size, " vs ",
            reports.front().pool_size);
  }
  return detail::summarize(reports);
}

/// Like aggregate_seeds but also accepts a single run, whose std is NaN.
inline SeedAggregate summarize_runs(std::span<const MetricsReport> reports) {
  require(!reports.empty(), "no runs to summarize");
  if (reports.size() >= 2) return aggregate_seeds(reports);
  return detail::summarize(reports);
}

struct BucketResult {
  std::string label;
  double lower = 0.0;  // exclusive (-inf for the first bucket)
  double upper = 0.0;  // inclusive (+inf for the last bucket)
  int num_queries = 0;
  std::optional<MetricsReport> metrics;  // empty when no query falls in the bucket
};

namespace detail {

inline std::string format_seconds(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

/// Labels for duration buckets delimited by ascending `edges`.
inline std::vector<std::string> bucket_labels(std::span<const double> edges) {
  std::vector<std::string> out;
  if (edges.empty()) return {"all"};
  out.push_back("≤" + detail::format_seconds(edges.front()) + "s");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    out.push_back(detail::format_seconds(edges[i - 1]) + "–" + detail::format_seconds(edges[i]) + "s");
  }
  out.push_back(">" + detail::format_seconds(edges.back()) + "s");
  return out;
}

inline const std::vector<double>& default_bucket_edges() {
  static const std::vector<double> edges{30.0, 120.0};
  return edges;
}

/// Groups queries by the duration of their ground-truth audio and evaluates
/// each group against the full pool.
inline std::vector<BucketResult> bucket_metrics(const Corpus& corpus, const EvalPool& pool, const Eigen::MatrixXd& s,
                                                const GroundTruth& gt,
                                                std::span<const double> edges = default_bucket_edges()) {
  for (std::size_t i = 1; i < edges.size(); ++i) require(edges[i] > edges[i - 1], "bucket edges must ascend");
  const auto index = corpus.sample_index();
  std::vector<double> pool_duration;
  for (const auto& id : pool.sample_ids) {
    const auto it = index.find(id);
    require(it != index.end(), "unknown duration for sample '", id, "'");
    const double d = corpus.samples[it->second].duration;
    require(std::isfinite(d) && d >= 0.0, "unknown duration for sample '", id, "'");
    pool_duration.push_back(d);
  }
  const auto full = compute_metrics(s, gt);
  const auto labels = bucket_labels(edges);
  std::vector<BucketResult> out(labels.size());
  std::vector<std::vector<int>> members(labels.size());
  for (std::size_t q = 0; q < gt.relevance.size(); ++q) {
    const int audio = gt.direction == Direction::t2a ? gt.relevance[q].front() : static_cast<int>(q);
    require(audio >= 0 && audio < static_cast<int>(pool_duration.size()), "query ", q, " has no audio in the pool");
    const double d = pool_duration[static_cast<std::size_t>(audio)];
    std::size_t b = 0;
    while (b < edges.size() && d > edges[b]) ++b;
    members[b].push_back(full.ranks[q]);
  }
  for (std::size_t b = 0; b < labels.size(); ++b) {
    out[b].label = labels[b];
    out[b].lower = b == 0 ? -std::numeric_limits<double>::infinity() : edges[b - 1];
    out[b].upper = b == edges.size() ? std::numeric_limits<double>::infinity() : edges[b];
    out[b].num_queries = static_cast<int>(members[b].size());
    if (!members[b].empty()) out[b].metrics = metrics_from_ranks(members[b], gt.pool_size);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_number(double v, int precision = 1) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

inline std::string format_mean_std(const MetricStat& s, int precision = 1) {
  if (std::isnan(s.std)) return format_number(s.mean, precision);
  return format_number(s.mean, precision) + "±" + format_number(s.std, precision);
}

inline std::string metrics_csv_header() { return "direction,pool_size,queries,R@1,R@5,R@10,R@50,medR,meanR"; }

inline std::string metrics_csv_row(Direction d, const MetricsReport& r) {
  std::string out = std::string(to_string(d)) + "," + std::to_string(r.pool_size) + "," + std::to_string(r.num_queries);
  for (auto col : kMetricColumns) out += "," + format_number(r.get(col), 6);
  return out;
}

}  // namespace audioret
