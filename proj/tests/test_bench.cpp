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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support.hpp"

namespace {

using namespace audioret;
using namespace testing_support;

// Two short CE runs on the generated "synthetic" dataset.
ExperimentConfig small_experiment(const fs::path& out) {
  ExperimentConfig e;
  e.dataset = "synthetic";
  e.arch = Arch::ce;
  e.experts = {"syn_a", "syn_b"};
  e.seeds = {0, 1};
  e.overrides.set("train.epochs", 2);
  e.overrides.set("loss.batch_size", 32);
  e.overrides.set("caps.words", 16);
  e.overrides.set("caps.default_frames", 16);
  e.out_dir = out;
  return e;
}

DatasetResolver synthetic_resolver() { return filesystem_resolver("", "", Config{}); }

void expect_same_report(const MetricsReport& a, const MetricsReport& b) {
  for (auto col : kMetricColumns) EXPECT_EQ(a.get(col), b.get(col)) << col;
  EXPECT_EQ(a.pool_size, b.pool_size);
}

// Single-seed rows have an undefined (NaN) sample std.
bool same_value(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

void expect_same_row(const ResultRow& a, const ResultRow& b) {
  ASSERT_EQ(a.runs.size(), b.runs.size());
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.runs[i].hash, b.runs[i].hash);
    expect_same_report(a.runs[i].t2a, b.runs[i].t2a);
    expect_same_report(a.runs[i].a2t, b.runs[i].a2t);
  }
  for (auto col : kMetricColumns) {
    EXPECT_TRUE(same_value(a.t2a.get(col).mean, b.t2a.get(col).mean)) << col;
    EXPECT_TRUE(same_value(a.t2a.get(col).std, b.t2a.get(col).std)) << col;
    EXPECT_TRUE(same_value(a.a2t.get(col).mean, b.a2t.get(col).mean)) << col;
    EXPECT_TRUE(same_value(a.a2t.get(col).std, b.a2t.get(col).std)) << col;
  }
}

// ---------------------------------------------------------------------------
// Validation

TEST(Experiment, EmptyExpertListFailsBeforeTraining) {
  TempDir dir("bench_empty");
  auto cfg = small_experiment(dir.path());
  cfg.experts.clear();
  try {
    run_benchmark(cfg, synthetic_resolver());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("expert list must not be empty"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(fs::exists(dir / "runs"));
}

TEST(Experiment, UnregisteredExpertFails) {
  TempDir dir("bench_unknown");
  auto cfg = small_experiment(dir.path());
  cfg.experts = {"syn_a", "no_such_expert"};
  EXPECT_THROW(run_benchmark(cfg, synthetic_resolver()), Error);
  cfg.experts = {"syn_a"};
  cfg.subsets = {{"syn_a"}, {"no_such_expert"}};
  EXPECT_THROW(run_ablation(cfg, synthetic_resolver()), Error);
  EXPECT_FALSE(fs::exists(dir / "runs"));
}

TEST(Experiment, SeedsMustBeDistinct) {
  TempDir dir("bench_seeds");
  auto cfg = small_experiment(dir.path());
  cfg.seeds = {3, 3};
  EXPECT_THROW(run_benchmark(cfg, synthetic_resolver()), Error);
  cfg.seeds.clear();
  EXPECT_THROW(run_benchmark(cfg, synthetic_resolver()), Error);
}

TEST(Experiment, AblationNeedsSubsets) {
  TempDir dir("bench_nosub");
  EXPECT_THROW(run_ablation(small_experiment(dir.path()), synthetic_resolver()), Error);
}

TEST(Experiment, UnknownDatasetWithoutRoots) {
  TempDir dir("bench_noroot");
  auto cfg = small_experiment(dir.path());
  cfg.dataset = "clotho";
  cfg.experts = {"vggish"};
  RunSpec spec{"clotho", Arch::ce, {"vggish"}, 0, 1.0, {}, cfg.overrides};
  RunEnv env{synthetic_resolver(), dir.path(), false, {}};
  EXPECT_THROW(execute_run(spec, env), Error);
}

// ---------------------------------------------------------------------------
// Run identity

TEST(RunSpec, HashCoversEveryField) {
  RunSpec base{"synthetic", Arch::ce, {"syn_a", "syn_b"}, 0, 1.0, {}, {}};
  std::set<std::string> hashes{base.hash()};
  auto vary = [&](auto&& edit) {
    RunSpec s = base;
    edit(s);
    EXPECT_TRUE(hashes.insert(s.hash()).second);
  };
  vary([](RunSpec& s) { s.dataset = "synthetic-b"; });
  vary([](RunSpec& s) { s.arch = Arch::moee; });
  vary([](RunSpec& s) { s.experts = {"syn_a"}; });
  vary([](RunSpec& s) { s.seed = 1; });
  vary([](RunSpec& s) { s.fraction = 0.5; });
  vary([](RunSpec& s) { s.source_dataset = "synthetic-b"; });
  vary([](RunSpec& s) { s.overrides.set("train.epochs", 3); });

  RunSpec upper = base;
  upper.experts = {"SYN_A", "Syn_B"};
  EXPECT_EQ(upper.hash(), base.hash());
  EXPECT_EQ(base.hash(), RunSpec(base).hash());
}

// ---------------------------------------------------------------------------
// Benchmark

TEST(Benchmark, RowsCachingAndArtifacts) {
  TempDir dir("bench_run");
  const auto cfg = small_experiment(dir.path());
  std::vector<std::string> log;
  const auto first = run_benchmark(cfg, synthetic_resolver(), [&](const std::string& m) { log.push_back(m); });
  ASSERT_EQ(first.rows.size(), 1u);
  const auto& row = first.rows[0];
  ASSERT_EQ(row.runs.size(), 2u);
  EXPECT_EQ(row.t2a.runs, 2);
  for (const auto& r : row.runs) {
    EXPECT_FALSE(r.cached);
    EXPECT_EQ(r.t2a.pool_size, 32);  // 10% of 320
    EXPECT_EQ(r.train_samples, 256);
    for (const char* f : {"metrics.csv", "run.txt", "train.log", "buckets.csv", "checkpoint.arc"}) {
      EXPECT_TRUE(fs::exists(dir / "runs" / r.hash / f)) << f;
    }
  }
  EXPECT_NE(row.runs[0].hash, row.runs[1].hash);
  EXPECT_TRUE(fs::exists(dir / "benchmark.csv"));
  EXPECT_TRUE(fs::exists(dir / "benchmark.txt"));
  EXPECT_FALSE(log.empty());

  // Every cell is the seed aggregate of the stored per-run reports.
  const std::vector<MetricsReport> reports{row.runs[0].t2a, row.runs[1].t2a};
  const auto agg = aggregate_seeds(reports);
  for (auto col : kMetricColumns) {
    EXPECT_EQ(row.t2a.get(col).mean, agg.get(col).mean);
    EXPECT_EQ(row.t2a.get(col).std, agg.get(col).std);
  }

  const auto second = run_benchmark(cfg, synthetic_resolver());
  for (const auto& r : second.rows[0].runs) EXPECT_TRUE(r.cached);
  expect_same_row(first.rows[0], second.rows[0]);
  EXPECT_EQ(first.to_csv(), second.to_csv());
}

TEST(Benchmark, ReproducibleInFreshDirectory) {
  TempDir a("bench_repro_a"), b("bench_repro_b");
  const auto ta = run_benchmark(small_experiment(a.path()), synthetic_resolver());
  const auto tb = run_benchmark(small_experiment(b.path()), synthetic_resolver());
  expect_same_row(ta.rows[0], tb.rows[0]);
  EXPECT_EQ(ta.to_csv(), tb.to_csv());
  EXPECT_EQ(ta.to_text(), tb.to_text());
}

TEST(Benchmark, TableRebuiltFromArtifacts) {
  TempDir dir("bench_artifacts");
  const auto cfg = small_experiment(dir.path());
  const auto table = run_benchmark(cfg, synthetic_resolver());
  const auto row = row_from_artifacts(dir.path(), table.rows[0].label, detail::seed_specs(cfg, cfg.dataset, cfg.experts));
  expect_same_row(table.rows[0], row);
  EXPECT_EQ(row.train_samples, table.rows[0].train_samples);

  auto other = cfg;
  other.seeds = {7};
  EXPECT_THROW(row_from_artifacts(dir.path(), "x", detail::seed_specs(other, other.dataset, other.experts)), NotFound);
}

TEST(Ablation, SingleSubsetMatchesBenchmark) {
  TempDir dir("bench_ablate");
  auto cfg = small_experiment(dir.path());
  const auto bench = run_benchmark(cfg, synthetic_resolver());
  cfg.subsets = {cfg.experts};
  const auto abl = run_ablation(cfg, synthetic_resolver());
  ASSERT_EQ(abl.rows.size(), 1u);
  EXPECT_EQ(abl.rows[0].label, "syn_a + syn_b");
  expect_same_row(bench.rows[0], abl.rows[0]);
}

TEST(Ablation, RowsFollowConfiguredOrder) {
  TempDir dir("bench_ablate_order");
  auto cfg = small_experiment(dir.path());
  cfg.seeds = {0};
  cfg.subsets = {{"syn_b"}, {"syn_a"}, {"syn_a", "syn_b"}};
  const auto abl = run_ablation(cfg, synthetic_resolver());
  ASSERT_EQ(abl.rows.size(), 3u);
  EXPECT_EQ(abl.rows[0].label, "syn_b");
  EXPECT_EQ(abl.rows[1].label, "syn_a");
  EXPECT_EQ(abl.rows[2].label, "syn_a + syn_b");
  EXPECT_TRUE(fs::exists(dir / "ablation.csv"));
}

// ---------------------------------------------------------------------------
// Scale study

TEST(ScaleStudy, SubsamplesAreNestedFloors) {
  SyntheticSpec s;
  s.samples = 203;
  const auto syn = make_synthetic(s);
  const auto n = syn.corpus.count(Split::train);
  ASSERT_EQ(n, 203u);
  std::vector<std::set<std::string>> kept;
  for (double f : {0.125, 0.25, 0.5, 1.0}) {
    int count = 0;
    const auto sub = detail::subsample_train(syn.corpus, f, 4, &count);
    EXPECT_EQ(count, static_cast<int>(std::floor(f * static_cast<double>(n))));
    EXPECT_EQ(sub.count(Split::train), static_cast<std::size_t>(count));
    EXPECT_EQ(sub.samples.size(), syn.corpus.samples.size());
    const auto ids = sub.split_ids(Split::train);
    kept.emplace_back(ids.begin(), ids.end());
  }
  for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
    EXPECT_TRUE(std::includes(kept[i + 1].begin(), kept[i + 1].end(), kept[i].begin(), kept[i].end()));
  }
  // Fraction 1 keeps the corpus as is.
  const auto full = detail::subsample_train(syn.corpus, 1.0, 4);
  EXPECT_EQ(full.split_ids(Split::train), syn.corpus.split_ids(Split::train));

  EXPECT_THROW(detail::subsample_train(syn.corpus, 0.0, 4), Error);
  EXPECT_THROW(detail::subsample_train(syn.corpus, 1.5, 4), Error);
  EXPECT_THROW(detail::subsample_train(syn.corpus, 0.001, 4), Error);
}

TEST(ScaleStudy, RowsAndFullFractionMatchesBenchmark) {
  TempDir dir("bench_scale");
  const auto cfg = small_experiment(dir.path());
  const auto bench = run_benchmark(cfg, synthetic_resolver());
  const auto scale = run_scale_study({0.25, 0.5, 1.0}, cfg, synthetic_resolver());
  ASSERT_EQ(scale.rows.size(), 3u);
  EXPECT_EQ(scale.rows[0].label, "25%");
  EXPECT_EQ(scale.rows[1].label, "50%");
  EXPECT_EQ(scale.rows[2].label, "100%");
  EXPECT_EQ(scale.rows[0].train_samples, 64);
  EXPECT_EQ(scale.rows[1].train_samples, 128);
  EXPECT_EQ(scale.rows[2].train_samples, 256);
  expect_same_row(bench.rows[0], scale.rows[2]);
  EXPECT_TRUE(fs::exists(dir / "scale.csv"));
}

TEST(ScaleStudy, RejectsBadFractions) {
  TempDir dir("bench_scale_bad");
  const auto cfg = small_experiment(dir.path());
  EXPECT_THROW(run_scale_study({}, cfg, synthetic_resolver()), Error);
  EXPECT_THROW(run_scale_study({0.5, 0.0}, cfg, synthetic_resolver()), Error);
  EXPECT_THROW(run_scale_study({1.01}, cfg, synthetic_resolver()), Error);
  EXPECT_FALSE(fs::exists(dir / "runs"));
}

// ---------------------------------------------------------------------------
// Transfer

TEST(Transfer, RowsAndDegeneratePairWarning) {
  TempDir dir("bench_transfer");
  auto cfg = small_experiment(dir.path());
  cfg.seeds = {0};
  const auto table = run_transfer("synthetic", "synthetic", cfg, synthetic_resolver());
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[0].label, "None");
  EXPECT_EQ(table.rows[1].label, "synthetic");
  const auto& pre = table.rows[1].runs[0];
  EXPECT_NE(pre.hash, table.rows[0].runs[0].hash);
  ASSERT_FALSE(pre.warnings.empty());
  EXPECT_NE(pre.warnings[0].find("longer training"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "runs" / pre.hash / "pretrain.log"));
  EXPECT_TRUE(fs::exists(dir / "transfer.csv"));

  // The scratch row is the plain benchmark run.
  const auto bench = run_benchmark(cfg, synthetic_resolver());
  EXPECT_TRUE(bench.rows[0].runs[0].cached);
  expect_same_row(bench.rows[0], table.rows[0]);
}

TEST(Transfer, ZeroFinetuneEpochsEvaluatesPretrainedModel) {
  TempDir dir("bench_zeroshot");
  auto cfg = small_experiment(dir.path());
  cfg.seeds = {0};
  cfg.overrides.set("finetune.epochs", 0);
  const auto table = run_transfer("synthetic-b", "synthetic", cfg, synthetic_resolver());
  const auto& run = table.rows[1].runs[0];

  // Pretrain separately with the same settings, then evaluate on the target test split.
  const auto resolve = synthetic_resolver();
  const auto src = resolve("synthetic-b");
  const auto tgt = resolve("synthetic");
  RunSpec pre{"synthetic-b", Arch::ce, cfg.experts, 0, 1.0, {}, cfg.overrides};
  const auto ck = train(detail::model_for(src, pre), TrainData{src.corpus, *src.features, *src.text},
                        detail::train_for(src, pre, cfg.overrides), loss_from_config(cfg.overrides, Arch::ce));
  const auto res = evaluate_split(*ck.model, TrainData{tgt.corpus, *tgt.features, *tgt.text}, Split::test,
                                  ck.train.caps, ck.train.allow_missing_experts, ck.train.eval_chunk);
  expect_same_report(run.t2a, res.t2a);
  expect_same_report(run.a2t, res.a2t);
}

// ---------------------------------------------------------------------------
// Search

struct SearchFixture {
  SyntheticCorpus data;
  WordTableText text;
  Checkpoint ck;

  SearchFixture()
      : data(make_synthetic([] {
          SyntheticSpec s;
          s.samples = 64;
          return s;
        }())),
        text(data.words) {
    auto cfg = TrainConfig::defaults(Arch::ce);
    cfg.epochs = 60;
    cfg.selection_split = Split::train;
    cfg.caps.words = 16;
    cfg.caps.default_frames = 16;
    ck = train(synthetic_model(data, Arch::ce), TrainData{data.corpus, data.features, text}, cfg, LossConfig{0.2, 32});
  }
};

const SearchFixture& search_fixture() {
  static const SearchFixture f;
  return f;
}

TEST(Search, FullRankingIsPermutationOfPool) {
  const auto& f = search_fixture();
  SearchSession session(f.ck, f.data.corpus, Split::train, f.data.features, f.text);
  const auto& pool = session.pool();
  ASSERT_EQ(pool.size(), 64u);
  EXPECT_TRUE(std::is_sorted(pool.begin(), pool.end()));
  const auto hits = session.query(f.data.corpus.captions[3].text, static_cast<int>(pool.size()));
  ASSERT_EQ(hits.size(), pool.size());
  std::vector<std::string> ids;
  for (const auto& h : hits) ids.push_back(h.sample_id);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(ids, pool);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_GE(hits[i - 1].score, hits[i].score);

  const auto top3 = session.query(f.data.corpus.captions[3].text, 3);
  ASSERT_EQ(top3.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(top3[i].sample_id, hits[i].sample_id);
  EXPECT_EQ(session.query("anything", 1000).size(), pool.size());
}

TEST(Search, RepeatedQueryIsIdentical) {
  const auto& f = search_fixture();
  SearchSession session(f.ck, f.data.corpus, Split::train, f.data.features, f.text);
  const std::string q = f.data.corpus.captions[10].text;
  const auto a = session.query(q, 10), b = session.query(q, 10);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].sample_id, b[i].sample_id);
    EXPECT_EQ(a[i].score, b[i].score);
  }
  SearchSession other(f.ck, f.data.corpus, Split::train, f.data.features, f.text);
  const auto c = other.query(q, 10);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].score, c[i].score);
}

TEST(Search, OrderAgreesWithEvaluationRanking) {
  const auto& f = search_fixture();
  SearchSession session(f.ck, f.data.corpus, Split::train, f.data.features, f.text);
  const std::string q = f.data.corpus.captions[0].text;
  const auto s = session.scores(q);
  const auto order = rank_order(s);
  const auto hits = session.query(q, static_cast<int>(s.size()));
  for (std::size_t i = 0; i < hits.size(); ++i) {
    EXPECT_EQ(hits[i].sample_id, session.pool()[static_cast<std::size_t>(order[i])]);
    EXPECT_EQ(hits[i].score, s[static_cast<std::size_t>(order[i])]);
  }
  // rank_of_target of each item equals its position in the returned list.
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const int target = order[i];
    EXPECT_EQ(rank_of_target(s, std::span<const int>(&target, 1)), static_cast<int>(i) + 1);
  }

  // Scores agree with the evaluation similarity row for the same caption.
  const auto ev = evaluate_split(*f.ck.model, TrainData{f.data.corpus, f.data.features, f.text}, Split::train,
                                 f.ck.train.caps, f.ck.train.allow_missing_experts, f.ck.train.eval_chunk);
  ASSERT_EQ(ev.pool.sample_ids, session.pool());
  ASSERT_EQ(ev.pool.caption_texts[0], q);
  for (std::size_t j = 0; j < s.size(); ++j) EXPECT_NEAR(ev.similarity(0, static_cast<Eigen::Index>(j)), s[j], 1e-12);
}

TEST(Search, TrainingCaptionFindsItsAudio) {
  const auto& f = search_fixture();
  SearchSession session(f.ck, f.data.corpus, Split::train, f.data.features, f.text);
  int top1 = 0;
  for (const auto& c : f.data.corpus.captions) {
    if (session.query(c.text, 1)[0].sample_id == c.sample_id) ++top1;
  }
  const int n = static_cast<int>(f.data.corpus.captions.size());
  EXPECT_GE(top1, n - n / 20) << top1 << " of " << n << " captions retrieve their audio first";
}

TEST(Search, Errors) {
  const auto& f = search_fixture();
  SearchSession session(f.ck, f.data.corpus, Split::train, f.data.features, f.text);
  try {
    session.query("   ", 3);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("empty query"), std::string::npos);
  }
  try {
    session.query("a query", 0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("top_k must be at least 1"), std::string::npos);
  }
  EXPECT_THROW(SearchSession(f.ck, f.data.corpus, Split::test, f.data.features, f.text), Error);
}

TEST(Search, FromStoredCheckpoint) {
  TempDir dir("bench_search");
  const auto& f = search_fixture();
  f.ck.save(dir / "ck.arc");
  const auto loaded = Checkpoint::load(dir / "ck.arc");
  SearchSession a(f.ck, f.data.corpus, Split::train, f.data.features, f.text);
  SearchSession b(loaded, f.data.corpus, Split::train, f.data.features, f.text);
  const std::string q = f.data.corpus.captions[5].text;
  const auto x = a.query(q, 5), y = b.query(q, 5);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].sample_id, y[i].sample_id);
    EXPECT_NEAR(x[i].score, y[i].score, 1e-5);
  }
}

}  // namespace
