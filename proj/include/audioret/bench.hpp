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

// Experiment orchestration: benchmark, ablation, transfer and scale-study runs
// over several seeds, with content-addressed run artifacts, result tables and
// an interactive search session over a trained checkpoint.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "audioret/config.hpp"
#include "audioret/corpus.hpp"
#include "audioret/error.hpp"
#include "audioret/evaluation.hpp"
#include "audioret/experts.hpp"
#include "audioret/io.hpp"
#include "audioret/models.hpp"
#include "audioret/synthetic.hpp"
#include "audioret/text.hpp"
#include "audioret/training.hpp"

namespace audioret {

// ---------------------------------------------------------------------------
// Datasets

/// Everything a run needs for one named dataset.
struct DatasetBundle {
  Corpus corpus;
  std::shared_ptr<const FeatureSource> features;
  std::shared_ptr<const TextProvider> text;
  ExpertRegistry registry;
  std::optional<ModelConfig> model_defaults;  // sizes to start from, if the dataset suggests any
};

using DatasetResolver = std::function<DatasetBundle(const std::string& name)>;

/// Registers `experts.<name>.dim` / `experts.<name>.kind` entries from a config.
inline void register_experts(ExpertRegistry& registry, const Config& cfg) {
  std::set<std::string> names;
  const Config experts_keys = cfg.section("experts");
  for (const auto& [k, v] : experts_keys.entries()) names.insert(text::split(k, '.').front());
  for (const auto& n : names) {
    if (!cfg.has("experts." + n + ".dim")) continue;
    ExpertInfo e;
    e.name = n;
    e.dim = static_cast<int>(cfg.get_int("experts." + n + ".dim", 0));
    e.kind = cfg.get_string("experts." + n + ".kind", "audio") == "visual" ? ExpertKind::visual : ExpertKind::audio;
    registry.add(e);
  }
}

inline std::shared_ptr<const TextProvider> text_provider_from_config(const Config& cfg, const Corpus* corpus) {
  const std::string kind = cfg.get_string("text.provider", "word_table");
  if (kind == "word_table") {
    const fs::path path = cfg.require_string("text.word_table");
    std::unordered_set<std::string> vocab;
    if (corpus) {
      for (const auto& c : corpus->captions) {
        for (auto& t : tokenize(c.text)) vocab.insert(std::move(t));
      }
    }
    return std::make_shared<WordTableText>(WordTable::load(path, corpus ? &vocab : nullptr));
  }
  const int dim = static_cast<int>(cfg.get_int("text.dim", 768));
  if (kind == "tokens") return std::make_shared<PrecomputedTokenText>(cfg.require_string("text.tokens_dir"), dim);
  if (kind == "command") return std::make_shared<CommandText>(cfg.require_string("text.command"), dim);
  fail("unknown text provider '", kind, "' (expected word_table, tokens or command)");
}

/// Resolves dataset names against on-disk roots:
///   <data_root>/<name>/...        corpus files (see load_benchmark)
///   <features_root>/<name>/...    feature store
/// Names starting with "synthetic" generate an in-memory corpus instead
/// ("synthetic", "synthetic-b" share word vectors and expert projections).
inline DatasetResolver filesystem_resolver(fs::path data_root, fs::path features_root, Config cfg) {
  return [=](const std::string& name) {
    DatasetBundle b;
    register_experts(b.registry, cfg);
    if (name.rfind("synthetic", 0) == 0) {
      SyntheticSpec spec;
      spec.name = name;
      spec.samples = static_cast<int>(cfg.get_int("synthetic.samples", 320));
      spec.val_fraction = cfg.get_double("synthetic.val_fraction", 0.1);
      spec.test_fraction = cfg.get_double("synthetic.test_fraction", 0.1);
      spec.captions_per_sample = static_cast<int>(cfg.get_int("synthetic.captions_per_sample", 1));
      spec.noise = cfg.get_double("synthetic.noise", spec.noise);
      spec.seed = text::fnv1a(name);
      spec.id_prefix = name + "-";
      auto syn = make_synthetic(spec);
      for (const auto& e : syn.experts) b.registry.add(e);
      b.model_defaults = synthetic_model(syn, Arch::ce);
      b.corpus = std::move(syn.corpus);
      b.features = std::make_shared<InMemoryFeatures>(std::move(syn.features));
      b.text = std::make_shared<WordTableText>(std::move(syn.words));
      return b;
    }
    require<NotFound>(!data_root.empty(), "no data root configured for dataset '", name, "'");
    require<NotFound>(!features_root.empty(), "no feature root configured for dataset '", name, "'");
    b.corpus = load_benchmark(name, data_root);
    b.features = std::make_shared<FeatureStore>(FeatureStore::open(features_root / name, b.registry));
    b.text = text_provider_from_config(cfg, &b.corpus);
    return b;
  };
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  std::string dataset;
  Arch arch = Arch::ce;
  std::vector<std::string> experts{"vggish", "vggsound"};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  Config overrides;  // train.*, loss.*, model.*, caps.*, finetune.* keys
  fs::path out_dir = "runs";
  std::vector<std::vector<std::string>> subsets;  // ablation
  std::vector<double> fractions{0.125, 0.25, 0.5, 1.0};
  std::string source_dataset;  // transfer
  bool keep_checkpoints = true;

  void validate(const ExpertRegistry& registry) const {
    require(!dataset.empty(), "experiment needs a dataset");
    require(!seeds.empty(), "experiment needs at least one seed");
    require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
    check_experts(experts, registry);
    for (const auto& s : subsets) check_experts(s, registry);
  }

  static void check_experts(const std::vector<std::string>& list, const ExpertRegistry& registry) {
    require(!list.empty(), "expert list must not be empty");
    std::set<std::string> seen;
    for (const auto& e : list) {
      registry.at(e);
      require(seen.insert(text::lower(e)).second, "expert '", e, "' listed twice");
    }
  }

  /// Reads `experiment.*` keys; everything else is kept as overrides.
  static ExperimentConfig from_config(const Config& c) {
    ExperimentConfig x;
    x.dataset = c.get_string("experiment.dataset", "");
    x.arch = parse_arch(c.get_string("experiment.arch", "ce"));
    if (c.has("experiment.experts")) x.experts = c.get_list("experiment.experts");
    if (c.has("experiment.seeds")) {
      x.seeds.clear();
      for (const auto& s : c.get_list("experiment.seeds")) {
        x.seeds.push_back(static_cast<std::uint64_t>(text::to_int(s, "seed")));
      }
    }
    x.out_dir = c.get_string("experiment.out", x.out_dir.string());
    for (const auto& s : text::split(c.get_string("experiment.subsets", ""), ';')) {
      auto list = text::split_list(s);
      if (!list.empty()) x.subsets.push_back(std::move(list));
    }
    if (c.has("experiment.fractions")) {
      x.fractions.clear();
      for (const auto& f : c.get_list("experiment.fractions")) x.fractions.push_back(text::to_double(f, "fraction"));
    }
    x.source_dataset = c.get_string("experiment.source", "");
    x.keep_checkpoints = c.get_bool("experiment.keep_checkpoints", x.keep_checkpoints);
    for (const auto& [k, v] : c.entries()) {
      if (k.rfind("experiment.", 0) != 0) x.overrides.set(k, v);
    }
    return x;
  }
};

// ---------------------------------------------------------------------------
// Runs and artifacts

struct RunSpec {
  std::string dataset;
  Arch arch = Arch::ce;
  std::vector<std::string> experts;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  std::string source_dataset;  // non-empty for pretrain -> finetune runs
  Config overrides;

  /// Canonical description; its hash names the artifact directory.
  Config identity() const {
    Config c = overrides;
    c.set("run.dataset", dataset);
    c.set("run.arch", std::string(to_string(arch)));
    std::vector<std::string> lowered;
    for (const auto& e : experts) lowered.push_back(text::lower(e));
    c.set("run.experts", text::join(lowered, ","));
    c.set("run.seed", seed);
    if (fraction != 1.0) c.set("run.fraction", fraction);
    if (!source_dataset.empty()) c.set("run.source", source_dataset);
    return c;
  }

  std::string hash() const { return identity().hash(); }
};

struct RunRecord {
  RunSpec spec;
  std::string hash;
  MetricsReport t2a;
  MetricsReport a2t;
  double selection_score = 0.0;
  int train_samples = 0;
  bool cached = false;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_metrics(const fs::path& path, const MetricsReport& t2a, const MetricsReport& a2t) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& [d, r] : {std::pair{Direction::t2a, &t2a}, std::pair{Direction::a2t, &a2t}}) {
    out += std::string(to_string(d)) + "," + std::to_string(r->pool_size) + "," + std::to_string(r->num_queries);
    for (auto col : kMetricColumns) out += "," + exact(r->get(col));
    out += "\n";
  }
  io::write_text_atomic(path, out);
}

inline std::pair<MetricsReport, MetricsReport> read_metrics(const fs::path& path) {
  const auto lines = io::read_lines(path);
  require<IoError>(lines.size() >= 3 && lines[0] == metrics_csv_header(), "malformed metrics file ", path.string());
  MetricsReport out[2];
  for (int i = 0; i < 2; ++i) {
    const auto f = text::split(lines[static_cast<std::size_t>(i + 1)], ',');
    require<IoError>(f.size() == 9, "malformed metrics row in ", path.string());
    auto& r = out[i];
    r.pool_size = static_cast<int>(text::to_int(f[1], "pool size"));
    r.num_queries = static_cast<int>(text::to_int(f[2], "queries"));
    r.r1 = text::to_double(f[3], "R@1");
    r.r5 = text::to_double(f[4], "R@5");
    r.r10 = text::to_double(f[5], "R@10");
    r.r50 = text::to_double(f[6], "R@50");
    r.medr = text::to_double(f[7], "medR");
    r.meanr = text::to_double(f[8], "meanR");
  }
  return {out[0], out[1]};
}

inline ModelConfig model_for(const DatasetBundle& b, const RunSpec& spec) {
  ModelConfig m = b.model_defaults.value_or(ModelConfig{});
  m.arch = spec.arch;
  m.experts.clear();
  for (const auto& e : spec.experts) m.experts.push_back(b.registry.at(e));
  m.text_dim = b.text->dim();
  Config keys = m.to_config();
  const Config model_keys = spec.overrides.section("model");
  for (const auto& [k, v] : model_keys.entries()) keys.set("model." + k, v);
  keys.set("model.experts", m.to_config().require_string("model.experts"));
  keys.set("model.expert_dims", m.to_config().require_string("model.expert_dims"));
  keys.set("model.expert_kinds", m.to_config().require_string("model.expert_kinds"));
  keys.set("model.arch", std::string(to_string(spec.arch)));
  keys.set("model.text_dim", m.text_dim);
  return ModelConfig::from_config(keys, b.registry);
}

inline TrainConfig train_for(const DatasetBundle& b, const RunSpec& spec, const Config& overrides) {
  Config c = overrides;
  c.set("train.arch", std::string(to_string(spec.arch)));
  TrainConfig t = TrainConfig::from_config(c, b.corpus.name);
  t.seed = spec.seed;
  return t;
}

/// Corpus whose training split keeps the first floor(fraction * N) ids of a
/// seeded permutation of the sorted training ids; smaller fractions are
/// therefore subsets of larger ones. Dropped samples become unassigned.
inline Corpus subsample_train(const Corpus& corpus, double fraction, std::uint64_t seed, int* kept = nullptr) {
  require(fraction > 0.0 && fraction <= 1.0, "training fraction must be in (0, 1], got ", fraction);
  auto ids = corpus.split_ids(Split::train);
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ids.size()) + 1e-9));
  if (kept) *kept = static_cast<int>(n);
  if (fraction == 1.0) return corpus;
  require(n >= 1, "fraction ", fraction, " leaves no training samples");
  std::sort(ids.begin(), ids.end());
  Rng rng(mix_seed(seed, 0x5ca1eULL));
  rng.shuffle(ids);
  std::unordered_set<std::string> keep(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  Corpus out = corpus;
  for (auto& s : out.samples) {
    if (s.split == Split::train && !keep.count(s.sample_id)) s.split = Split::unassigned;
  }
  return out;
}

inline void check_store_has(const DatasetBundle& b, const std::vector<std::string>& experts) {
  const auto ids = b.corpus.split_ids(Split::train);
  require(!ids.empty(), "dataset ", b.corpus.name, " has no training samples");
  for (const auto& e : experts) {
    require<NotFound>(b.features->contains(ids.front(), e), "expert '", e, "' missing from the feature store of ",
                      b.corpus.name);
  }
}

}  // namespace detail

struct RunEnv {
  DatasetResolver resolve;
  fs::path out_dir;
  bool keep_checkpoints = true;
  std::function<void(const std::string&)> progress;

  void say(const std::string& msg) const {
    if (progress) progress(msg);
  }
};

/// Trains (and for transfer runs, pretrains then finetunes), evaluates on the
/// test split and stores artifacts under <out>/runs/<hash>/. An existing
/// complete artifact directory for the same hash is reused.
inline RunRecord execute_run(const RunSpec& spec, const RunEnv& env) {
  RunRecord rec;
  rec.spec = spec;
  rec.hash = spec.hash();
  const fs::path dir = env.out_dir / "runs" / rec.hash;
  const fs::path metrics_path = dir / "metrics.csv";
  if (fs::exists(metrics_path)) {
    auto [t2a, a2t] = detail::read_metrics(metrics_path);
    rec.t2a = t2a;
    rec.a2t = a2t;
    rec.cached = true;
    const Config info = Config::load(dir / "run.txt");
    rec.selection_score = info.get_double("result.selection_score", 0.0);
    rec.train_samples = static_cast<int>(info.get_int("result.train_samples", 0));
    env.say("reusing " + rec.hash + " (" + spec.dataset + ", seed " + std::to_string(spec.seed) + ")");
    return rec;
  }

  try {
    const DatasetBundle target = env.resolve(spec.dataset);
    ExperimentConfig::check_experts(spec.experts, target.registry);
    detail::check_store_has(target, spec.experts);
    const ModelConfig mcfg = detail::model_for(target, spec);
    const Corpus corpus = detail::subsample_train(target.corpus, spec.fraction, spec.seed, &rec.train_samples);
    if (auto msg = canonical_count_mismatch(target.corpus)) rec.warnings.push_back(*msg);
    const TrainData data{corpus, *target.features, *target.text};
    const LossConfig loss = loss_from_config(spec.overrides, spec.arch);

    fs::create_directories(dir);
    std::ofstream log(dir / "train.log");
    TrainHooks hooks;
    hooks.log = &log;
    hooks.warn = [&](const std::string& w) { env.say("warning: " + w); };

    Checkpoint ck;
    if (spec.source_dataset.empty()) {
      env.say("training " + spec.dataset + " " + std::string(to_string(spec.arch)) + " seed " +
              std::to_string(spec.seed));
      ck = train(mcfg, data, detail::train_for(target, spec, spec.overrides), loss, hooks);
    } else {
      if (spec.source_dataset == spec.dataset) {
        rec.warnings.push_back("source and target are both " + spec.dataset + "; this amounts to longer training");
        env.say("warning: " + rec.warnings.back());
      }
      const DatasetBundle source = env.resolve(spec.source_dataset);
      detail::check_store_has(source, spec.experts);
      RunSpec pre = spec;
      pre.dataset = spec.source_dataset;
      pre.source_dataset.clear();
      const ModelConfig pre_cfg = detail::model_for(source, pre);
      const TrainData pre_data{source.corpus, *source.features, *source.text};
      env.say("pretraining on " + pre.dataset + " seed " + std::to_string(spec.seed));
      std::ofstream pre_log(dir / "pretrain.log");
      TrainHooks pre_hooks = hooks;
      pre_hooks.log = &pre_log;
      const Checkpoint pre_ck = train(pre_cfg, pre_data, detail::train_for(source, pre, spec.overrides),
                                      loss_from_config(spec.overrides, spec.arch), pre_hooks);
      // finetune.* keys override train.* for the second stage.
      Config ft = spec.overrides;
      const Config finetune_keys = spec.overrides.section("finetune");
      for (const auto& [k, v] : finetune_keys.entries()) {
        if (k == "epochs") ft.erase("train.steps");
        if (k == "steps") ft.erase("train.epochs");
        ft.set("train." + k, v);
      }
      env.say("finetuning on " + spec.dataset + " seed " + std::to_string(spec.seed));
      ck = finetune(pre_ck, mcfg, data, detail::train_for(target, spec, ft), loss, hooks);
    }
    for (const auto& w : ck.warnings) rec.warnings.push_back(w);

    const auto test = evaluate_split(*ck.model, data, Split::test, ck.train.caps, ck.train.allow_missing_experts,
                                     ck.train.eval_chunk);
    rec.t2a = test.t2a;
    rec.a2t = test.a2t;
    rec.selection_score = ck.selection_score;

    // Duration buckets of the test t2a queries.
    std::string buckets = "bucket,queries," + std::string("R@1,R@5,R@10,R@50,medR,meanR\n");
    for (const auto& b : bucket_metrics(corpus, test.pool, test.similarity, t2a_ground_truth(test.pool))) {
      buckets += b.label + "," + std::to_string(b.num_queries);
      for (auto col : kMetricColumns) buckets += "," + (b.metrics ? detail::exact(b.metrics->get(col)) : std::string());
      buckets += "\n";
    }
    io::write_text_atomic(dir / "buckets.csv", buckets);
    if (env.keep_checkpoints) ck.save(dir / "checkpoint.arc");

    Config info = spec.identity();
    info.set("result.selection_score", ck.selection_score);
    info.set("result.best_step", ck.history[ck.best].step);
    info.set("result.train_samples", rec.train_samples);
    for (std::size_t i = 0; i < rec.warnings.size(); ++i) info.set("result.warning." + std::to_string(i), rec.warnings[i]);
    io::write_text_atomic(dir / "run.txt", info.to_string());
    // Written last: its presence marks the artifact as complete.
    detail::write_metrics(metrics_path, rec.t2a, rec.a2t);
  } catch (const Error& e) {
    std::string context = "run " + rec.hash + " (" + spec.dataset + ", " + std::string(to_string(spec.arch)) +
                          ", experts " + text::join(spec.experts, "+") + ", seed " + std::to_string(spec.seed) + ")";
    throw Error(context + ": " + e.what());
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Result tables

struct ResultRow {
  std::string label;
  std::string dataset;
  std::string arch;
  std::vector<std::string> experts;
  double fraction = 1.0;
  int train_samples = 0;
  std::vector<RunRecord> runs;
  SeedAggregate t2a;
  SeedAggregate a2t;
};

struct ResultTable {
  std::string title;
  std::vector<ResultRow> rows;

  std::string to_csv() const {
    std::string out = "label,dataset,arch,experts,fraction,train_samples,runs,direction";
    for (auto col : kMetricColumns) out += "," + std::string(col) + "_mean," + std::string(col) + "_std";
    out += ",run_hashes\n";
    for (const auto& r : rows) {
      std::vector<std::string> hashes;
      for (const auto& run : r.runs) hashes.push_back(run.hash);
      for (const auto& [d, agg] : {std::pair{Direction::t2a, &r.t2a}, std::pair{Direction::a2t, &r.a2t}}) {
        out += r.label + "," + r.dataset + "," + r.arch + "," + text::join(r.experts, "+") + "," +
               detail::exact(r.fraction) + "," + std::to_string(r.train_samples) + "," + std::to_string(agg->runs) +
               "," + std::string(to_string(d));
        for (auto col : kMetricColumns) {
          out += "," + detail::exact(agg->get(col).mean) + "," + detail::exact(agg->get(col).std);
        }
        out += "," + text::join(hashes, ";") + "\n";
      }
    }
    return out;
  }

  /// Aligned text table: label, then t2a and a2t blocks of mean±std columns.
  std::string to_text() const {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head{"", "t2a"};
    for (std::size_t i = 1; i < std::size(kMetricColumns); ++i) head.push_back("");
    head.push_back("a2t");
    for (std::size_t i = 1; i < std::size(kMetricColumns); ++i) head.push_back("");
    cells.push_back(head);
    std::vector<std::string> cols{"Model"};
    for (int b = 0; b < 2; ++b) {
      for (auto col : kMetricColumns) cols.emplace_back(col);
    }
    cells.push_back(cols);
    for (const auto& r : rows) {
      std::vector<std::string> line{r.label};
      for (const auto* agg : {&r.t2a, &r.a2t}) {
        for (auto col : kMetricColumns) line.push_back(format_mean_std(agg->get(col)));
      }
      cells.push_back(line);
    }
    std::vector<std::size_t> width(cells[1].size(), 0);
    for (const auto& line : cells) {
      for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], display_width(line[i]));
    }
    std::string out = title.empty() ? "" : title + "\n";
    for (const auto& line : cells) {
      std::string row;
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (i) row += i == 1 || i == 1 + std::size(kMetricColumns) ? " | " : "  ";
        row += line[i] + std::string(width[i] - display_width(line[i]), ' ');
      }
      while (!row.empty() && row.back() == ' ') row.pop_back();
      out += row + "\n";
    }
    return out;
  }

  void write(const fs::path& dir, const std::string& stem) const {
    io::write_text_atomic(dir / (stem + ".csv"), to_csv());
    io::write_text_atomic(dir / (stem + ".txt"), to_text());
  }

 private:
  /// Code points, so that "±" counts as one column.
  static std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
  }
};

inline ResultRow make_row(std::string label, std::vector<RunRecord> runs) {
  require(!runs.empty(), "row '", label, "' has no runs");
  ResultRow row;
  row.label = std::move(label);
  row.dataset = runs.front().spec.dataset;
  row.arch = std::string(to_string(runs.front().spec.arch));
  row.experts = runs.front().spec.experts;
  row.fraction = runs.front().spec.fraction;
  row.train_samples = runs.front().train_samples;
  std::vector<MetricsReport> t2a, a2t;
  for (const auto& r : runs) {
    t2a.push_back(r.t2a);
    a2t.push_back(r.a2t);
  }
  row.t2a = summarize_runs(t2a);
  row.a2t = summarize_runs(a2t);
  row.runs = std::move(runs);
  return row;
}

/// Rebuilds a row from stored artifacts only (no training).
inline ResultRow row_from_artifacts(const fs::path& out_dir, std::string label, const std::vector<RunSpec>& specs) {
  std::vector<RunRecord> runs;
  for (const auto& spec : specs) {
    RunRecord r;
    r.spec = spec;
    r.hash = spec.hash();
    const fs::path dir = out_dir / "runs" / r.hash;
    require<NotFound>(fs::exists(dir / "metrics.csv"), "no stored artifacts for run ", r.hash);
    auto [t2a, a2t] = detail::read_metrics(dir / "metrics.csv");
    r.t2a = t2a;
    r.a2t = a2t;
    r.train_samples = static_cast<int>(Config::load(dir / "run.txt").get_int("result.train_samples", 0));
    r.cached = true;
    runs.push_back(std::move(r));
  }
  return make_row(std::move(label), std::move(runs));
}

// ---------------------------------------------------------------------------
// Studies

namespace detail {

inline std::vector<RunSpec> seed_specs(const ExperimentConfig& cfg, const std::string& dataset,
                                       const std::vector<std::string>& experts, double fraction = 1.0,
                                       const std::string& source = {}) {
  std::vector<RunSpec> specs;
  for (auto seed : cfg.seeds) specs.push_back({dataset, cfg.arch, experts, seed, fraction, source, cfg.overrides});
  return specs;
}

inline std::vector<RunRecord> run_all(const std::vector<RunSpec>& specs, const RunEnv& env) {
  std::vector<RunRecord> out;
  for (const auto& s : specs) out.push_back(execute_run(s, env));
  return out;
}

inline RunEnv env_for(const ExperimentConfig& cfg, DatasetResolver resolve,
                      std::function<void(const std::string&)> progress) {
  return RunEnv{std::move(resolve), cfg.out_dir, cfg.keep_checkpoints, std::move(progress)};
}

inline ExpertRegistry registry_for(const ExperimentConfig& cfg) {
  ExpertRegistry r;
  register_experts(r, cfg.overrides);
  return r;
}

inline void validate_for(const ExperimentConfig& cfg, const DatasetResolver& resolve) {
  // Synthetic datasets register their own experts; take them into account.
  ExpertRegistry r = registry_for(cfg);
  if (cfg.dataset.rfind("synthetic", 0) == 0) r = resolve(cfg.dataset).registry;
  cfg.validate(r);
}

}  // namespace detail

inline ResultTable run_benchmark(const ExperimentConfig& cfg, const DatasetResolver& resolve,
                                 std::function<void(const std::string&)> progress = {}) {
  detail::validate_for(cfg, resolve);
  const auto env = detail::env_for(cfg, resolve, progress);
  ResultTable table;
  table.title = "benchmark: " + cfg.dataset + " (" + std::string(to_string(cfg.arch)) + ", " +
                text::join(cfg.experts, "+") + ")";
  table.rows.push_back(
      make_row(std::string(to_string(cfg.arch)), detail::run_all(detail::seed_specs(cfg, cfg.dataset, cfg.experts), env)));
  table.write(cfg.out_dir, "benchmark");
  return table;
}

/// One benchmark per expert subset, in the configured order.
inline ResultTable run_ablation(const ExperimentConfig& cfg, const DatasetResolver& resolve,
                                std::function<void(const std::string&)> progress = {}) {
  require(!cfg.subsets.empty(), "ablation needs at least one expert subset");
  detail::validate_for(cfg, resolve);
  const auto env = detail::env_for(cfg, resolve, progress);
  ResultTable table;
  table.title = "ablation: " + cfg.dataset + " (" + std::string(to_string(cfg.arch)) + ")";
  for (const auto& subset : cfg.subsets) {
    table.rows.push_back(make_row(text::join(subset, " + "), detail::run_all(detail::seed_specs(cfg, cfg.dataset, subset), env)));
  }
  table.write(cfg.out_dir, "ablation");
  return table;
}

/// Rows: training from scratch on the target ("None") and pretraining on the
/// source followed by finetuning on the target.
inline ResultTable run_transfer(const std::string& source, const std::string& target, const ExperimentConfig& cfg,
                                const DatasetResolver& resolve, std::function<void(const std::string&)> progress = {}) {
  require(!source.empty() && !target.empty(), "transfer needs a source and a target dataset");
  ExperimentConfig c = cfg;
  c.dataset = target;
  detail::validate_for(c, resolve);
  const auto env = detail::env_for(c, resolve, progress);
  ResultTable table;
  table.title = "transfer: " + source + " -> " + target + " (" + std::string(to_string(c.arch)) + ")";
  table.rows.push_back(make_row("None", detail::run_all(detail::seed_specs(c, target, c.experts), env)));
  table.rows.push_back(make_row(source, detail::run_all(detail::seed_specs(c, target, c.experts, 1.0, source), env)));
  table.write(c.out_dir, "transfer");
  return table;
}

inline ResultTable run_scale_study(const std::vector<double>& fractions, const ExperimentConfig& cfg,
                                   const DatasetResolver& resolve,
                                   std::function<void(const std::string&)> progress = {}) {
  require(!fractions.empty(), "scale study needs at least one fraction");
  for (double f : fractions) require(f > 0.0 && f <= 1.0, "training fraction must be in (0, 1], got ", f);
  detail::validate_for(cfg, resolve);
  const auto env = detail::env_for(cfg, resolve, progress);
  ResultTable table;
  table.title = "scale: " + cfg.dataset + " (" + std::string(to_string(cfg.arch)) + ")";
  for (double f : fractions) {
    char label[32];
    std::snprintf(label, sizeof label, "%g%%", 100.0 * f);
    table.rows.push_back(make_row(label, detail::run_all(detail::seed_specs(cfg, cfg.dataset, cfg.experts, f), env)));
  }
  table.write(cfg.out_dir, "scale");
  return table;
}

// ---------------------------------------------------------------------------
// Search

struct SearchHit {
  std::string sample_id;
  double score = 0.0;
};

/// Embeds the audio pool once; each query only runs the text encoder.
class SearchSession {
 public:
  SearchSession(const Checkpoint& ckpt, const Corpus& corpus, Split split, const FeatureSource& features,
                const TextProvider& text)
      : ckpt_(ckpt), text_(text) {
    require(ckpt.model != nullptr, "checkpoint has no model");
    require(text.dim() == ckpt.model->config().text_dim, "text provider dim ", text.dim(),
            " does not match checkpoint text dim ", ckpt.model->config().text_dim);
    pool_ = corpus.split_ids(split);
    std::sort(pool_.begin(), pool_.end());
    require(!pool_.empty(), "split '", std::string(to_string(split)), "' of ", corpus.name, " is empty");
    audio_ = embed_audio(*ckpt.model, features, pool_, ckpt.train.caps, ckpt.train.allow_missing_experts,
                         ckpt.train.eval_chunk);
  }

  const std::vector<std::string>& pool() const { return pool_; }

  /// Scores of `query` against every pool item, in pool order.
  std::vector<double> scores(const std::string& query) const {
    require(!text::trim(query).empty(), "empty query");
    const auto s = score_texts(*ckpt_.model, text_, {"query"}, {query}, audio_, ckpt_.train.caps);
    return {s.data(), s.data() + s.size()};
  }

  std::vector<SearchHit> query(const std::string& query, int top_k) const {
    require(top_k >= 1, "top_k must be at least 1, got ", top_k);
    const auto s = scores(query);
    const auto order = rank_order(s);
    std::vector<SearchHit> hits;
    for (std::size_t i = 0; i < order.size() && static_cast<int>(i) < top_k; ++i) {
      hits.push_back({pool_[static_cast<std::size_t>(order[i])], s[static_cast<std::size_t>(order[i])]});
    }
    return hits;
  }

 private:
  const Checkpoint& ckpt_;
  const TextProvider& text_;
  std::vector<std::string> pool_;
  AudioSide audio_;
};

}  // namespace audioret
