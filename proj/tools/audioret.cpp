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

// audioret command-line tool.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "audioret/audioret.hpp"

namespace {

using namespace audioret;

std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

struct Common {
  std::string config;
  std::string dataset;
  std::string arch;
  std::string experts;
  std::string seeds;
  std::string out;
  std::string data_root = env_or("AUDIORET_DATA");
  std::string features_root = env_or("AUDIORET_FEATURES");
  std::vector<std::string> sets;

  void attach(CLI::App* app, bool experiment = true) {
    app->add_option("--config", config, "flat key=value config file");
    app->add_option("--dataset", dataset, "dataset name");
    app->add_option("--data-root", data_root, "corpus root (default: $AUDIORET_DATA)");
    app->add_option("--features", features_root, "feature-store root (default: $AUDIORET_FEATURES)");
    app->add_option("--set", sets, "extra config entry key=value (repeatable)");
    if (!experiment) return;
    app->add_option("--arch", arch, "moee, ce or mmt")->check(CLI::IsMember({"moee", "ce", "mmt"}));
    app->add_option("--experts", experts, "comma-separated expert list");
    app->add_option("--seeds", seeds, "comma-separated seeds (default 0,1,2)");
    app->add_option("--out", out, "output directory for runs and tables");
  }

  Config load() const {
    Config c;
    if (!config.empty()) c = Config::load(config);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      require(eq != std::string::npos, "--set expects key=value, got '", s, "'");
      c.set(std::string(text::trim(s.substr(0, eq))), std::string(text::trim(s.substr(eq + 1))));
    }
    if (!dataset.empty()) c.set("experiment.dataset", dataset);
    if (!arch.empty()) c.set("experiment.arch", arch);
    if (!experts.empty()) c.set("experiment.experts", experts);
    if (!seeds.empty()) c.set("experiment.seeds", seeds);
    if (!out.empty()) c.set("experiment.out", out);
    return c;
  }

  DatasetResolver resolver(const Config& c) const {
    return filesystem_resolver(c.get_string("paths.data", data_root), c.get_string("paths.features", features_root), c);
  }
};

void progress(const std::string& msg) { std::cerr << "[audioret] " << msg << '\n'; }

void print_table(const ResultTable& t, const ExperimentConfig& x) {
  std::cout << t.to_text();
  for (const auto& row : t.rows) {
    for (const auto& run : row.runs) {
      for (const auto& w : run.warnings) std::cerr << "warning (" << run.hash << "): " << w << '\n';
    }
  }
  std::cerr << "tables written to " << x.out_dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-audio retrieval benchmark toolkit"};
  app.require_subcommand(1);

  // build-sounddescs
  std::string index_path, desc_path, manifest_out = ".";
  std::uint64_t split_seed = 0;
  auto* build = app.add_subcommand("build-sounddescs", "build the SoundDescs corpus and its 70/15/15 split");
  build->add_option("--index", index_path, "index file: id<TAB>duration<TAB>tags")->required();
  build->add_option("--descriptions", desc_path, "descriptions file: id<TAB>text")->required();
  build->add_option("--out", manifest_out, "corpus root to write sounddescs/ into");
  build->add_option("--seed", split_seed, "split seed");

  // stats
  Common stats_opts;
  std::string stats_out;
  auto* stats = app.add_subcommand("stats", "corpus statistics and histograms");
  stats_opts.attach(stats, false);
  stats->add_option("--out", stats_out, "directory for histogram CSVs");

  Common bench_opts, ablate_opts, transfer_opts, scale_opts;
  auto* bench = app.add_subcommand("benchmark", "train and evaluate over seeds");
  bench_opts.attach(bench);

  std::string subsets;
  auto* ablate = app.add_subcommand("ablate", "one benchmark per expert subset");
  ablate_opts.attach(ablate);
  ablate->add_option("--subsets", subsets, "subsets separated by ';', experts by ','");

  std::string source;
  auto* transfer = app.add_subcommand("transfer", "pretrain on a source dataset, finetune on --dataset");
  transfer_opts.attach(transfer);
  transfer->add_option("--source", source, "pretraining dataset")->required();

  std::string fractions;
  auto* scale = app.add_subcommand("scale", "train on nested fractions of the training split");
  scale_opts.attach(scale);
  scale->add_option("--fractions", fractions, "comma-separated fractions in (0,1]");

  Common search_opts;
  std::string checkpoint, split_name = "test";
  std::vector<std::string> queries;
  int top_k = 10;
  auto* search = app.add_subcommand("search", "rank a split's audio for free-text queries");
  search_opts.attach(search, false);
  search->add_option("--checkpoint", checkpoint, "checkpoint archive")->required();
  search->add_option("--split", split_name, "pool split (train, val or test)");
  search->add_option("--query", queries, "query text (repeatable; stdin lines if omitted)");
  search->add_option("--top-k", top_k, "results per query")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      auto manifest = build_sounddescs_manifest(index_path, desc_path);
      SplitSpec spec;
      spec.seed = split_seed;
      const Corpus corpus = assign_splits(std::move(manifest.corpus), spec);
      save_benchmark(corpus, manifest_out);
      std::cout << "entries=" << manifest.report.entries << "\nkept=" << manifest.report.kept
                << "\ndropped=" << manifest.report.dropped << "\ntrain=" << corpus.count(Split::train)
                << "\nval=" << corpus.count(Split::val) << "\ntest=" << corpus.count(Split::test) << '\n';
    } else if (*stats) {
      const Config c = stats_opts.load();
      const std::string name = c.get_string("experiment.dataset", "");
      require(!name.empty(), "--dataset is required");
      Corpus corpus;
      if (name.rfind("synthetic", 0) == 0) {
        corpus = stats_opts.resolver(c)(name).corpus;
      } else {
        corpus = load_benchmark(name, c.get_string("paths.data", stats_opts.data_root));
      }
      const auto rep = corpus_stats(corpus);
      std::cout << rep.to_key_value();
      if (auto msg = canonical_count_mismatch(corpus)) std::cerr << "warning: " << *msg << '\n';
      if (!stats_out.empty()) {
        io::write_text_atomic(fs::path(stats_out) / (name + "_durations.csv"), rep.duration_histogram.to_csv());
        io::write_text_atomic(fs::path(stats_out) / (name + "_words.csv"), rep.words_histogram.to_csv());
        io::write_text_atomic(fs::path(stats_out) / (name + "_stats.txt"), rep.to_key_value());
      }
    } else if (*bench) {
      const Config c = bench_opts.load();
      const auto x = ExperimentConfig::from_config(c);
      print_table(run_benchmark(x, bench_opts.resolver(c), progress), x);
    } else if (*ablate) {
      Config c = ablate_opts.load();
      if (!subsets.empty()) c.set("experiment.subsets", subsets);
      const auto x = ExperimentConfig::from_config(c);
      print_table(run_ablation(x, ablate_opts.resolver(c), progress), x);
    } else if (*transfer) {
      const Config c = transfer_opts.load();
      const auto x = ExperimentConfig::from_config(c);
      print_table(run_transfer(source, x.dataset, x, transfer_opts.resolver(c), progress), x);
    } else if (*scale) {
      Config c = scale_opts.load();
      if (!fractions.empty()) c.set("experiment.fractions", fractions);
      const auto x = ExperimentConfig::from_config(c);
      print_table(run_scale_study(x.fractions, x, scale_opts.resolver(c), progress), x);
    } else if (*search) {
      const Config c = search_opts.load();
      const std::string name = c.get_string("experiment.dataset", "");
      require(!name.empty(), "--dataset is required");
      const Checkpoint ck = Checkpoint::load(checkpoint);
      const DatasetBundle b = search_opts.resolver(c)(name);
      const SearchSession session(ck, b.corpus, parse_split(split_name), *b.features, *b.text);
      if (queries.empty()) {
        for (std::string line; std::getline(std::cin, line);) {
          if (!text::trim(line).empty()) queries.push_back(line);
        }
      }
      for (const auto& q : queries) {
        std::cout << "query: " << q << '\n';
        int rank = 0;
        for (const auto& hit : session.query(q, top_k)) {
          std::cout << "  " << ++rank << '\t' << hit.sample_id << '\t' << format_number(hit.score, 4) << '\n';
        }
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
