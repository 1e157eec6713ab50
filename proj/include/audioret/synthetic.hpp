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

// Generated corpora with a known answer: each sample's audio frames are noisy
// linear images of its caption's word vectors, so identity retrieval is
// learnable. Used by the test suites and for smoke runs of the CLI.

#include <cstdio>
#include <string>
#include <vector>

#include "audioret/corpus.hpp"
#include "audioret/experts.hpp"
#include "audioret/models.hpp"
#include "audioret/random.hpp"

namespace audioret {

struct SyntheticSpec {
  int samples = 256;
  int captions_per_sample = 1;
  int vocab = 64;
  int word_dim = 32;
  int min_words = 4;
  int max_words = 7;
  std::vector<ExpertInfo> experts{{"syn_a", 6, ExpertKind::audio}, {"syn_b", 10, ExpertKind::audio}};
  double noise = 0.05;
  double val_fraction = 0.0;  // 0 puts every sample in train
  double test_fraction = 0.0;
  std::uint64_t seed = 1;             // captions, noise, splits
  std::uint64_t projection_seed = 7;  // word table and expert projections
  std::string name = "synthetic";
  std::string id_prefix = "s";
};

struct SyntheticCorpus {
  Corpus corpus;
  WordTable words;
  InMemoryFeatures features;
  std::vector<ExpertInfo> experts;
};

inline SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
  require(spec.samples >= 1 && spec.captions_per_sample >= 1 && spec.vocab >= 1 && spec.word_dim >= 1,
          "invalid synthetic corpus shape");
  require(spec.min_words >= 1 && spec.max_words >= spec.min_words, "invalid synthetic caption length");
  require(!spec.experts.empty(), "synthetic corpus needs at least one expert");

  Rng shared(spec.projection_seed);
  std::vector<std::string> vocab;
  FeatureMatrix vectors(spec.vocab, spec.word_dim);
  for (int v = 0; v < spec.vocab; ++v) {
    vocab.push_back("w" + std::to_string(v));
    for (int d = 0; d < spec.word_dim; ++d) vectors(v, d) = static_cast<float>(shared.normal());
  }
  std::vector<Eigen::MatrixXf> proj;
  for (const auto& e : spec.experts) {
    Eigen::MatrixXf a(e.dim, spec.word_dim);
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = static_cast<float>(shared.normal());
    }
    proj.push_back(a);
  }

  SyntheticCorpus out;
  out.words = WordTable(vocab, vectors);
  out.experts = spec.experts;
  out.corpus.name = spec.name;
  out.corpus.split_seed = spec.seed;

  Rng rng(spec.seed);
  const int n_val = static_cast<int>(spec.val_fraction * spec.samples);
  const int n_test = static_cast<int>(spec.test_fraction * spec.samples);
  const int n_train = spec.samples - n_val - n_test;
  require(n_train >= 1, "synthetic corpus has no training samples");
  for (int i = 0; i < spec.samples; ++i) {
    char id[48];
    std::snprintf(id, sizeof id, "%s%05d", spec.id_prefix.c_str(), i);
    SampleRecord rec;
    rec.sample_id = id;
    rec.duration = 1.0 + rng.uniform() * 200.0;
    rec.categories = {"synthetic"};
    rec.split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);

    const int len = spec.min_words + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_words - spec.min_words + 1)));
    std::vector<int> words;
    for (int t = 0; t < len; ++t) words.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab))));

    for (int c = 0; c < spec.captions_per_sample; ++c) {
      std::vector<int> order = words;
      if (c > 0) rng.shuffle(order);
      std::string caption;
      for (int w : order) caption += (caption.empty() ? "" : " ") + vocab[static_cast<std::size_t>(w)];
      out.corpus.captions.push_back({rec.sample_id + (c ? "#" + std::to_string(c) : std::string()), rec.sample_id, caption});
    }
    for (std::size_t e = 0; e < spec.experts.size(); ++e) {
      FeatureMatrix frames(len, spec.experts[e].dim);
      for (int t = 0; t < len; ++t) {
        const Eigen::VectorXf w = vectors.row(words[static_cast<std::size_t>(t)]).transpose();
        frames.row(t) = (proj[e] * w).transpose();
        for (Eigen::Index d = 0; d < frames.cols(); ++d) frames(t, d) += static_cast<float>(spec.noise * rng.normal());
      }
      out.features.put(rec.sample_id, spec.experts[e].name, std::move(frames));
    }
    out.corpus.samples.push_back(std::move(rec));
  }
  out.corpus.validate();
  return out;
}

/// Model configuration sized for a synthetic corpus.
inline ModelConfig synthetic_model(const SyntheticCorpus& data, Arch arch) {
  ModelConfig m;
  m.arch = arch;
  m.experts = data.experts;
  m.text_dim = data.words.dim();
  m.joint_dim = 64;
  m.text_clusters = 8;
  m.text_ghosts = 1;
  m.audio_clusters = 8;
  m.audio_ghosts = 0;
  m.ce_proj_dim = 16;
  m.mmt_layers = 1;
  m.mmt_heads = 2;
  m.mmt_width = 16;
  m.mmt_ff = 32;
  m.mmt_max_positions = 32;
  return m;
}

}  // namespace audioret
