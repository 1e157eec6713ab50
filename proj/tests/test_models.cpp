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
#include <numeric>

#include "support.hpp"

namespace {

using namespace audioret;
using namespace testing_support;

NetVladLayer make_vlad(ParamSet& params, Rng& rng, int dim, int k, int g) {
  return NetVladLayer::create(params, "v", dim, k, g, rng);
}

// ---------------------------------------------------------------------------
// NetVLAD

TEST(NetVlad, OutputDimensionIsClustersTimesDim) {
  Rng rng(1);
  ParamSet params;
  const auto layer = make_vlad(params, rng, 300, 20, 1);
  EXPECT_EQ(layer.output_dim(), 6000);
  EXPECT_EQ(params.at("v.centers")->value.rows(), 21);
  const auto out = netvlad_aggregate(single_row(random_frames(rng, 3, 300)), 0, layer);
  EXPECT_EQ(out.size(), 6000);
}

TEST(NetVlad, PermutationInvariantBitExact) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet params;
    const auto layer = make_vlad(params, rng, 6, 3, 1);
    const FeatureMatrix x = random_frames(rng, 7, 6);
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    FeatureMatrix y(7, 6);
    for (int t = 0; t < 7; ++t) y.row(t) = x.row(perm[static_cast<std::size_t>(t)]);
    const Vec a = netvlad_aggregate(single_row(x), 0, layer);
    const Vec b = netvlad_aggregate(single_row(y), 0, layer);
    EXPECT_TRUE((a.array() == b.array()).all());
  }
}

TEST(NetVlad, PaddingInvariantBitExact) {
  Rng rng(3);
  ParamSet params;
  const auto layer = make_vlad(params, rng, 5, 4, 0);
  const FeatureMatrix x = random_frames(rng, 4, 5);
  const Vec a = netvlad_aggregate(single_row(x), 0, layer);
  const Vec b = netvlad_aggregate(single_row(x, 11), 0, layer);
  EXPECT_TRUE((a.array() == b.array()).all());

  // Masked steps carrying garbage are ignored as well.
  FeatureMatrix noisy(6, 5);
  noisy.topRows(4) = x;
  noisy.bottomRows(2).setConstant(1e3f);
  auto batch = PaddedBatch::zeros(1, 6, 5);
  const std::vector<std::uint8_t> mask{1, 1, 1, 1, 0, 0};
  batch.set_row(0, noisy, mask);
  const Vec c = netvlad_aggregate(batch, 0, layer);
  EXPECT_TRUE((a.array() == c.array()).all());
}

TEST(NetVlad, FrameAtCenterGivesZeroVector) {
  ParamSet params;
  Rng rng(4);
  const auto layer = make_vlad(params, rng, 3, 1, 0);
  params.at("v.centers")->value = Mat(Eigen::RowVector3d(0.25, -0.5, 1.0));
  FeatureMatrix x(1, 3);
  x << 0.25f, -0.5f, 1.0f;
  const Vec out = netvlad_aggregate(single_row(x), 0, layer);
  EXPECT_TRUE((out.array() == 0.0).all());
}

TEST(NetVlad, UnitNormAndMatchesReference) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet params;
    const auto layer = make_vlad(params, rng, 4, 3, trial % 2);
    const FeatureMatrix x = random_frames(rng, 1 + trial % 5, 4);
    const Vec out = netvlad_aggregate(single_row(x), 0, layer);
    EXPECT_NEAR(out.norm(), 1.0, 1e-9);
    const Vec ref = oracle::netvlad(x.cast<double>(), oracle::Params{params.values()}, "v", 3);
    EXPECT_LT((out - ref).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(NetVlad, FullyMaskedInputIsAnError) {
  Rng rng(6);
  ParamSet params;
  const auto layer = make_vlad(params, rng, 3, 2, 0);
  const auto empty = PaddedBatch::zeros(1, 4, 3);
  EXPECT_THROW(netvlad_aggregate(empty, 0, layer), InvalidArgument);
}

TEST(NetVlad, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet params;
    const int dim = 2 + trial % 5;
    const auto layer = make_vlad(params, rng, dim, 2 + trial % 2, trial % 2);
    scramble(params, rng);
    const Mat x = random_matrix(rng, 1 + trial % 5, dim);
    const Mat w = random_matrix(rng, 1, layer.output_dim());
    EXPECT_LE(gradient_error(params, [&] { return probe(layer.forward(x), w); }), 1e-4) << "trial " << trial;
  }
}

// ---------------------------------------------------------------------------
// Gated embedding unit

TEST(GatedUnit, OutputIsUnitNorm) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    ParamSet params;
    const auto unit = GatedUnit::create(params, "g", 6, 4, rng);
    scramble(params, rng);
    const Vec y = gated_embed(random_matrix(rng, 6, 1), unit);
    EXPECT_NEAR(y.norm(), 1.0, 1e-6);
  }
}

TEST(GatedUnit, ZeroGateKeepsDirectionOfLinearMap) {
  Rng rng(9);
  ParamSet params;
  const auto unit = GatedUnit::create(params, "g", 5, 3, rng);
  params.at("g.b1")->value = random_matrix(rng, 1, 3);
  params.at("g.w2")->value.setZero();
  params.at("g.b2")->value.setZero();
  const Vec x = random_matrix(rng, 5, 1);
  const Vec y1 = params.at("g.w1")->value * x + params.at("g.b1")->value.transpose();
  const Vec y = gated_embed(x, unit);
  EXPECT_LT((y - y1.normalized()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GatedUnit, RejectsNonFiniteInput) {
  Rng rng(10);
  ParamSet params;
  const auto unit = GatedUnit::create(params, "g", 2, 2, rng);
  Vec x(2);
  x << 1.0, std::nan("");
  EXPECT_THROW(gated_embed(x, unit), InvalidArgument);
}

TEST(GatedUnit, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet params;
    const int in = 1 + trial % 8, out = 1 + (trial * 3) % 8;
    const auto unit = GatedUnit::create(params, "g", in, out, rng);
    scramble(params, rng);
    const Mat x = random_matrix(rng, 3, in);
    const Mat w = random_matrix(rng, 3, out);
    EXPECT_LE(gradient_error(params, [&] { return probe(unit.forward(ad::constant(x)), w); }), 1e-4)
        << "trial " << trial;
  }
}

// ---------------------------------------------------------------------------
// Collaborative gating

std::map<std::string, Vec> random_expert_vectors(const EmbeddingModel& m, Rng& rng) {
  std::map<std::string, Vec> v;
  for (std::size_t e = 0; e < m.config().experts.size(); ++e) {
    v[m.config().experts[e].name] = random_matrix(rng, m.audio_vlad()[e].output_dim(), 1);
  }
  return v;
}

TEST(CollaborativeGate, MasksLieStrictlyInsideUnitInterval) {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    auto m = random_model(Arch::ce, rng, 3);
    std::vector<ad::Var> inputs, masks;
    ad::Matrix presence = ad::Matrix::Ones(4, 3);
    for (std::size_t e = 0; e < 3; ++e) inputs.push_back(ad::constant(random_matrix(rng, 4, m.audio_vlad()[e].output_dim())));
    m.gate()->forward(inputs, presence, &masks);
    for (const auto& mask : masks) {
      EXPECT_GT(mask->value.minCoeff(), 0.0);
      EXPECT_LT(mask->value.maxCoeff(), 1.0);
    }
  }
}

TEST(CollaborativeGate, MatchesReferenceAllPairs) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_model(Arch::ce, rng, 3);
    const auto in = random_expert_vectors(m, rng);
    const auto got = collaborative_gate(in, m);
    const auto ref = oracle::ce_gate(in, m.config().expert_names(), oracle::Params{m.params().values()});
    ASSERT_EQ(got.size(), ref.size());
    for (const auto& [e, v] : ref) EXPECT_LT((got.at(e) - v).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CollaborativeGate, SingleExpertUsesSelfPair) {
  Rng rng(14);
  auto m = random_model(Arch::ce, rng, 2);
  auto in = random_expert_vectors(m, rng);
  in.erase("x1");
  const auto got = collaborative_gate(in, m);
  ASSERT_EQ(got.size(), 1u);
  // v * sigmoid(project(combine(r, r))) written out by hand.
  const auto p = m.params().values();
  const Vec v = in.at("x0");
  const Vec r = p.at("ce.x0.reduce.w") * v + p.at("ce.x0.reduce.b").transpose();
  Vec cat(2 * r.size());
  cat << r, r;
  const Vec h = (p.at("ce.pair.w1") * cat + p.at("ce.pair.b1").transpose()).cwiseMax(0.0);
  const Vec c = p.at("ce.pair.w2") * h + p.at("ce.pair.b2").transpose();
  const Vec mask = oracle::sigmoid(p.at("ce.x0.mask.w") * c + p.at("ce.x0.mask.b").transpose());
  EXPECT_LT((got.at("x0") - v.cwiseProduct(mask)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CollaborativeGate, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_model(Arch::ce, rng, 2 + trial % 2);
    const std::size_t n = m.config().experts.size();
    std::vector<Mat> x;
    std::vector<Mat> w;
    for (std::size_t e = 0; e < n; ++e) {
      x.push_back(random_matrix(rng, 2, m.audio_vlad()[e].output_dim()));
      w.push_back(random_matrix(rng, 2, m.audio_vlad()[e].output_dim()));
    }
    ad::Matrix presence = ad::Matrix::Ones(2, static_cast<Eigen::Index>(n));
    if (trial % 4 == 3) presence(1, 0) = 0.0;  // exercises the self-pair path
    auto loss = [&] {
      std::vector<ad::Var> in;
      for (const auto& xi : x) in.push_back(ad::constant(xi));
      const auto out = m.gate()->forward(in, presence);
      ad::Var total;
      for (std::size_t e = 0; e < n; ++e) {
        const auto t = probe(out[e], w[e]);
        total = total ? ad::add(total, t) : t;
      }
      return total;
    };
    EXPECT_LE(gradient_error(m.params(), loss), 1e-4) << "trial " << trial;
  }
}

// ---------------------------------------------------------------------------
// Scores

TEST(Scores, MatchCompositionalReference) {
  Rng rng(16);
  for (Arch arch : {Arch::moee, Arch::ce}) {
    for (int trial = 0; trial < 50; ++trial) {
      auto m = random_model(arch, rng, 1 + trial % 3);
      const auto text = random_text(rng, m.config().text_dim);
      const auto audio = random_audio(rng, m.config());
      const double got = arch == Arch::moee ? moee_score(m, text, audio) : ce_score(m, text, audio);
      EXPECT_NEAR(got, oracle::score(m, text, audio), 1e-6) << to_string(arch) << " trial " << trial;
    }
  }
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_model(Arch::mmt, rng, 1 + trial % 3);
    const auto text = random_text(rng, m.config().text_dim);
    const auto audio = random_audio(rng, m.config());
    EXPECT_NEAR(mmt_score(m, text, audio), oracle::score(m, text, audio), 1e-5) << "mmt trial " << trial;
  }
}

TEST(Scores, MissingExpertRenormalizesWeights) {
  Rng rng(17);
  for (Arch arch : {Arch::moee, Arch::ce, Arch::mmt}) {
    auto m = random_model(arch, rng, 3);
    const auto text = random_text(rng, m.config().text_dim);
    auto audio = random_audio(rng, m.config());
    audio.erase("x1");
    EXPECT_NEAR(score(m, text, audio), oracle::score(m, text, audio), 1e-5);
    audio.clear();
    EXPECT_THROW(score(m, text, audio), InvalidArgument);
  }
}

TEST(Scores, ArchitectureSpecificEntryPointsCheckTheModel) {
  Rng rng(18);
  auto m = random_model(Arch::moee, rng);
  const auto text = random_text(rng, 4);
  const auto audio = random_audio(rng, m.config());
  EXPECT_THROW(ce_score(m, text, audio), InvalidArgument);
  EXPECT_THROW(mmt_score(m, text, audio), InvalidArgument);
}

TEST(Scores, MixtureWeightsAreConvex) {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 5;
    const Eigen::RowVectorXd logits = random_matrix(rng, 1, n, 5.0);
    Eigen::RowVectorXd presence = Eigen::RowVectorXd::Ones(n);
    if (n > 1) presence(trial % n) = 0.0;
    const Vec w = mixture_weights(logits, presence);
    EXPECT_GE(w.minCoeff(), 0.0);
    EXPECT_NEAR(w.sum(), 1.0, 1e-6);
    for (int e = 0; e < n; ++e) {
      if (presence(e) == 0.0) {
        EXPECT_EQ(w(e), 0.0);
      }
    }
  }
}

TEST(Scores, TwoExpertsWithEqualWeightsAverageCosines) {
  // Cosines 1 and 0 with weights 0.5/0.5 combine to 0.5.
  TextSide text;
  text.experts = {ad::constant(Mat(Eigen::RowVector2d(1.0, 0.0))), ad::constant(Mat(Eigen::RowVector2d(1.0, 0.0)))};
  text.logits = ad::constant(Mat::Zero(1, 2));
  AudioSide audio;
  audio.experts = {ad::constant(Mat(Eigen::RowVector2d(1.0, 0.0))), ad::constant(Mat(Eigen::RowVector2d(0.0, 1.0)))};
  audio.presence = Mat::Ones(1, 2);
  EXPECT_DOUBLE_EQ(combine_similarity(text, audio)->value(0, 0), 0.5);
}

TEST(Scores, SingleExpertIdenticalEmbeddingsScoreOne) {
  Rng rng(20);
  for (Arch arch : {Arch::moee, Arch::ce, Arch::mmt}) {
    auto m = random_model(arch, rng, 1);
    const auto text = random_text(rng, m.config().text_dim);
    const auto audio = random_audio(rng, m.config());
    const auto tside = m.encode_text(text_batch({text}, {}));
    AudioSide aside;
    aside.experts = {tside.experts[0]};
    aside.presence = Mat::Ones(1, 1);
    EXPECT_NEAR(combine_similarity(tside, aside)->value(0, 0), 1.0, 1e-12);
  }
}

TEST(Scores, CeReducesToMoeeUnderSaturatedGates) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto ce = random_model(Arch::ce, rng, 2);
    EmbeddingModel moee(tiny_config(Arch::moee, 2), 0);
    const auto values = ce.params().values();
    moee.load_compatible(values);
    for (const auto& e : ce.config().experts) {
      auto& b = ce.params().at("ce." + e.name + ".mask.b")->value;
      b.setConstant(40.0);
      ce.params().at("ce." + e.name + ".mask.w")->value.setZero();
    }
    const auto text = random_text(rng, 4);
    const auto audio = random_audio(rng, ce.config());
    EXPECT_NEAR(ce_score(ce, text, audio), moee_score(moee, text, audio), 1e-4);
  }
}

TEST(Scores, GradientsMatchFiniteDifferences) {
  Rng rng(22);
  for (Arch arch : {Arch::moee, Arch::ce, Arch::mmt}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto m = random_model(arch, rng, 1 + trial % 3);
      std::vector<TextEmbedding> texts;
      std::vector<AudioExperts> audio;
      for (int b = 0; b < 3; ++b) {
        texts.push_back(random_text(rng, 4));
        audio.push_back(random_audio(rng, m.config()));
      }
      if (trial % 5 == 4 && m.config().experts.size() > 1) audio[1].erase("x0");
      std::vector<const AudioExperts*> ptrs;
      for (const auto& a : audio) ptrs.push_back(&a);
      const auto tb = text_batch(texts, {});
      const auto ab = audio_batches(m.config(), ptrs, {});
      const Mat w = random_matrix(rng, 3, 3);
      EXPECT_LE(gradient_error(m.params(), [&] { return probe(m.similarity(tb, ab), w); }), 1e-4)
          << to_string(arch) << " trial " << trial;
    }
  }
}

// ---------------------------------------------------------------------------
// MMT

TEST(Mmt, PaddedFramesDoNotChangeOutputs) {
  Rng rng(23);
  auto m = random_model(Arch::mmt, rng, 2);
  const FeatureMatrix x0 = random_frames(rng, 3, 3);
  const FeatureMatrix x1 = random_frames(rng, 2, 5);
  auto run = [&](float garbage) {
    std::vector<PaddedBatch> batches{PaddedBatch::zeros(1, 6, 3), PaddedBatch::zeros(1, 4, 5)};
    FeatureMatrix a = FeatureMatrix::Constant(6, 3, garbage);
    a.topRows(3) = x0;
    FeatureMatrix b = FeatureMatrix::Constant(4, 5, garbage);
    b.topRows(2) = x1;
    batches[0].set_row(0, a, std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0});
    batches[1].set_row(0, b, std::vector<std::uint8_t>{1, 1, 0, 0});
    ad::NoGrad g;
    return m.mmt_encode(batches);
  };
  const auto clean = run(0.0f);
  const auto dirty = run(123.0f);
  for (std::size_t e = 0; e < 2; ++e) EXPECT_TRUE((clean[e]->value.array() == dirty[e]->value.array()).all());
}

TEST(Mmt, ZeroLayersReturnAggregationTokens) {
  Rng rng(24);
  auto cfg = tiny_config(Arch::mmt, 2);
  cfg.mmt_layers = 0;
  EmbeddingModel m(cfg, 5);
  const auto out = mmt_encode(m, random_audio(rng, cfg));
  for (const auto& e : cfg.experts) {
    EXPECT_TRUE((out.at(e.name).transpose().array() == m.params().at("mmt." + e.name + ".agg")->value.array()).all());
  }
}

TEST(Mmt, AttentionRowsSumToOne) {
  Rng rng(25);
  auto cfg = tiny_config(Arch::mmt, 3);
  cfg.mmt_layers = 2;
  EmbeddingModel m(cfg, 6);
  scramble(m.params(), rng);
  std::vector<ad::Matrix> attention;
  mmt_encode(m, random_audio(rng, cfg), {}, &attention);
  ASSERT_EQ(attention.size(), static_cast<std::size_t>(cfg.mmt_layers * cfg.mmt_heads));
  for (const auto& a : attention) {
    for (Eigen::Index r = 0; r < a.rows(); ++r) EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-12);
  }
}

TEST(Mmt, RejectsSequencesLongerThanPositionTable) {
  Rng rng(26);
  auto cfg = tiny_config(Arch::mmt, 1);
  EmbeddingModel m(cfg, 7);
  AudioExperts a;
  a.emplace("x0", FeatureStream{"s", "x0", random_frames(rng, cfg.mmt_max_positions + 1, 3)});
  EXPECT_THROW(mmt_encode(m, a), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Similarity matrix

TEST(Similarity, MatchesLoopedScoringAndStaysInRange) {
  Rng rng(27);
  for (Arch arch : {Arch::moee, Arch::ce, Arch::mmt}) {
    auto m = random_model(arch, rng, 2);
    std::vector<TextEmbedding> texts;
    std::vector<AudioExperts> audio;
    for (int i = 0; i < 4; ++i) {
      texts.push_back(random_text(rng, 4));
      audio.push_back(random_audio(rng, m.config()));
    }
    std::vector<const AudioExperts*> ptrs;
    for (const auto& a : audio) ptrs.push_back(&a);
    const auto s = similarity_matrix(m, texts, ptrs);
    ASSERT_EQ(s.values.rows(), 4);
    ASSERT_EQ(s.values.cols(), 4);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        EXPECT_NEAR(s.values(i, j), score(m, texts[static_cast<std::size_t>(i)], audio[static_cast<std::size_t>(j)]), 1e-6);
        EXPECT_LE(std::abs(s.values(i, j)), 1.0 + 1e-12);
      }
    }
    // Reordering the audio batch only permutes columns.
    std::vector<const AudioExperts*> rev(ptrs.rbegin(), ptrs.rend());
    const auto r = similarity_matrix(m, texts, rev);
    for (int j = 0; j < 4; ++j) EXPECT_LT((r.values.col(3 - j) - s.values.col(j)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Similarity, SingleItemEqualsScore) {
  Rng rng(28);
  auto m = random_model(Arch::ce, rng, 2);
  const auto text = random_text(rng, 4);
  const auto audio = random_audio(rng, m.config());
  const auto s = similarity_matrix(m, {text}, {&audio});
  ASSERT_EQ(s.values.size(), 1);
  EXPECT_EQ(s.values(0, 0), ce_score(m, text, audio));
}

TEST(Similarity, EmptyBatchIsAnError) {
  Rng rng(29);
  auto m = random_model(Arch::ce, rng, 2);
  EXPECT_THROW(similarity_matrix(m, {}, {}), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Configuration and checkpoints

TEST(ModelConfig, RoundTripsThroughConfig) {
  auto cfg = tiny_config(Arch::mmt, 3);
  const auto back = ModelConfig::from_config(cfg.to_config());
  EXPECT_EQ(back.to_config().to_string(), cfg.to_config().to_string());
}

TEST(ModelConfig, RejectsBadShapes) {
  auto cfg = tiny_config(Arch::mmt, 1);
  cfg.mmt_heads = 3;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = tiny_config(Arch::ce, 1);
  cfg.experts.clear();
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  EXPECT_THROW(parse_arch("rnn"), InvalidArgument);
}

TEST(ModelConfig, DefaultsFollowPublishedSettings) {
  ModelConfig m;
  EXPECT_EQ(m.text_clusters, 20);
  EXPECT_EQ(m.text_ghosts, 1);
  EXPECT_EQ(m.audio_clusters, 16);
  EXPECT_EQ(m.mmt_layers, 4);
  EXPECT_EQ(m.mmt_heads, 4);
  EXPECT_EQ(m.mmt_width, 512);
  EXPECT_EQ(m.mmt_ff, 2048);
}

TEST(Archive, RoundTripPreservesTensorsAtFloatPrecision) {
  Rng rng(30);
  auto m = random_model(Arch::ce, rng, 2);
  const fs::path path = fs::temp_directory_path() / "audioret_archive_test.arc";
  save_archive(path, Archive{m.config().to_config(), m.params().values()});
  const auto back = load_archive(path);
  fs::remove(path);
  EXPECT_EQ(back.manifest.to_string(), m.config().to_config().to_string());
  for (const auto& [name, v] : m.params().values()) {
    ASSERT_TRUE(back.tensors.count(name)) << name;
    EXPECT_EQ(back.tensors.at(name), v.cast<float>().cast<double>()) << name;
  }
}

TEST(Archive, RejectsForeignFiles) {
  const fs::path path = fs::temp_directory_path() / "audioret_archive_bad.arc";
  io::write_text_atomic(path, "not an archive");
  EXPECT_THROW(load_archive(path), IoError);
  fs::remove(path);
}

TEST(LoadCompatible, ReportsDroppedAndReinitialized) {
  Rng rng(31);
  EmbeddingModel two(tiny_config(Arch::ce, 2), 1);
  EmbeddingModel one(tiny_config(Arch::ce, 1), 2);
  const auto rep = one.load_compatible(two.params().values());
  EXPECT_FALSE(rep.dropped.empty());
  for (const auto& name : rep.dropped) EXPECT_NE(name.find("x1"), std::string::npos) << name;
  for (const auto& name : rep.loaded) EXPECT_EQ(one.params().at(name)->value, two.params().at(name)->value);
}

}  // namespace
