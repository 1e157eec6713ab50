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

// Joint text/audio embedding architectures: MoEE, CE and MMT.
//
// All three score a (caption, audio) pair as a convex combination of per-expert
// cosine similarities. Text is embedded once per caption and audio once per
// sample; a similarity matrix then combines the two sides without re-encoding.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "audioret/autograd.hpp"
#include "audioret/config.hpp"
#include "audioret/error.hpp"
#include "audioret/experts.hpp"
#include "audioret/params.hpp"
#include "audioret/random.hpp"
#include "audioret/text.hpp"

namespace audioret {

inline constexpr double kNormEps = 1e-12;

enum class Arch { moee, ce, mmt };

inline std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::moee: return "moee";
    case Arch::ce: return "ce";
    case Arch::mmt: return "mmt";
  }
  return "ce";
}

inline Arch parse_arch(std::string_view s) {
  const std::string k = text::lower(s);
  if (k == "moee") return Arch::moee;
  if (k == "ce") return Arch::ce;
  if (k == "mmt") return Arch::mmt;
  fail("unknown architecture '", std::string(s), "' (expected moee, ce or mmt)");
}

struct ModelConfig {
  Arch arch = Arch::ce;
  std::vector<ExpertInfo> experts;
  int text_dim = 300;  // word-embedding width (MoEE/CE) or contextual token width (MMT)
  int joint_dim = 512;
  int text_clusters = 20;
  int text_ghosts = 1;
  int audio_clusters = 16;
  int audio_ghosts = 0;
  int ce_proj_dim = 0;  // 0 means joint_dim
  int mmt_layers = 4;
  int mmt_heads = 4;
  int mmt_width = 512;
  int mmt_ff = 2048;
  int mmt_max_positions = 512;

  int projection_dim() const { return ce_proj_dim > 0 ? ce_proj_dim : joint_dim; }
  int embed_dim() const { return arch == Arch::mmt ? mmt_width : joint_dim; }

  std::size_t expert_index(std::string_view name) const {
    const std::string key = text::lower(name);
    for (std::size_t i = 0; i < experts.size(); ++i) {
      if (experts[i].name == key) return i;
    }
    fail<NotFound>("expert '", std::string(name), "' not configured for this model");
  }

  std::vector<std::string> expert_names() const {
    std::vector<std::string> out;
    for (const auto& e : experts) out.push_back(e.name);
    return out;
  }

  void validate() const {
    require(!experts.empty(), "model needs at least one expert");
    for (std::size_t i = 0; i < experts.size(); ++i) {
      require(experts[i].dim > 0, "expert '", experts[i].name, "' has no dimension");
      for (std::size_t j = 0; j < i; ++j) require(experts[i].name != experts[j].name, "duplicate expert '",
                                                  experts[i].name, "'");
    }
    require(text_dim > 0 && joint_dim > 0, "dimensions must be positive");
    require(text_clusters >= 1 && text_ghosts >= 0 && audio_clusters >= 1 && audio_ghosts >= 0,
            "invalid NetVLAD cluster counts");
    if (arch == Arch::mmt) {
      require(mmt_layers >= 0 && mmt_heads >= 1 && mmt_width >= 1 && mmt_ff >= 1 && mmt_max_positions >= 1,
              "invalid transformer shape");
      require(mmt_width % mmt_heads == 0, "transformer width ", mmt_width, " not divisible by ", mmt_heads,
              " heads");
    }
  }

  Config to_config() const {
    Config c;
    c.set("model.arch", std::string(to_string(arch)));
    std::vector<std::string> names, dims, kinds;
    for (const auto& e : experts) {
      names.push_back(e.name);
      dims.push_back(std::to_string(e.dim));
      kinds.push_back(e.kind == ExpertKind::audio ? "audio" : "visual");
    }
    c.set("model.experts", text::join(names, ","));
    c.set("model.expert_dims", text::join(dims, ","));
    c.set("model.expert_kinds", text::join(kinds, ","));
    c.set("model.text_dim", text_dim);
    c.set("model.joint_dim", joint_dim);
    c.set("model.text_clusters", text_clusters);
    c.set("model.text_ghosts", text_ghosts);
    c.set("model.audio_clusters", audio_clusters);
    c.set("model.audio_ghosts", audio_ghosts);
    c.set("model.ce_proj_dim", ce_proj_dim);
    c.set("model.mmt_layers", mmt_layers);
    c.set("model.mmt_heads", mmt_heads);
    c.set("model.mmt_width", mmt_width);
    c.set("model.mmt_ff", mmt_ff);
    c.set("model.mmt_max_positions", mmt_max_positions);
    return c;
  }

  /// Reads `model.*` keys; experts without recorded dims are resolved in `registry`.
  static ModelConfig from_config(const Config& c, const ExpertRegistry& registry = {}) {
    ModelConfig m;
    m.arch = parse_arch(c.get_string("model.arch", "ce"));
    const auto names = c.get_list("model.experts");
    const auto dims = c.get_list("model.expert_dims");
    const auto kinds = c.get_list("model.expert_kinds");
    for (std::size_t i = 0; i < names.size(); ++i) {
      ExpertInfo e;
      if (i < dims.size()) {
        e.name = text::lower(names[i]);
        e.dim = static_cast<int>(text::to_int(dims[i], "expert dim"));
        e.kind = (i < kinds.size() && kinds[i] == "visual") ? ExpertKind::visual : ExpertKind::audio;
      } else {
        e = registry.at(names[i]);
      }
      m.experts.push_back(e);
    }
    m.text_dim = static_cast<int>(c.get_int("model.text_dim", m.text_dim));
    m.joint_dim = static_cast<int>(c.get_int("model.joint_dim", m.joint_dim));
    m.text_clusters = static_cast<int>(c.get_int("model.text_clusters", m.text_clusters));
    m.text_ghosts = static_cast<int>(c.get_int("model.text_ghosts", m.text_ghosts));
    m.audio_clusters = static_cast<int>(c.get_int("model.audio_clusters", m.audio_clusters));
    m.audio_ghosts = static_cast<int>(c.get_int("model.audio_ghosts", m.audio_ghosts));
    m.ce_proj_dim = static_cast<int>(c.get_int("model.ce_proj_dim", m.ce_proj_dim));
    m.mmt_layers = static_cast<int>(c.get_int("model.mmt_layers", m.mmt_layers));
    m.mmt_heads = static_cast<int>(c.get_int("model.mmt_heads", m.mmt_heads));
    m.mmt_width = static_cast<int>(c.get_int("model.mmt_width", m.mmt_width));
    m.mmt_ff = static_cast<int>(c.get_int("model.mmt_ff", m.mmt_ff));
    m.mmt_max_positions = static_cast<int>(c.get_int("model.mmt_max_positions", m.mmt_max_positions));
    return m;
  }
};

namespace detail {

/// Valid rows of a padded row in a canonical (lexicographic) order, so that
/// order-free pooling is bit-identical under any permutation of the frames.
inline ad::Matrix canonical_frames(const PaddedBatch& batch, int b) {
  const FeatureMatrix valid = batch.valid_rows(b);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(valid.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
    const float* px = valid.row(x).data();
    const float* py = valid.row(y).data();
    return std::lexicographical_compare(px, px + valid.cols(), py, py + valid.cols());
  });
  ad::Matrix out(valid.rows(), valid.cols());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = valid.row(order[i]).cast<double>();
  }
  return out;
}

inline ad::Var layer_norm(const ad::Var& x, const ad::Var& gain, const ad::Var& bias) {
  return ad::add_row(ad::mul_row(ad::standardize_rows(x), gain), bias);
}

inline ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b) {
  return ad::add_row(ad::matmul_nt(x, w), b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NetVLAD with optional ghost clusters

struct NetVladLayer {
  int clusters = 0;
  int ghosts = 0;
  int dim = 0;
  ad::Var centers;         // (K+G) x D
  ad::Var assign_weights;  // D x (K+G)
  ad::Var assign_bias;     // 1 x (K+G)

  static NetVladLayer create(ParamSet& params, const std::string& prefix, int dim, int clusters, int ghosts,
                             Rng& rng) {
    NetVladLayer l;
    l.clusters = clusters;
    l.ghosts = ghosts;
    l.dim = dim;
    const int total = clusters + ghosts;
    l.centers = params.add(prefix + ".centers", uniform_init(total, dim, dim, rng));
    l.assign_weights = params.add(prefix + ".assign_w", uniform_init(dim, total, dim, rng));
    l.assign_bias = params.add(prefix + ".assign_b", ad::Matrix::Zero(1, total));
    return l;
  }

  int output_dim() const { return clusters * dim; }

  /// Pools T x D frames (T >= 1) into a 1 x (K*D) descriptor.
  ad::Var forward(const ad::Matrix& frames) const {
    require(frames.rows() >= 1, "NetVLAD input is fully masked");
    require(frames.cols() == dim, "NetVLAD expects dim ", dim, ", got ", frames.cols());
    const auto x = ad::constant(frames);
    const auto assign = ad::softmax_rows(detail::linear(x, ad::transpose(assign_weights), assign_bias));
    const auto a = ghosts > 0 ? ad::slice_cols(assign, 0, clusters) : assign;
    const auto weighted = ad::matmul(ad::transpose(a), x);
    const auto mass = ad::transpose(ad::col_sums(a));
    const auto c = ghosts > 0 ? ad::slice_rows(centers, 0, clusters) : centers;
    const auto residual = ad::sub(weighted, ad::mul_col(c, mass));
    const auto intra = ad::l2_normalize_rows(residual, kNormEps);
    return ad::l2_normalize_rows(ad::flatten(intra), kNormEps);
  }

  /// One descriptor per batch row. Rows with no valid step become zero rows
  /// when `empty_as_zero`, otherwise they are an error.
  ad::Var forward_batch(const PaddedBatch& batch, bool empty_as_zero) const {
    std::vector<ad::Var> rows;
    rows.reserve(static_cast<std::size_t>(batch.batch));
    for (int b = 0; b < batch.batch; ++b) {
      if (batch.lengths[static_cast<std::size_t>(b)] == 0) {
        require(empty_as_zero, "NetVLAD input row ", b, " is fully masked");
        rows.push_back(ad::constant(ad::Matrix::Zero(1, output_dim())));
      } else {
        rows.push_back(forward(detail::canonical_frames(batch, b)));
      }
    }
    return ad::concat_rows(rows);
  }
};

// ---------------------------------------------------------------------------
// Gated embedding unit: y1 = W1 x + b1, y = y1 * sigmoid(W2 y1 + b2), y / max(|y|, eps)

struct GatedUnit {
  ad::Var w1;  // out x in
  ad::Var b1;  // 1 x out
  ad::Var w2;  // out x out
  ad::Var b2;  // 1 x out

  static GatedUnit create(ParamSet& params, const std::string& prefix, int in_dim, int out_dim, Rng& rng) {
    GatedUnit g;
    g.w1 = params.add(prefix + ".w1", uniform_init(out_dim, in_dim, in_dim, rng));
    g.b1 = params.add(prefix + ".b1", ad::Matrix::Zero(1, out_dim));
    g.w2 = params.add(prefix + ".w2", uniform_init(out_dim, out_dim, out_dim, rng));
    g.b2 = params.add(prefix + ".b2", ad::Matrix::Zero(1, out_dim));
    return g;
  }

  ad::Var forward(const ad::Var& x) const {
    const auto y1 = detail::linear(x, w1, b1);
    const auto gate = ad::sigmoid(detail::linear(y1, w2, b2));
    return ad::l2_normalize_rows(ad::mul(y1, gate), kNormEps);
  }
};

// ---------------------------------------------------------------------------
// Collaborative gating
//
// Each expert vector is reduced to a common width P; a shared two-layer MLP
// combines every ordered pair (i, j != i), the outputs for expert i are summed
// and projected to an elementwise sigmoid mask over expert i's vector.

struct CollaborativeGate {
  ad::Var pair_w1;  // P x 2P
  ad::Var pair_b1;
  ad::Var pair_w2;  // P x P
  ad::Var pair_b2;
  std::vector<ad::Var> reduce_w;  // P x D_e
  std::vector<ad::Var> reduce_b;
  std::vector<ad::Var> mask_w;  // D_e x P
  std::vector<ad::Var> mask_b;  // 1 x D_e

  static CollaborativeGate create(ParamSet& params, const std::vector<std::string>& experts,
                                  const std::vector<int>& dims, int width, Rng& rng) {
    CollaborativeGate g;
    g.pair_w1 = params.add("ce.pair.w1", uniform_init(width, 2 * width, 2 * width, rng));
    g.pair_b1 = params.add("ce.pair.b1", ad::Matrix::Zero(1, width));
    g.pair_w2 = params.add("ce.pair.w2", uniform_init(width, width, width, rng));
    g.pair_b2 = params.add("ce.pair.b2", ad::Matrix::Zero(1, width));
    for (std::size_t e = 0; e < experts.size(); ++e) {
      const std::string p = "ce." + experts[e];
      g.reduce_w.push_back(params.add(p + ".reduce.w", uniform_init(width, dims[e], dims[e], rng)));
      g.reduce_b.push_back(params.add(p + ".reduce.b", ad::Matrix::Zero(1, width)));
      g.mask_w.push_back(params.add(p + ".mask.w", uniform_init(dims[e], width, width, rng)));
      g.mask_b.push_back(params.add(p + ".mask.b", ad::Matrix::Zero(1, dims[e])));
    }
    return g;
  }

  ad::Var combine(const ad::Var& a, const ad::Var& b) const {
    const auto hidden = ad::relu(detail::linear(ad::concat_cols({a, b}), pair_w1, pair_b1));
    return detail::linear(hidden, pair_w2, pair_b2);
  }

  /// `experts[e]` is B x D_e; `presence` is B x E with 0/1 entries.
  /// Returns gated vectors; masks are written to `masks` when given.
  std::vector<ad::Var> forward(const std::vector<ad::Var>& experts, const ad::Matrix& presence,
                               std::vector<ad::Var>* masks = nullptr) const {
    const std::size_t n = experts.size();
    const Eigen::Index rows = presence.rows();
    std::vector<ad::Var> reduced;
    for (std::size_t e = 0; e < n; ++e) reduced.push_back(detail::linear(experts[e], reduce_w[e], reduce_b[e]));

    std::vector<ad::Var> out;
    for (std::size_t i = 0; i < n; ++i) {
      ad::Var summed;
      Eigen::VectorXd others = Eigen::VectorXd::Zero(rows);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        others += presence.col(static_cast<Eigen::Index>(j));
        const auto term =
            ad::mul_col(combine(reduced[i], reduced[j]), ad::constant(presence.col(static_cast<Eigen::Index>(j))));
        summed = summed ? ad::add(summed, term) : term;
      }
      // Rows where expert i has no partner use the self-pair.
      const Eigen::VectorXd alone = (others.array() == 0.0).cast<double>().matrix();
      if (alone.any()) {
        const auto self = ad::mul_col(combine(reduced[i], reduced[i]), ad::constant(alone));
        summed = summed ? ad::add(summed, self) : self;
      }
      const auto mask = ad::sigmoid(detail::linear(summed, mask_w[i], mask_b[i]));
      if (masks) masks->push_back(mask);
      out.push_back(ad::mul(experts[i], mask));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Transformer encoder (pre-norm blocks)

struct TransformerBlock {
  ad::Var ln1_g, ln1_b;
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Var ln2_g, ln2_b;
  ad::Var ff_w1, ff_b1, ff_w2, ff_b2;

  static TransformerBlock create(ParamSet& params, const std::string& p, int width, int ff, Rng& rng) {
    TransformerBlock b;
    b.ln1_g = params.add(p + ".ln1.g", ad::Matrix::Ones(1, width));
    b.ln1_b = params.add(p + ".ln1.b", ad::Matrix::Zero(1, width));
    b.wq = params.add(p + ".attn.wq", uniform_init(width, width, width, rng));
    b.bq = params.add(p + ".attn.bq", ad::Matrix::Zero(1, width));
    b.wk = params.add(p + ".attn.wk", uniform_init(width, width, width, rng));
    b.bk = params.add(p + ".attn.bk", ad::Matrix::Zero(1, width));
    b.wv = params.add(p + ".attn.wv", uniform_init(width, width, width, rng));
    b.bv = params.add(p + ".attn.bv", ad::Matrix::Zero(1, width));
    b.wo = params.add(p + ".attn.wo", uniform_init(width, width, width, rng));
    b.bo = params.add(p + ".attn.bo", ad::Matrix::Zero(1, width));
    b.ln2_g = params.add(p + ".ln2.g", ad::Matrix::Ones(1, width));
    b.ln2_b = params.add(p + ".ln2.b", ad::Matrix::Zero(1, width));
    b.ff_w1 = params.add(p + ".ff.w1", uniform_init(ff, width, width, rng));
    b.ff_b1 = params.add(p + ".ff.b1", ad::Matrix::Zero(1, ff));
    b.ff_w2 = params.add(p + ".ff.w2", uniform_init(width, ff, ff, rng));
    b.ff_b2 = params.add(p + ".ff.b2", ad::Matrix::Zero(1, width));
    return b;
  }

  ad::Var forward(const ad::Var& x, int heads, std::vector<ad::Matrix>* attention = nullptr) const {
    const Eigen::Index width = x->value.cols();
    const Eigen::Index head_dim = width / heads;
    const auto h = detail::layer_norm(x, ln1_g, ln1_b);
    const auto q = detail::linear(h, wq, bq);
    const auto k = detail::linear(h, wk, bk);
    const auto v = detail::linear(h, wv, bv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<ad::Var> heads_out;
    for (int hd = 0; hd < heads; ++hd) {
      const Eigen::Index c0 = hd * head_dim;
      const auto scores =
          ad::scale(ad::matmul_nt(ad::slice_cols(q, c0, head_dim), ad::slice_cols(k, c0, head_dim)), scale);
      const auto weights = ad::softmax_rows(scores);
      if (attention) attention->push_back(weights->value);
      heads_out.push_back(ad::matmul(weights, ad::slice_cols(v, c0, head_dim)));
    }
    const auto attended = detail::linear(ad::concat_cols(heads_out), wo, bo);
    const auto x1 = ad::add(x, attended);
    const auto h2 = detail::layer_norm(x1, ln2_g, ln2_b);
    const auto ff = detail::linear(ad::gelu(detail::linear(h2, ff_w1, ff_b1)), ff_w2, ff_b2);
    return ad::add(x1, ff);
  }
};

struct MmtEncoder {
  int heads = 1;
  int max_positions = 0;
  std::vector<ad::Var> proj_w;  // d x D_e
  std::vector<ad::Var> proj_b;
  std::vector<ad::Var> type_embed;  // 1 x d
  std::vector<ad::Var> agg_token;   // 1 x d
  ad::Var positions;                // max_positions x d
  std::vector<TransformerBlock> blocks;

  static MmtEncoder create(ParamSet& params, const ModelConfig& cfg, Rng& rng) {
    MmtEncoder enc;
    enc.heads = cfg.mmt_heads;
    enc.max_positions = cfg.mmt_max_positions;
    const int d = cfg.mmt_width;
    for (const auto& e : cfg.experts) {
      const std::string p = "mmt." + e.name;
      enc.proj_w.push_back(params.add(p + ".proj.w", uniform_init(d, e.dim, e.dim, rng)));
      enc.proj_b.push_back(params.add(p + ".proj.b", ad::Matrix::Zero(1, d)));
      enc.type_embed.push_back(params.add(p + ".type", uniform_init(1, d, d, rng)));
      enc.agg_token.push_back(params.add(p + ".agg", uniform_init(1, d, d, rng)));
    }
    enc.positions = params.add("mmt.positions", uniform_init(cfg.mmt_max_positions, d, d, rng));
    for (int l = 0; l < cfg.mmt_layers; ++l) {
      enc.blocks.push_back(TransformerBlock::create(params, "mmt.block" + std::to_string(l), d, cfg.mmt_ff, rng));
    }
    return enc;
  }

  /// Encodes one sample. `frames[e]` holds the valid frames of expert e in
  /// time order, or nullopt when the expert is absent. Returns the final state
  /// of each present expert's aggregation token (absent experts: nullptr).
  std::vector<ad::Var> encode(const std::vector<std::optional<ad::Matrix>>& frames,
                              std::vector<ad::Matrix>* attention = nullptr) const {
    std::vector<ad::Var> parts;
    std::vector<std::optional<Eigen::Index>> agg_pos(frames.size());
    Eigen::Index offset = 0;
    for (std::size_t e = 0; e < frames.size(); ++e) {
      if (!frames[e] || frames[e]->rows() == 0) continue;
      const Eigen::Index t = frames[e]->rows();
      require(t <= max_positions, "sequence of ", t, " frames exceeds ", max_positions, " positions");
      agg_pos[e] = offset;
      parts.push_back(agg_token[e]);
      auto tokens = detail::linear(ad::constant(*frames[e]), proj_w[e], proj_b[e]);
      tokens = ad::add(ad::add_row(tokens, type_embed[e]), ad::slice_rows(positions, 0, t));
      parts.push_back(tokens);
      offset += 1 + t;
    }
    require(!parts.empty(), "transformer input is fully masked");
    auto x = ad::concat_rows(parts);
    for (const auto& block : blocks) x = block.forward(x, heads, attention);
    std::vector<ad::Var> out(frames.size());
    for (std::size_t e = 0; e < frames.size(); ++e) {
      if (agg_pos[e]) out[e] = ad::slice_rows(x, *agg_pos[e], 1);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Full model

/// Per-expert text embeddings (B_t x J each, unit rows) and mixture logits (B_t x E).
struct TextSide {
  std::vector<ad::Var> experts;
  ad::Var logits;
};

/// Per-expert audio embeddings (B_a x J each) and 0/1 presence (B_a x E).
struct AudioSide {
  std::vector<ad::Var> experts;
  ad::Matrix presence;
};

/// Mixture weights renormalized over the experts present for one audio item.
inline Eigen::VectorXd mixture_weights(const Eigen::RowVectorXd& logits, const Eigen::RowVectorXd& presence) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - mx).exp().matrix().transpose();
  w = w.cwiseProduct(presence.transpose());
  const double total = w.sum();
  require(total > 0.0, "no experts present");
  return w / total;
}

/// s_ij = sum_e w_ie(j) * <text_e[i], audio_e[j]>, with the softmax mixture
/// weights of text i renormalized over the experts present for audio j.
inline ad::Var combine_similarity(const TextSide& text, const AudioSide& audio) {
  const std::size_t n = text.experts.size();
  require(n == audio.experts.size() && static_cast<Eigen::Index>(n) == audio.presence.cols(),
          "text/audio expert count mismatch");
  for (Eigen::Index r = 0; r < audio.presence.rows(); ++r) {
    require(audio.presence.row(r).sum() > 0.0, "no experts present for audio item ", r);
  }
  const auto weights = ad::softmax_rows(text.logits);
  ad::Var numerator;
  for (std::size_t e = 0; e < n; ++e) {
    const auto cos = ad::matmul_nt(text.experts[e], audio.experts[e]);
    const auto present = ad::constant(audio.presence.col(static_cast<Eigen::Index>(e)).transpose());
    const auto term = ad::mul_row(ad::mul_col(cos, ad::slice_cols(weights, static_cast<Eigen::Index>(e), 1)), present);
    numerator = numerator ? ad::add(numerator, term) : term;
  }
  const auto denominator = ad::matmul_nt(weights, ad::constant(audio.presence));
  return ad::div(numerator, denominator);
}

class EmbeddingModel {
 public:
  EmbeddingModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    Rng rng(seed);
    const auto names = cfg_.expert_names();
    const int j = cfg_.embed_dim();
    if (cfg_.arch == Arch::mmt) {
      for (const auto& e : names) {
        text_units_.push_back(GatedUnit::create(params_, "text." + e + ".unit", cfg_.text_dim, j, rng));
      }
      mix_in_dim_ = cfg_.text_dim;
    } else {
      text_vlad_ = NetVladLayer::create(params_, "text.vlad", cfg_.text_dim, cfg_.text_clusters, cfg_.text_ghosts, rng);
      for (const auto& e : names) {
        text_units_.push_back(GatedUnit::create(params_, "text." + e + ".unit", text_vlad_.output_dim(), j, rng));
      }
      mix_in_dim_ = text_vlad_.output_dim();
    }
    for (const auto& e : names) {
      mix_w_.push_back(params_.add("text." + e + ".mix.w", uniform_init(1, mix_in_dim_, mix_in_dim_, rng)));
      mix_b_.push_back(params_.add("text." + e + ".mix.b", ad::Matrix::Zero(1, 1)));
    }
    if (cfg_.arch == Arch::mmt) {
      mmt_ = MmtEncoder::create(params_, cfg_, rng);
    } else {
      std::vector<int> vlad_dims;
      for (const auto& e : cfg_.experts) {
        audio_vlad_.push_back(
            NetVladLayer::create(params_, "audio." + e.name + ".vlad", e.dim, cfg_.audio_clusters, cfg_.audio_ghosts, rng));
        vlad_dims.push_back(audio_vlad_.back().output_dim());
      }
      if (cfg_.arch == Arch::ce) {
        gate_ = CollaborativeGate::create(params_, names, vlad_dims, cfg_.projection_dim(), rng);
      }
      for (std::size_t e = 0; e < names.size(); ++e) {
        audio_units_.push_back(GatedUnit::create(params_, "audio." + names[e] + ".unit", vlad_dims[e], j, rng));
      }
    }
  }

  EmbeddingModel(const EmbeddingModel&) = delete;
  EmbeddingModel& operator=(const EmbeddingModel&) = delete;
  EmbeddingModel(EmbeddingModel&&) = default;
  EmbeddingModel& operator=(EmbeddingModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  const NetVladLayer& text_vlad() const { return text_vlad_; }
  const std::vector<NetVladLayer>& audio_vlad() const { return audio_vlad_; }
  const std::vector<GatedUnit>& text_units() const { return text_units_; }
  const std::vector<GatedUnit>& audio_units() const { return audio_units_; }
  const std::optional<CollaborativeGate>& gate() const { return gate_; }
  const std::optional<MmtEncoder>& encoder() const { return mmt_; }

  /// Caption-level representation fed to the per-expert text units and the
  /// mixture head: NetVLAD over word vectors (MoEE/CE) or the masked mean of
  /// contextual token states (MMT). Captions with no valid token map to zero.
  ad::Var pooled_text(const PaddedBatch& tokens) const {
    require(tokens.dim == cfg_.text_dim, "text embedding width ", tokens.dim, " != configured ", cfg_.text_dim);
    if (cfg_.arch != Arch::mmt) return text_vlad_.forward_batch(tokens, true);
    ad::Matrix pooled = ad::Matrix::Zero(tokens.batch, tokens.dim);
    for (int b = 0; b < tokens.batch; ++b) {
      const int len = tokens.lengths[static_cast<std::size_t>(b)];
      if (len == 0) continue;
      pooled.row(b) = tokens.valid_rows(b).cast<double>().colwise().sum() / static_cast<double>(len);
    }
    return ad::constant(std::move(pooled));
  }

  TextSide encode_text(const PaddedBatch& tokens) const {
    const auto pooled = pooled_text(tokens);
    TextSide side;
    std::vector<ad::Var> logit_cols;
    for (std::size_t e = 0; e < text_units_.size(); ++e) {
      side.experts.push_back(text_units_[e].forward(pooled));
      logit_cols.push_back(detail::linear(pooled, mix_w_[e], mix_b_[e]));
    }
    side.logits = ad::concat_cols(logit_cols);
    return side;
  }

  /// `experts[e]` holds the batch for configured expert e; rows of length 0
  /// mark the expert as absent for that item.
  AudioSide encode_audio(const std::vector<PaddedBatch>& experts) const {
    const std::size_t n = cfg_.experts.size();
    require(experts.size() == n, "expected ", n, " expert batches, got ", experts.size());
    const int batch = experts.front().batch;
    AudioSide side;
    side.presence = ad::Matrix::Zero(batch, static_cast<Eigen::Index>(n));
    for (std::size_t e = 0; e < n; ++e) {
      require(experts[e].batch == batch, "expert batches disagree on batch size");
      require(experts[e].dim == cfg_.experts[e].dim, "expert '", cfg_.experts[e].name, "' expects dim ",
              cfg_.experts[e].dim, ", got ", experts[e].dim);
      for (int b = 0; b < batch; ++b) {
        side.presence(b, static_cast<Eigen::Index>(e)) = experts[e].lengths[static_cast<std::size_t>(b)] > 0 ? 1.0 : 0.0;
      }
    }
    for (int b = 0; b < batch; ++b) require(side.presence.row(b).sum() > 0.0, "no experts present for audio item ", b);

    if (cfg_.arch == Arch::mmt) {
      for (auto& state : mmt_encode(experts)) side.experts.push_back(ad::l2_normalize_rows(state, kNormEps));
      return side;
    }
    std::vector<ad::Var> pooled;
    for (std::size_t e = 0; e < n; ++e) pooled.push_back(audio_vlad_[e].forward_batch(experts[e], true));
    if (cfg_.arch == Arch::ce) pooled = gate_->forward(pooled, side.presence);
    for (std::size_t e = 0; e < n; ++e) side.experts.push_back(audio_units_[e].forward(pooled[e]));
    return side;
  }

  /// Per-expert final aggregation-token states, B x d each (absent: zero rows).
  std::vector<ad::Var> mmt_encode(const std::vector<PaddedBatch>& experts,
                                  std::vector<ad::Matrix>* attention = nullptr) const {
    require(mmt_.has_value(), "mmt_encode needs an MMT model");
    const std::size_t n = cfg_.experts.size();
    const int batch = experts.front().batch;
    std::vector<std::vector<ad::Var>> rows(n);
    for (int b = 0; b < batch; ++b) {
      std::vector<std::optional<ad::Matrix>> frames(n);
      for (std::size_t e = 0; e < n; ++e) {
        if (experts[e].lengths[static_cast<std::size_t>(b)] > 0) {
          frames[e] = experts[e].valid_rows(b).cast<double>();
        }
      }
      const auto out = mmt_->encode(frames, attention);
      for (std::size_t e = 0; e < n; ++e) {
        rows[e].push_back(out[e] ? out[e] : ad::constant(ad::Matrix::Zero(1, cfg_.mmt_width)));
      }
    }
    std::vector<ad::Var> result;
    for (auto& r : rows) result.push_back(ad::concat_rows(r));
    return result;
  }

  ad::Var similarity(const TextSide& text, const AudioSide& audio) const { return combine_similarity(text, audio); }

  ad::Var similarity(const PaddedBatch& tokens, const std::vector<PaddedBatch>& experts) const {
    return combine_similarity(encode_text(tokens), encode_audio(experts));
  }

  /// Loads every tensor in `values` whose name and shape match. Returns the
  /// names that were not loaded (kept at their initialization) and the names
  /// in `values` that this model has no use for.
  struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> reinitialized;
    std::vector<std::string> dropped;
  };

  LoadReport load_compatible(const TensorMap& values) {
    LoadReport rep;
    for (auto& [name, var] : params_.entries()) {
      const auto it = values.find(name);
      if (it != values.end() && it->second.rows() == var->value.rows() && it->second.cols() == var->value.cols()) {
        var->value = it->second;
        rep.loaded.push_back(name);
      } else {
        rep.reinitialized.push_back(name);
      }
    }
    for (const auto& [name, m] : values) {
      if (!params_.contains(name)) rep.dropped.push_back(name);
    }
    return rep;
  }

 private:
  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  ParamSet params_;
  NetVladLayer text_vlad_;
  std::vector<GatedUnit> text_units_;
  std::vector<ad::Var> mix_w_;
  std::vector<ad::Var> mix_b_;
  int mix_in_dim_ = 0;
  std::vector<NetVladLayer> audio_vlad_;
  std::vector<GatedUnit> audio_units_;
  std::optional<CollaborativeGate> gate_;
  std::optional<MmtEncoder> mmt_;
};

// ---------------------------------------------------------------------------
// Single-item entry points

/// NetVLAD descriptor of one padded row.
inline Eigen::VectorXd netvlad_aggregate(const PaddedBatch& batch, int row, const NetVladLayer& layer) {
  require(row >= 0 && row < batch.batch, "row out of range");
  require(batch.lengths[static_cast<std::size_t>(row)] > 0, "NetVLAD input is fully masked");
  ad::NoGrad guard;
  return layer.forward(detail::canonical_frames(batch, row))->value.row(0).transpose();
}

inline Eigen::VectorXd gated_embed(const Eigen::VectorXd& x, const GatedUnit& unit) {
  require(x.allFinite(), "gated_embed input is not finite");
  ad::NoGrad guard;
  return unit.forward(ad::constant(x.transpose()))->value.row(0).transpose();
}

/// Audio input for one sample: expert name -> stream. Experts missing from
/// the map are treated as absent.
using AudioExperts = std::map<std::string, FeatureStream>;

/// Word and per-expert frame caps; 0 or a missing entry means "no cap".
struct SequenceCaps {
  int words = 0;
  std::map<std::string, int> frames;
  int default_frames = 0;  // for experts without an entry

  int frames_for(const std::string& expert, int fallback) const {
    const auto it = frames.find(expert);
    if (it != frames.end() && it->second > 0) return it->second;
    return default_frames > 0 ? default_frames : fallback;
  }
};

inline PaddedBatch text_batch(const std::vector<TextEmbedding>& texts, const SequenceCaps& caps) {
  require(!texts.empty(), "empty text batch");
  int longest = 1;
  for (const auto& t : texts) longest = std::max(longest, static_cast<int>(t.tokens.rows()));
  return cap_and_pad(texts, caps.words > 0 ? caps.words : longest);
}

/// One padded batch per configured expert; missing entries become absent rows.
inline std::vector<PaddedBatch> audio_batches(const ModelConfig& cfg, const std::vector<const AudioExperts*>& items,
                                              const SequenceCaps& caps) {
  require(!items.empty(), "empty audio batch");
  std::vector<PaddedBatch> out;
  for (const auto& info : cfg.experts) {
    int longest = 1;
    for (const auto* item : items) {
      if (auto it = item->find(info.name); it != item->end()) {
        longest = std::max(longest, static_cast<int>(it->second.matrix.rows()));
      }
    }
    PaddedBatch batch =
        PaddedBatch::zeros(static_cast<int>(items.size()), caps.frames_for(info.name, longest), info.dim);
    for (std::size_t b = 0; b < items.size(); ++b) {
      if (auto it = items[b]->find(info.name); it != items[b]->end()) {
        batch.set_row(static_cast<int>(b), it->second.matrix);
      }
    }
    out.push_back(std::move(batch));
  }
  return out;
}

struct SimilarityMatrix {
  Eigen::MatrixXd values;  // rows: text items, cols: audio items
};

/// Scores every text against every audio item, embedding each side once.
inline SimilarityMatrix similarity_matrix(const EmbeddingModel& model, const std::vector<TextEmbedding>& texts,
                                          const std::vector<const AudioExperts*>& audio,
                                          const SequenceCaps& caps = {}) {
  require(!texts.empty() && !audio.empty(), "similarity_matrix needs non-empty batches");
  ad::NoGrad guard;
  const auto s = model.similarity(text_batch(texts, caps), audio_batches(model.config(), audio, caps));
  return {s->value};
}

inline double score(const EmbeddingModel& model, const TextEmbedding& text, const AudioExperts& audio,
                    const SequenceCaps& caps = {}) {
  return similarity_matrix(model, {text}, {&audio}, caps).values(0, 0);
}

inline double moee_score(const EmbeddingModel& model, const TextEmbedding& text, const AudioExperts& audio,
                         const SequenceCaps& caps = {}) {
  require(model.config().arch == Arch::moee, "moee_score needs a MoEE model");
  return score(model, text, audio, caps);
}

inline double ce_score(const EmbeddingModel& model, const TextEmbedding& text, const AudioExperts& audio,
                       const SequenceCaps& caps = {}) {
  require(model.config().arch == Arch::ce, "ce_score needs a CE model");
  return score(model, text, audio, caps);
}

inline double mmt_score(const EmbeddingModel& model, const TextEmbedding& text, const AudioExperts& audio,
                        const SequenceCaps& caps = {}) {
  require(model.config().arch == Arch::mmt, "mmt_score needs an MMT model");
  return score(model, text, audio, caps);
}

/// Applies a CE model's collaborative gate to per-expert vectors (all present).
inline std::map<std::string, Eigen::VectorXd> collaborative_gate(const std::map<std::string, Eigen::VectorXd>& vectors,
                                                                 const EmbeddingModel& model) {
  require(model.gate().has_value(), "collaborative_gate needs a CE model");
  require(!vectors.empty(), "collaborative_gate needs at least one expert vector");
  const auto& cfg = model.config();
  std::vector<ad::Var> inputs;
  ad::Matrix presence = ad::Matrix::Zero(1, static_cast<Eigen::Index>(cfg.experts.size()));
  for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
    const int dim = model.audio_vlad()[e].output_dim();
    if (auto it = vectors.find(cfg.experts[e].name); it != vectors.end()) {
      require(it->second.size() == dim, "expert vector '", it->first, "' has wrong size");
      inputs.push_back(ad::constant(it->second.transpose()));
      presence(0, static_cast<Eigen::Index>(e)) = 1.0;
    } else {
      inputs.push_back(ad::constant(ad::Matrix::Zero(1, dim)));
    }
  }
  for (const auto& [name, v] : vectors) cfg.expert_index(name);
  ad::NoGrad guard;
  const auto gated = model.gate()->forward(inputs, presence);
  std::map<std::string, Eigen::VectorXd> out;
  for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
    if (presence(0, static_cast<Eigen::Index>(e)) > 0.0) {
      out.emplace(cfg.experts[e].name, gated[e]->value.row(0).transpose());
    }
  }
  return out;
}

/// MMT per-expert outputs for one sample (present experts only).
inline std::map<std::string, Eigen::VectorXd> mmt_encode(const EmbeddingModel& model, const AudioExperts& audio,
                                                         const SequenceCaps& caps = {},
                                                         std::vector<ad::Matrix>* attention = nullptr) {
  ad::NoGrad guard;
  const auto batches = audio_batches(model.config(), {&audio}, caps);
  const auto out = model.mmt_encode(batches, attention);
  std::map<std::string, Eigen::VectorXd> result;
  for (std::size_t e = 0; e < out.size(); ++e) {
    if (batches[e].lengths[0] > 0) result.emplace(model.config().experts[e].name, out[e]->value.row(0).transpose());
  }
  return result;
}

}  // namespace audioret
