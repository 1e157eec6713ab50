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

// Shared test helpers: finite-difference gradient checks, random inputs, and
// a plain-Eigen re-implementation of the model forward passes that reads
// parameters by name and shares no code with the library's layers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <system_error>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Core>

#include "audioret/audioret.hpp"

namespace testing_support {

using namespace audioret;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("audioret_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline Mat random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline FeatureMatrix random_frames(Rng& rng, Eigen::Index t, Eigen::Index d) {
  return random_matrix(rng, t, d).cast<float>();
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(const Mat& a, const Mat& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale < 1e-10) return 0.0;
  return (a - b).norm() / scale;
}

/// Largest per-tensor relative error between back-propagated gradients and
/// central differences (step h) of `loss` with respect to every parameter.
inline double gradient_error(ParamSet& params, const std::function<ad::Var()>& loss, double h = 1e-5) {
  params.zero_grad();
  ad::backward(loss());
  std::vector<Mat> analytic;
  for (const auto& [name, p] : params.entries()) {
    analytic.push_back(p->grad.size() ? p->grad : Mat::Zero(p->value.rows(), p->value.cols()));
  }
  double worst = 0.0;
  std::size_t k = 0;
  ad::NoGrad guard;
  for (const auto& [name, p] : params.entries()) {
    Mat numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss()->value(0, 0);
      x = saved - h;
      const double down = loss()->value(0, 0);
      x = saved;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic[k++], numeric));
  }
  return worst;
}

/// Scalar probe of a matrix-valued output: sum(out .* weights).
inline ad::Var probe(const ad::Var& out, const Mat& weights) {
  return ad::sum(ad::mul(out, ad::constant(weights)));
}

/// Small shapes for gradient checks (D <= 8, T <= 5).
inline ModelConfig tiny_config(Arch arch, int experts = 2) {
  ModelConfig m;
  m.arch = arch;
  const int dims[] = {3, 5, 4};
  for (int e = 0; e < experts; ++e) {
    m.experts.push_back({"x" + std::to_string(e), dims[e], ExpertKind::audio});
  }
  m.text_dim = 4;
  m.joint_dim = 4;
  m.text_clusters = 2;
  m.text_ghosts = 1;
  m.audio_clusters = 2;
  m.audio_ghosts = 0;
  m.ce_proj_dim = 3;
  m.mmt_layers = 1;
  m.mmt_heads = 2;
  m.mmt_width = 4;
  m.mmt_ff = 6;
  m.mmt_max_positions = 8;
  return m;
}

inline TextEmbedding random_text(Rng& rng, int dim, int max_tokens = 5) {
  const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_tokens)));
  TextEmbedding e{"c", random_frames(rng, t, dim), std::vector<std::uint8_t>(static_cast<std::size_t>(t), 1)};
  return e;
}

inline AudioExperts random_audio(Rng& rng, const ModelConfig& cfg, int max_frames = 5) {
  AudioExperts a;
  for (const auto& e : cfg.experts) {
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_frames)));
    a.emplace(e.name, FeatureStream{"s", e.name, random_frames(rng, t, e.dim)});
  }
  return a;
}

/// Re-randomizes every parameter (zero-initialized biases included).
inline void scramble(ParamSet& params, Rng& rng, double scale = 0.5) {
  for (const auto& [name, p] : params.entries()) p->value = random_matrix(rng, p->value.rows(), p->value.cols(), scale);
}

// ---------------------------------------------------------------------------
// Reference forward passes

inline PaddedBatch single_row(const FeatureMatrix& frames, int max_len = 0) {
  auto b = PaddedBatch::zeros(1, max_len > 0 ? max_len : static_cast<int>(frames.rows()), static_cast<int>(frames.cols()));
  b.set_row(0, frames);
  return b;
}

inline EmbeddingModel random_model(Arch arch, Rng& rng, int experts = 2, bool scrambled = true) {
  EmbeddingModel m(tiny_config(arch, experts), rng.next());
  if (scrambled) scramble(m.params(), rng);
  return m;
}

/// n samples with one caption each and no split assignment.
inline Corpus unsplit(std::size_t n, const std::string& prefix = "s") {
  Corpus c;
  c.name = "gen";
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = prefix + std::to_string(i);
    c.samples.push_back({id, 1.0 + static_cast<double>(i % 7), {}, Split::unassigned});
    c.captions.push_back({id + "#0", id, "caption number " + std::to_string(i)});
  }
  return c;
}

namespace oracle {

inline Vec sigmoid(const Vec& x) {
  Vec y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) y(i) = 1.0 / (1.0 + std::exp(-x(i)));
  return y;
}

inline Vec normalized(const Vec& v) {
  const double n = v.norm();
  return n > 1e-12 ? Vec(v / n) : Vec(v / 1e-12);
}

struct Params {
  TensorMap values;
  const Mat& operator[](const std::string& name) const {
    const auto it = values.find(name);
    if (it == values.end()) throw std::runtime_error("oracle: missing parameter " + name);
    return it->second;
  }
};

/// NetVLAD over the rows of x (T x D).
inline Vec netvlad(const Mat& x, const Params& p, const std::string& prefix, int clusters) {
  const Mat& c = p[prefix + ".centers"];
  const Mat& w = p[prefix + ".assign_w"];
  const Mat& b = p[prefix + ".assign_b"];
  const Eigen::Index d = x.cols();
  Mat v = Mat::Zero(clusters, d);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    Vec logits = (x.row(t) * w + b).transpose();
    logits.array() -= logits.maxCoeff();
    Vec a = logits.array().exp();
    a /= a.sum();
    for (int k = 0; k < clusters; ++k) v.row(k) += a(k) * (x.row(t) - c.row(k));
  }
  Vec flat(clusters * d);
  for (int k = 0; k < clusters; ++k) flat.segment(k * d, d) = normalized(v.row(k).transpose());
  return normalized(flat);
}

inline Vec gated(const Vec& x, const Params& p, const std::string& prefix) {
  const Vec y1 = p[prefix + ".w1"] * x + p[prefix + ".b1"].transpose();
  const Vec gate = sigmoid(p[prefix + ".w2"] * y1 + p[prefix + ".b2"].transpose());
  return normalized(y1.cwiseProduct(gate));
}

/// Collaborative gate over the present experts (names in model order).
inline std::map<std::string, Vec> ce_gate(const std::map<std::string, Vec>& in, const std::vector<std::string>& order,
                                          const Params& p) {
  std::map<std::string, Vec> reduced;
  for (const auto& [e, v] : in) reduced[e] = p["ce." + e + ".reduce.w"] * v + p["ce." + e + ".reduce.b"].transpose();
  auto pair = [&](const Vec& a, const Vec& b) {
    Vec cat(a.size() + b.size());
    cat << a, b;
    Vec h = p["ce.pair.w1"] * cat + p["ce.pair.b1"].transpose();
    h = h.cwiseMax(0.0);
    return Vec(p["ce.pair.w2"] * h + p["ce.pair.b2"].transpose());
  };
  std::map<std::string, Vec> out;
  for (const auto& i : order) {
    if (!in.count(i)) continue;
    Vec sum = Vec::Zero(reduced[i].size());
    int partners = 0;
    for (const auto& j : order) {
      if (j == i || !in.count(j)) continue;
      sum += pair(reduced[i], reduced[j]);
      ++partners;
    }
    if (partners == 0) sum = pair(reduced[i], reduced[i]);
    const Vec mask = sigmoid(p["ce." + i + ".mask.w"] * sum + p["ce." + i + ".mask.b"].transpose());
    out[i] = in.at(i).cwiseProduct(mask);
  }
  return out;
}

inline Mat layer_norm(const Mat& x, const Mat& g, const Mat& b) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    y.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(g) + b;
  }
  return y;
}

inline Mat softmax_rows(Mat m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    m.row(r).array() -= m.row(r).maxCoeff();
    m.row(r) = m.row(r).array().exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

inline double gelu(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

/// MMT aggregation states for the present experts.
inline std::map<std::string, Vec> mmt(const std::map<std::string, Mat>& frames, const ModelConfig& cfg, const Params& p) {
  std::vector<Mat> blocks;
  std::map<std::string, Eigen::Index> agg;
  Eigen::Index offset = 0;
  const Mat& pos = p["mmt.positions"];
  for (const auto& e : cfg.experts) {
    const auto it = frames.find(e.name);
    if (it == frames.end()) continue;
    const Mat& x = it->second;
    const std::string pre = "mmt." + e.name;
    Mat tok(x.rows(), cfg.mmt_width);
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      tok.row(t) = x.row(t) * p[pre + ".proj.w"].transpose() + p[pre + ".proj.b"] + p[pre + ".type"] + pos.row(t);
    }
    blocks.push_back(p[pre + ".agg"]);
    blocks.push_back(tok);
    agg[e.name] = offset;
    offset += 1 + x.rows();
  }
  Mat h(offset, cfg.mmt_width);
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    h.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  const int dh = cfg.mmt_width / cfg.mmt_heads;
  for (int l = 0; l < cfg.mmt_layers; ++l) {
    const std::string b = "mmt.block" + std::to_string(l);
    auto lin = [&](const Mat& x, const std::string& w, const std::string& bias) {
      Mat y = x * p[b + w].transpose();
      y.rowwise() += p[b + bias].row(0);
      return y;
    };
    const Mat n1 = layer_norm(h, p[b + ".ln1.g"], p[b + ".ln1.b"]);
    const Mat q = lin(n1, ".attn.wq", ".attn.bq");
    const Mat k = lin(n1, ".attn.wk", ".attn.bk");
    const Mat v = lin(n1, ".attn.wv", ".attn.bv");
    Mat heads(h.rows(), cfg.mmt_width);
    for (int hd = 0; hd < cfg.mmt_heads; ++hd) {
      const Mat a = softmax_rows(q.middleCols(hd * dh, dh) * k.middleCols(hd * dh, dh).transpose() / std::sqrt(double(dh)));
      heads.middleCols(hd * dh, dh) = a * v.middleCols(hd * dh, dh);
    }
    h += lin(heads, ".attn.wo", ".attn.bo");
    const Mat n2 = layer_norm(h, p[b + ".ln2.g"], p[b + ".ln2.b"]);
    Mat f = lin(n2, ".ff.w1", ".ff.b1").unaryExpr([](double x) { return gelu(x); });
    h += lin(f, ".ff.w2", ".ff.b2");
  }
  std::map<std::string, Vec> out;
  for (const auto& [e, row] : agg) out[e] = h.row(row).transpose();
  return out;
}

/// Full model score for one (text, audio) pair.
inline double score(const EmbeddingModel& model, const TextEmbedding& text, const AudioExperts& audio) {
  const ModelConfig& cfg = model.config();
  const Params p{model.params().values()};
  Mat words(0, text.tokens.cols());
  for (Eigen::Index t = 0; t < text.tokens.rows(); ++t) {
    if (!text.mask[static_cast<std::size_t>(t)]) continue;
    words.conservativeResize(words.rows() + 1, Eigen::NoChange);
    words.row(words.rows() - 1) = text.tokens.row(t).cast<double>();
  }
  Vec pooled;
  if (cfg.arch == Arch::mmt) {
    pooled = words.rows() ? Vec(words.colwise().mean().transpose()) : Vec::Zero(cfg.text_dim);
  } else {
    pooled = words.rows() ? netvlad(words, p, "text.vlad", cfg.text_clusters) : Vec::Zero(cfg.text_clusters * cfg.text_dim);
  }

  std::map<std::string, Vec> audio_emb;
  if (cfg.arch == Arch::mmt) {
    std::map<std::string, Mat> frames;
    for (const auto& [e, s] : audio) frames[e] = s.matrix.cast<double>();
    for (auto& [e, v] : mmt(frames, cfg, p)) audio_emb[e] = normalized(v);
  } else {
    std::map<std::string, Vec> pooled_audio;
    for (const auto& [e, s] : audio) pooled_audio[e] = netvlad(s.matrix.cast<double>(), p, "audio." + e + ".vlad", cfg.audio_clusters);
    if (cfg.arch == Arch::ce) pooled_audio = ce_gate(pooled_audio, cfg.expert_names(), p);
    for (const auto& [e, v] : pooled_audio) audio_emb[e] = gated(v, p, "audio." + e + ".unit");
  }

  double num = 0.0, den = 0.0;
  Vec logits(static_cast<Eigen::Index>(cfg.experts.size()));
  for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
    const std::string& name = cfg.experts[e].name;
    logits(static_cast<Eigen::Index>(e)) = (p["text." + name + ".mix.w"] * pooled)(0) + p["text." + name + ".mix.b"](0, 0);
  }
  const double mx = logits.maxCoeff();
  for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
    const std::string& name = cfg.experts[e].name;
    if (!audio_emb.count(name)) continue;
    const double w = std::exp(logits(static_cast<Eigen::Index>(e)) - mx);
    const Vec t = gated(pooled, p, "text." + name + ".unit");
    num += w * t.dot(audio_emb[name]);
    den += w;
  }
  return num / den;
}

// Brute-force ranking reference: sorts (score, id) pairs per query and scans.

struct BruteReport {
  double r1, r5, r10, r50, medr, meanr;
};

inline int brute_rank(const Eigen::RowVectorXd& scores, const std::vector<int>& relevant) {
  std::vector<std::pair<double, int>> items;
  for (int k = 0; k < scores.size(); ++k) items.emplace_back(scores(k), k);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t pos = 0; pos < items.size(); ++pos) {
    if (std::find(relevant.begin(), relevant.end(), items[pos].second) != relevant.end()) {
      return static_cast<int>(pos) + 1;
    }
  }
  return -1;
}

inline BruteReport brute_metrics(const Mat& s, const std::vector<std::vector<int>>& rel) {
  std::vector<int> ranks;
  for (Eigen::Index q = 0; q < s.rows(); ++q) ranks.push_back(brute_rank(s.row(q), rel[static_cast<std::size_t>(q)]));
  const double n = static_cast<double>(ranks.size());
  auto recall = [&](int k) {
    int hit = 0;
    for (int r : ranks) hit += r <= k ? 1 : 0;
    return 100.0 * hit / n;
  };
  std::vector<int> sorted = ranks;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>((ranks.size() - 1) / 2), sorted.end());
  double total = 0.0;
  for (int r : ranks) total += r;
  return {recall(1), recall(5), recall(10), recall(50), static_cast<double>(sorted[(ranks.size() - 1) / 2]), total / n};
}

}  // namespace oracle
}  // namespace testing_support
