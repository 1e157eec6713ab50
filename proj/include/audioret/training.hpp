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

// Mini-batch training with the ranking loss, checkpoint selection on a
// validation split, checkpoints on disk, and pretrain -> finetune transfer.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <list>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "audioret/config.hpp"
#include "audioret/corpus.hpp"
#include "audioret/error.hpp"
#include "audioret/evaluation.hpp"
#include "audioret/experts.hpp"
#include "audioret/io.hpp"
#include "audioret/loss.hpp"
#include "audioret/models.hpp"
#include "audioret/optim.hpp"
#include "audioret/params.hpp"
#include "audioret/random.hpp"

namespace audioret {

// ---------------------------------------------------------------------------
// Text providers

class TextProvider {
 public:
  virtual ~TextProvider() = default;
  virtual int dim() const = 0;
  /// Token-level embedding of one caption (or free-form query).
  virtual TextEmbedding embed(const std::string& caption_id, const std::string& text) const = 0;
};

/// Static word vectors looked up per token.
class WordTableText : public TextProvider {
 public:
  explicit WordTableText(WordTable table) : table_(std::move(table)) {}
  int dim() const override { return table_.dim(); }
  TextEmbedding embed(const std::string& caption_id, const std::string& text) const override {
    return embed_tokens(text, table_, caption_id);
  }
  const WordTable& table() const { return table_; }

 private:
  WordTable table_;
};

/// Contextual token states precomputed by an external encoder, one XFEAT1
/// matrix per caption at `<root>/<caption_id>.mat`.
class PrecomputedTokenText : public TextProvider {
 public:
  PrecomputedTokenText(fs::path root, int dim) : root_(std::move(root)), dim_(dim) {
    require<IoError>(fs::is_directory(root_), "token directory not found: ", root_.string());
  }
  int dim() const override { return dim_; }
  TextEmbedding embed(const std::string& caption_id, const std::string&) const override {
    const fs::path p = root_ / (caption_id + ".mat");
    require<NotFound>(fs::exists(p), "no token embeddings for caption '", caption_id, "'");
    TextEmbedding out{caption_id, io::load_matrix(p), {}};
    require(out.tokens.cols() == dim_, "token embeddings for '", caption_id, "' have dim ", out.tokens.cols(),
            ", expected ", dim_);
    require(out.tokens.rows() >= 1, "no tokens for caption '", caption_id, "'");
    out.mask.assign(static_cast<std::size_t>(out.tokens.rows()), 1);
    return out;
  }

 private:
  fs::path root_;
  int dim_;
};

/// Runs an external encoder per caption. `{in}` in the command is replaced by
/// a file holding the text and `{out}` by the path where the encoder must write
/// an XFEAT1 token matrix.
class CommandText : public TextProvider {
 public:
  CommandText(std::string command, int dim) : command_(std::move(command)), dim_(dim) {
    require(command_.find("{in}") != std::string::npos && command_.find("{out}") != std::string::npos,
            "text encoder command needs {in} and {out} placeholders");
  }
  int dim() const override { return dim_; }
  TextEmbedding embed(const std::string& caption_id, const std::string& text) const override {
    require(!text::trim(text).empty(), "cannot embed empty text");
    const fs::path dir = fs::temp_directory_path();
    const std::string stem = "audioret_text_" + text::hex(text::fnv1a(caption_id + "\n" + text));
    const fs::path in = dir / (stem + ".txt");
    const fs::path out = dir / (stem + ".mat");
    io::write_text_atomic(in, text);
    std::string cmd = command_;
    replace_all(cmd, "{in}", in.string());
    replace_all(cmd, "{out}", out.string());
    const int rc = std::system(cmd.c_str());
    fs::remove(in);
    require<IoError>(rc == 0, "text encoder failed (exit ", rc, ") for caption '", caption_id, "'");
    TextEmbedding emb{caption_id, io::load_matrix(out), {}};
    fs::remove(out);
    require(emb.tokens.cols() == dim_, "text encoder returned dim ", emb.tokens.cols(), ", expected ", dim_);
    emb.mask.assign(static_cast<std::size_t>(emb.tokens.rows()), 1);
    return emb;
  }

 private:
  static void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) s.replace(p, from.size(), to);
  }

  std::string command_;
  int dim_;
};

// ---------------------------------------------------------------------------
// Configuration

/// Word and frame caps per dataset. MMT on Clotho uses 95 frames for both
/// audio experts; datasets without published caps fall back to 64.
inline SequenceCaps default_caps(std::string_view dataset, Arch arch) {
  SequenceCaps caps;
  const std::string d = text::lower(dataset);
  if (d == "audiocaps") {
    caps.words = 52;
    caps.frames = {{"vggish", 10}, {"vggsound", 32}};
  } else if (d == "clotho") {
    caps.words = 21;
    caps.frames = {{"vggish", arch == Arch::mmt ? 95 : 31}, {"vggsound", 95}};
  } else if (d == "sounddescs") {
    caps.words = 46;
    caps.frames = {{"vggish", 400}, {"vggsound", 400}};
  } else {
    caps.words = 64;
    caps.default_frames = 64;
  }
  return caps;
}

inline LossConfig default_loss(Arch arch) {
  LossConfig l;
  if (arch == Arch::mmt) {
    l.margin = 0.05;
    l.batch_size = 32;
  } else {
    l.margin = 0.2;
    l.batch_size = 128;
  }
  return l;
}

struct TrainConfig {
  Arch arch = Arch::ce;
  std::optional<long> epochs;
  std::optional<long> steps;
  StepDecay schedule;
  OptimizerSettings optimizer;
  std::uint64_t seed = 0;
  SequenceCaps caps;
  long eval_every = 1;  // in epochs or steps, matching the budget unit
  Split train_split = Split::train;
  Split selection_split = Split::val;
  bool allow_missing_experts = false;
  int eval_chunk = 256;

  static TrainConfig defaults(Arch arch) {
    TrainConfig c;
    c.arch = arch;
    if (arch == Arch::mmt) {
      c.steps = 50000;
      c.schedule = {5e-5, 0.95, 1000};
      c.optimizer.kind = "adam";
      c.optimizer.weight_decay = 0.0;
      c.optimizer.lookahead_k = 0;
      c.eval_every = 1000;
    } else {
      c.epochs = 20;
      c.schedule = {0.01, 0.95, 1};
      c.optimizer.kind = "radam";
      c.optimizer.weight_decay = 0.001;
      c.optimizer.lookahead_k = 5;
      c.optimizer.lookahead_alpha = 0.5;
      c.eval_every = 1;
    }
    return c;
  }

  bool step_based() const { return steps.has_value(); }

  void validate() const {
    require(epochs.has_value() != steps.has_value(), "exactly one of train.epochs and train.steps must be set");
    require(epochs.value_or(0) >= 0 && steps.value_or(0) >= 0, "training budget must be non-negative");
    schedule.validate();
    require(eval_every >= 1, "train.eval_every must be at least 1");
    require(eval_chunk >= 1, "train.eval_chunk must be at least 1");
  }

  Config to_config() const {
    Config c;
    c.set("train.arch", std::string(to_string(arch)));
    if (epochs) c.set("train.epochs", *epochs);
    if (steps) c.set("train.steps", *steps);
    c.set("train.lr", schedule.lr0);
    c.set("train.lr_decay", schedule.factor);
    c.set("train.lr_decay_period", schedule.period);
    c.set("train.optimizer", optimizer.kind);
    c.set("train.beta1", optimizer.beta1);
    c.set("train.beta2", optimizer.beta2);
    c.set("train.eps", optimizer.eps);
    c.set("train.weight_decay", optimizer.weight_decay);
    c.set("train.lookahead_k", optimizer.lookahead_k);
    c.set("train.lookahead_alpha", optimizer.lookahead_alpha);
    c.set("train.seed", seed);
    c.set("train.eval_every", eval_every);
    c.set("train.split", std::string(to_string(train_split)));
    c.set("train.selection_split", std::string(to_string(selection_split)));
    c.set("train.allow_missing_experts", allow_missing_experts ? "true" : "false");
    c.set("caps.words", caps.words);
    c.set("caps.default_frames", caps.default_frames);
    for (const auto& [e, n] : caps.frames) c.set("caps." + e, n);
    return c;
  }

  /// Starts from the architecture defaults (and dataset caps) and applies
  /// every `train.*` / `caps.*` key present in `c`.
  static TrainConfig from_config(const Config& c, std::string_view dataset = {}) {
    const Arch arch = parse_arch(c.get_string("train.arch", c.get_string("model.arch", "ce")));
    TrainConfig t = defaults(arch);
    t.caps = default_caps(dataset, arch);
    if (c.has("train.epochs")) {
      t.epochs = c.get_int("train.epochs", 0);
      t.steps.reset();
    }
    if (c.has("train.steps")) {
      t.steps = c.get_int("train.steps", 0);
      if (!c.has("train.epochs")) t.epochs.reset();
    }
    t.schedule.lr0 = c.get_double("train.lr", t.schedule.lr0);
    t.schedule.factor = c.get_double("train.lr_decay", t.schedule.factor);
    t.schedule.period = c.get_int("train.lr_decay_period", t.schedule.period);
    t.optimizer.kind = c.get_string("train.optimizer", t.optimizer.kind);
    t.optimizer.beta1 = c.get_double("train.beta1", t.optimizer.beta1);
    t.optimizer.beta2 = c.get_double("train.beta2", t.optimizer.beta2);
    t.optimizer.eps = c.get_double("train.eps", t.optimizer.eps);
    t.optimizer.weight_decay = c.get_double("train.weight_decay", t.optimizer.weight_decay);
    t.optimizer.lookahead_k = static_cast<int>(c.get_int("train.lookahead_k", t.optimizer.lookahead_k));
    t.optimizer.lookahead_alpha = c.get_double("train.lookahead_alpha", t.optimizer.lookahead_alpha);
    t.seed = static_cast<std::uint64_t>(c.get_int("train.seed", static_cast<long long>(t.seed)));
    t.eval_every = c.get_int("train.eval_every", t.eval_every);
    t.eval_chunk = static_cast<int>(c.get_int("train.eval_chunk", t.eval_chunk));
    if (auto s = c.get("train.split")) t.train_split = parse_split(*s);
    if (auto s = c.get("train.selection_split")) t.selection_split = parse_split(*s);
    t.allow_missing_experts = c.get_bool("train.allow_missing_experts", t.allow_missing_experts);
    t.caps.words = static_cast<int>(c.get_int("caps.words", t.caps.words));
    const Config caps_keys = c.section("caps");
    for (const auto& [k, v] : caps_keys.entries()) {
      if (k == "default_frames") {
        t.caps.default_frames = static_cast<int>(text::to_int(v, "caps." + k));
      } else if (k != "words") {
        t.caps.frames[text::lower(k)] = static_cast<int>(text::to_int(v, "caps." + k));
      }
    }
    return t;
  }
};

inline LossConfig loss_from_config(const Config& c, Arch arch) {
  LossConfig l = default_loss(arch);
  l.margin = c.get_double("loss.margin", l.margin);
  l.batch_size = static_cast<int>(c.get_int("loss.batch_size", l.batch_size));
  return l;
}

// ---------------------------------------------------------------------------
// Data access

struct TrainData {
  const Corpus& corpus;
  const FeatureSource& features;
  const TextProvider& text;
};

/// Feature streams of one sample for every configured expert. Missing experts
/// are an error unless `allow_missing`; a sample with none is always an error.
inline AudioExperts load_audio(const ModelConfig& cfg, const FeatureSource& features, const std::string& sample_id,
                               bool allow_missing) {
  AudioExperts out;
  for (const auto& e : cfg.experts) {
    if (!features.contains(sample_id, e.name)) {
      require<NotFound>(allow_missing, "missing features for sample '", sample_id, "' (expert '", e.name, "')");
      continue;
    }
    auto stream = features.fetch(sample_id, e.name);
    detail::check_stream(stream, e.dim);
    out.emplace(e.name, std::move(stream));
  }
  require<NotFound>(!out.empty(), "no expert features for sample '", sample_id, "'");
  return out;
}

/// Audio-side embeddings of `ids`, computed in chunks without gradients.
inline AudioSide embed_audio(const EmbeddingModel& model, const FeatureSource& features,
                             const std::vector<std::string>& ids, const SequenceCaps& caps, bool allow_missing,
                             int chunk = 256) {
  require(!ids.empty(), "no audio items to embed");
  ad::NoGrad guard;
  const std::size_t n = model.config().experts.size();
  std::vector<ad::Matrix> parts(n);
  AudioSide side;
  side.presence.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(n));
  const int width = model.config().embed_dim();
  for (auto& p : parts) p.resize(static_cast<Eigen::Index>(ids.size()), width);
  for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(ids.size(), start + static_cast<std::size_t>(chunk));
    std::vector<AudioExperts> items;
    for (std::size_t i = start; i < end; ++i) items.push_back(load_audio(model.config(), features, ids[i], allow_missing));
    std::vector<const AudioExperts*> ptrs;
    for (const auto& it : items) ptrs.push_back(&it);
    const auto s = model.encode_audio(audio_batches(model.config(), ptrs, caps));
    const auto rows = static_cast<Eigen::Index>(end - start);
    for (std::size_t e = 0; e < n; ++e) parts[e].middleRows(static_cast<Eigen::Index>(start), rows) = s.experts[e]->value;
    side.presence.middleRows(static_cast<Eigen::Index>(start), rows) = s.presence;
  }
  for (auto& p : parts) side.experts.push_back(ad::constant(std::move(p)));
  return side;
}

/// Scores caption texts against a precomputed audio side, in chunks of captions.
inline Eigen::MatrixXd score_texts(const EmbeddingModel& model, const TextProvider& provider,
                                   const std::vector<std::string>& caption_ids, const std::vector<std::string>& texts,
                                   const AudioSide& audio, const SequenceCaps& caps, int chunk = 256) {
  ad::NoGrad guard;
  Eigen::MatrixXd s(static_cast<Eigen::Index>(texts.size()), audio.presence.rows());
  for (std::size_t start = 0; start < texts.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(texts.size(), start + static_cast<std::size_t>(chunk));
    std::vector<TextEmbedding> emb;
    for (std::size_t i = start; i < end; ++i) emb.push_back(provider.embed(caption_ids[i], texts[i]));
    const auto side = model.encode_text(text_batch(emb, caps));
    s.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        combine_similarity(side, audio)->value;
  }
  return s;
}

struct EvalResult {
  EvalPool pool;
  Eigen::MatrixXd similarity;  // captions x audio
  MetricsReport t2a;
  MetricsReport a2t;
};

/// Both-direction metrics on one split: captions query the split's audio and
/// audio items query the split's captions.
inline EvalResult evaluate_split(const EmbeddingModel& model, const TrainData& data, Split split,
                                 const SequenceCaps& caps, bool allow_missing = false, int chunk = 256) {
  EvalResult r;
  r.pool = make_pool(data.corpus, split);
  require(!r.pool.caption_ids.empty(), "split '", std::string(to_string(split)), "' has no captions");
  const auto audio = embed_audio(model, data.features, r.pool.sample_ids, caps, allow_missing, chunk);
  r.similarity = score_texts(model, data.text, r.pool.caption_ids, r.pool.caption_texts, audio, caps, chunk);
  r.t2a = compute_metrics(r.similarity, t2a_ground_truth(r.pool));
  r.a2t = compute_metrics(r.similarity.transpose(), a2t_ground_truth(r.pool));
  return r;
}

// ---------------------------------------------------------------------------
// Batching

/// Shuffles pair indices and packs them into batches of `batch_size` in which
/// no sample appears twice; a pair that would collide is deferred to a later
/// batch. Pairs left over at the end are dropped.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<int>& pair_sample, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(pair_sample.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const auto cap = static_cast<std::size_t>(batch_size);
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> batch;
  std::unordered_set<int> in_batch;
  std::list<std::size_t> deferred;
  auto refill = [&] {
    for (auto it = deferred.begin(); it != deferred.end() && batch.size() < cap;) {
      if (in_batch.insert(pair_sample[*it]).second) {
        batch.push_back(*it);
        it = deferred.erase(it);
      } else {
        ++it;
      }
    }
  };
  auto flush = [&] {
    while (batch.size() == cap) {
      out.push_back(std::move(batch));
      batch.clear();
      in_batch.clear();
      refill();
    }
  };
  for (std::size_t idx : order) {
    if (in_batch.insert(pair_sample[idx]).second) {
      batch.push_back(idx);
    } else {
      deferred.push_back(idx);
    }
    flush();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct HistoryEntry {
  long step = 0;  // epochs or optimizer steps completed
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  MetricsReport t2a;
  MetricsReport a2t;
};

struct Checkpoint {
  std::unique_ptr<EmbeddingModel> model;
  TrainConfig train;
  LossConfig loss;
  std::vector<HistoryEntry> history;
  std::size_t best = 0;
  double selection_score = 0.0;
  std::vector<std::string> warnings;

  Config manifest() const {
    Config m = model->config().to_config();
    m.merge(train.to_config());
    m.set("loss.margin", loss.margin);
    m.set("loss.batch_size", loss.batch_size);
    m.set("model.seed", model->seed());
    m.set("checkpoint.best", best);
    m.set("checkpoint.selection_score", selection_score);
    m.set("checkpoint.history_size", history.size());
    for (std::size_t i = 0; i < history.size(); ++i) {
      const auto& h = history[i];
      std::ostringstream os;
      os.precision(17);
      os << h.step << ',' << h.train_loss << ',' << h.t2a.r1 << ',' << h.t2a.r5 << ',' << h.t2a.r10 << ','
         << h.t2a.r50 << ',' << h.t2a.medr << ',' << h.t2a.meanr << ',' << h.t2a.pool_size;
      m.set("history." + std::to_string(i), os.str());
    }
    return m;
  }

  void save(const fs::path& path) const {
    require(model != nullptr, "checkpoint has no model");
    save_archive(path, Archive{manifest(), model->params().values()});
  }

  static Checkpoint load(const fs::path& path) {
    auto archive = load_archive(path);
    const Config& m = archive.manifest;
    Checkpoint ck;
    const auto model_cfg = ModelConfig::from_config(m);
    ck.model = std::make_unique<EmbeddingModel>(model_cfg, static_cast<std::uint64_t>(m.get_int("model.seed", 0)));
    ck.model->params().assign(archive.tensors);
    ck.train = TrainConfig::from_config(m);
    ck.train.caps = SequenceCaps{};
    ck.train.caps.words = static_cast<int>(m.get_int("caps.words", 0));
    const Config caps_keys = m.section("caps");
    for (const auto& [k, v] : caps_keys.entries()) {
      if (k == "default_frames") {
        ck.train.caps.default_frames = static_cast<int>(text::to_int(v, "caps." + k));
      } else if (k != "words") {
        ck.train.caps.frames[k] = static_cast<int>(text::to_int(v, "caps." + k));
      }
    }
    ck.loss.margin = m.get_double("loss.margin", ck.loss.margin);
    ck.loss.batch_size = static_cast<int>(m.get_int("loss.batch_size", ck.loss.batch_size));
    ck.best = static_cast<std::size_t>(m.get_int("checkpoint.best", 0));
    ck.selection_score = m.get_double("checkpoint.selection_score", 0.0);
    const auto n = m.get_int("checkpoint.history_size", 0);
    for (long long i = 0; i < n; ++i) {
      const auto f = text::split(m.require_string("history." + std::to_string(i)), ',');
      require(f.size() == 9, "malformed history entry ", i, " in ", path.string());
      HistoryEntry h;
      h.step = static_cast<long>(text::to_int(f[0], "history step"));
      h.train_loss = text::to_double(f[1], "history loss");
      h.t2a.r1 = text::to_double(f[2], "R@1");
      h.t2a.r5 = text::to_double(f[3], "R@5");
      h.t2a.r10 = text::to_double(f[4], "R@10");
      h.t2a.r50 = text::to_double(f[5], "R@50");
      h.t2a.medr = text::to_double(f[6], "medR");
      h.t2a.meanr = text::to_double(f[7], "meanR");
      h.t2a.pool_size = static_cast<int>(text::to_int(f[8], "pool size"));
      ck.history.push_back(h);
    }
    return ck;
  }
};

struct TrainHooks {
  std::ostream* log = nullptr;  // line-delimited training log
  std::function<void(const std::string&)> warn;
};

inline std::string training_log_header() { return "step,split,loss,R@1,R@5,R@10,medR,meanR"; }

namespace detail {

inline void emit_warning(const TrainHooks& hooks, std::vector<std::string>& sink, std::string msg) {
  if (hooks.warn) hooks.warn(msg);
  sink.push_back(std::move(msg));
}

inline std::string log_number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Runs the optimization loop on an already-initialized model.
inline Checkpoint run_training(std::unique_ptr<EmbeddingModel> model, const TrainData& data, const TrainConfig& cfg,
                               const LossConfig& loss, const TrainHooks& hooks, std::vector<std::string> warnings) {
  cfg.validate();
  loss.validate();
  const ModelConfig& mcfg = model->config();
  require(mcfg.arch == cfg.arch, "model architecture ", std::string(to_string(mcfg.arch)),
          " does not match training architecture ", std::string(to_string(cfg.arch)));
  require(data.text.dim() == mcfg.text_dim, "text provider dim ", data.text.dim(), " != model text dim ",
          mcfg.text_dim);

  // Training pairs: every caption of every training sample, in corpus order.
  std::vector<std::string> sample_ids = data.corpus.split_ids(cfg.train_split);
  std::unordered_map<std::string, int> sample_pos;
  for (std::size_t i = 0; i < sample_ids.size(); ++i) sample_pos.emplace(sample_ids[i], static_cast<int>(i));
  std::vector<int> pair_sample;
  std::vector<const CaptionRecord*> pair_caption;
  for (const auto& c : data.corpus.captions) {
    const auto it = sample_pos.find(c.sample_id);
    if (it == sample_pos.end()) continue;
    pair_sample.push_back(it->second);
    pair_caption.push_back(&c);
  }
  std::unordered_set<int> distinct(pair_sample.begin(), pair_sample.end());
  const long budget = cfg.step_based() ? *cfg.steps : *cfg.epochs;
  if (budget > 0) {
    require(static_cast<int>(distinct.size()) >= loss.batch_size, "batch size ", loss.batch_size, " exceeds the ",
            distinct.size(), " distinct captioned training samples of ", data.corpus.name);
  }

  // Fail early on missing features rather than mid-epoch.
  for (int s : distinct) {
    const auto& id = sample_ids[static_cast<std::size_t>(s)];
    bool any = false;
    for (const auto& e : mcfg.experts) {
      const bool has = data.features.contains(id, e.name);
      require<NotFound>(has || cfg.allow_missing_experts, "missing features for sample '", id, "' (expert '", e.name,
                        "')");
      any = any || has;
    }
    require<NotFound>(any, "no expert features for sample '", id, "'");
  }

  auto optimizer = make_optimizer(model->params(), cfg.optimizer);
  Rng rng(mix_seed(cfg.seed, 0x7a11ULL));

  Checkpoint ck;
  ck.train = cfg;
  ck.loss = loss;
  TensorMap best_values;
  double best_score = -1.0;

  if (hooks.log) *hooks.log << training_log_header() << '\n';

  const bool can_select = data.corpus.count(cfg.selection_split) > 0;
  if (!can_select) {
    detail::emit_warning(hooks, warnings, "no '" + std::string(to_string(cfg.selection_split)) + "' samples in " +
                                              data.corpus.name + "; keeping the final parameters");
  }

  auto evaluate = [&](long step, double train_loss) {
    if (!can_select) {
      if (hooks.log) *hooks.log << step << ",train," << log_number(train_loss) << ",,,,,\n";
      best_values = model->params().values();
      ck.best = ck.history.size();
      HistoryEntry h;
      h.step = step;
      h.train_loss = train_loss;
      ck.history.push_back(std::move(h));
      return;
    }
    const auto r = evaluate_split(*model, data, cfg.selection_split, cfg.caps, cfg.allow_missing_experts, cfg.eval_chunk);
    HistoryEntry h{step, train_loss, r.t2a, r.a2t};
    const double score = selection_score(r.t2a);
    if (hooks.log) {
      *hooks.log << step << ",train," << log_number(train_loss) << ",,,,,\n";
      *hooks.log << step << ',' << to_string(cfg.selection_split) << ",," << log_number(r.t2a.r1) << ','
                 << log_number(r.t2a.r5) << ',' << log_number(r.t2a.r10) << ',' << log_number(r.t2a.medr) << ','
                 << log_number(r.t2a.meanr) << '\n';
      hooks.log->flush();
    }
    if (score > best_score) {
      best_score = score;
      best_values = model->params().values();
      ck.best = ck.history.size();
    }
    ck.history.push_back(std::move(h));
  };

  long step = 0;
  double loss_sum = 0.0;
  long loss_count = 0;
  auto train_step = [&](const std::vector<std::size_t>& batch, double lr, long epoch) {
    std::vector<TextEmbedding> texts;
    std::vector<AudioExperts> audio;
    for (std::size_t p : batch) {
      texts.push_back(data.text.embed(pair_caption[p]->caption_id, pair_caption[p]->text));
      audio.push_back(load_audio(mcfg, data.features, sample_ids[static_cast<std::size_t>(pair_sample[p])],
                                 cfg.allow_missing_experts));
    }
    std::vector<const AudioExperts*> items;
    for (const auto& a : audio) items.push_back(&a);
    model->params().zero_grad();
    const auto s = model->similarity(text_batch(texts, cfg.caps), audio_batches(mcfg, items, cfg.caps));
    const auto l = ad::ranking_loss(s, loss.margin);
    const double value = l->value(0, 0);
    if (!std::isfinite(value)) {
      double largest = 0.0;
      for (const auto& [name, p] : model->params().entries()) {
        largest = std::max(largest, p->value.cwiseAbs().maxCoeff());
      }
      fail<Diverged>("non-finite loss at step ", step, " (epoch ", epoch, ", lr ", lr, ", largest |param| ", largest,
                     ", first sample '", sample_ids[static_cast<std::size_t>(pair_sample[batch.front()])], "')");
    }
    ad::backward(l);
    optimizer->step(lr);
    ++step;
    loss_sum += value;
    ++loss_count;
  };
  auto take_loss = [&] {
    const double v = loss_count ? loss_sum / static_cast<double>(loss_count) : std::numeric_limits<double>::quiet_NaN();
    loss_sum = 0.0;
    loss_count = 0;
    return v;
  };

  evaluate(0, std::numeric_limits<double>::quiet_NaN());
  if (!cfg.step_based()) {
    for (long epoch = 1; epoch <= budget; ++epoch) {
      const double lr = cfg.schedule.at(epoch - 1);
      for (const auto& batch : make_batches(pair_sample, loss.batch_size, rng)) train_step(batch, lr, epoch);
      if (epoch % cfg.eval_every == 0 || epoch == budget) evaluate(epoch, take_loss());
    }
  } else {
    long epoch = 0;
    while (step < budget) {
      ++epoch;
      const auto batches = make_batches(pair_sample, loss.batch_size, rng);
      require(!batches.empty(), "no complete training batch");
      for (const auto& batch : batches) {
        train_step(batch, cfg.schedule.at(step), epoch);
        if (step % cfg.eval_every == 0 || step == budget) evaluate(step, take_loss());
        if (step >= budget) break;
      }
    }
  }

  model->params().assign(best_values);
  ck.model = std::move(model);
  ck.selection_score = can_select ? best_score : std::numeric_limits<double>::quiet_NaN();
  ck.warnings = std::move(warnings);
  return ck;
}

}  // namespace detail

/// Trains a freshly initialized model (seeded by cfg.seed) and returns the
/// checkpoint with the best selection score on cfg.selection_split.
inline Checkpoint train(const ModelConfig& model_cfg, const TrainData& data, const TrainConfig& cfg,
                        const LossConfig& loss, const TrainHooks& hooks = {}) {
  cfg.validate();
  auto model = std::make_unique<EmbeddingModel>(model_cfg, cfg.seed);
  return detail::run_training(std::move(model), data, cfg, loss, hooks, {});
}

/// Initializes `target` from the checkpoint's tensors where names and shapes
/// agree, reinitializes the rest, drops surplus expert branches, then trains.
inline Checkpoint finetune(const Checkpoint& source, const ModelConfig& target, const TrainData& data,
                           const TrainConfig& cfg, const LossConfig& loss, const TrainHooks& hooks = {}) {
  require(source.model != nullptr, "checkpoint has no model");
  const Arch from = source.model->config().arch;
  require(from == target.arch && from == cfg.arch, "architecture mismatch: checkpoint is ",
          std::string(to_string(from)), ", target is ", std::string(to_string(target.arch)));
  cfg.validate();
  auto model = std::make_unique<EmbeddingModel>(target, cfg.seed);
  const auto report = model->load_compatible(source.model->params().values());
  std::vector<std::string> warnings;
  for (const auto& name : report.dropped) {
    detail::emit_warning(hooks, warnings, "dropping checkpoint tensor '" + name + "' (not used by the target model)");
  }
  for (const auto& name : report.reinitialized) {
    detail::emit_warning(hooks, warnings, "reinitializing '" + name + "' (absent or shape-incompatible in checkpoint)");
  }
  return detail::run_training(std::move(model), data, cfg, loss, hooks, std::move(warnings));
}

}  // namespace audioret
