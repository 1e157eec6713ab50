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

// Optimizers over a ParamSet: Adam, RAdam and a Lookahead wrapper, plus the
// stepwise exponential learning-rate schedule.

#include <cmath>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "audioret/error.hpp"
#include "audioret/params.hpp"
#include "audioret/text.hpp"

namespace audioret {

/// lr(k) = lr0 * factor^floor(k / period), k counted in epochs or steps.
struct StepDecay {
  double lr0 = 0.01;
  double factor = 0.95;
  long period = 1;

  void validate() const {
    require(lr0 > 0.0, "learning rate must be positive");
    require(factor > 0.0 && factor <= 1.0, "decay factor must be in (0, 1], got ", factor);
    require(period >= 1, "decay period must be at least 1");
  }

  double at(long k) const { return lr0 * std::pow(factor, static_cast<double>(k / period)); }
};

struct OptimizerSettings {
  std::string kind = "radam";  // radam | adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int lookahead_k = 0;  // 0 disables lookahead
  double lookahead_alpha = 0.5;
  double sma_threshold = 5.0;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update using the gradients currently held by the parameters.
  virtual void step(double lr) = 0;
};

namespace detail {

struct Moments {
  ad::Matrix m;
  ad::Matrix v;
};

inline const ad::Matrix& grad_or_zero(const ad::Var& p, ad::Matrix& scratch) {
  if (p->grad.size() != 0) return p->grad;
  scratch = ad::Matrix::Zero(p->value.rows(), p->value.cols());
  return scratch;
}

}  // namespace detail

class Adam : public Optimizer {
 public:
  Adam(ParamSet& params, OptimizerSettings s) : params_(params), s_(s) { init(); }

  void step(double lr) override {
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    ad::Matrix scratch;
    std::size_t i = 0;
    for (auto& [name, p] : params_.entries()) {
      auto& st = state_[i++];
      const ad::Matrix& g = detail::grad_or_zero(p, scratch);
      st.m = s_.beta1 * st.m + (1.0 - s_.beta1) * g;
      st.v = s_.beta2 * st.v + (1.0 - s_.beta2) * g.cwiseProduct(g);
      if (s_.weight_decay != 0.0) p->value -= s_.weight_decay * lr * p->value;
      const ad::Matrix denom = ((st.v / bc2).array().sqrt() + s_.eps).matrix();
      p->value -= (lr / bc1) * st.m.cwiseQuotient(denom);
    }
  }

 private:
  void init() {
    for (auto& [name, p] : params_.entries()) {
      state_.push_back({ad::Matrix::Zero(p->value.rows(), p->value.cols()), ad::Matrix::Zero(p->value.rows(), p->value.cols())});
    }
  }

  ParamSet& params_;
  OptimizerSettings s_;
  long t_ = 0;
  std::vector<detail::Moments> state_;
};

/// Rectified Adam; the variance term is only used once the approximated SMA
/// length reaches `sma_threshold`, before that the update is momentum SGD.
class RAdam : public Optimizer {
 public:
  RAdam(ParamSet& params, OptimizerSettings s) : params_(params), s_(s) {
    for (auto& [name, p] : params_.entries()) {
      state_.push_back({ad::Matrix::Zero(p->value.rows(), p->value.cols()), ad::Matrix::Zero(p->value.rows(), p->value.cols())});
    }
  }

  void step(double lr) override {
    ++t_;
    const double t = static_cast<double>(t_);
    const double beta2_t = std::pow(s_.beta2, t);
    const double sma_max = 2.0 / (1.0 - s_.beta2) - 1.0;
    const double sma = sma_max - 2.0 * t * beta2_t / (1.0 - beta2_t);
    const double bc1 = 1.0 - std::pow(s_.beta1, t);
    const bool rectified = sma >= s_.sma_threshold;
    double step_size = 1.0 / bc1;
    if (rectified) {
      step_size = std::sqrt((1.0 - beta2_t) * (sma - 4.0) / (sma_max - 4.0) * (sma - 2.0) / sma * sma_max /
                            (sma_max - 2.0)) /
                  bc1;
    }
    ad::Matrix scratch;
    std::size_t i = 0;
    for (auto& [name, p] : params_.entries()) {
      auto& st = state_[i++];
      const ad::Matrix& g = detail::grad_or_zero(p, scratch);
      st.v = s_.beta2 * st.v + (1.0 - s_.beta2) * g.cwiseProduct(g);
      st.m = s_.beta1 * st.m + (1.0 - s_.beta1) * g;
      if (s_.weight_decay != 0.0) p->value -= s_.weight_decay * lr * p->value;
      if (rectified) {
        const ad::Matrix denom = (st.v.array().sqrt() + s_.eps).matrix();
        p->value -= (step_size * lr) * st.m.cwiseQuotient(denom);
      } else {
        p->value -= (step_size * lr) * st.m;
      }
    }
  }

 private:
  ParamSet& params_;
  OptimizerSettings s_;
  long t_ = 0;
  std::vector<detail::Moments> state_;
};

/// Every k inner steps: slow += alpha * (fast - slow), fast = slow.
class Lookahead : public Optimizer {
 public:
  Lookahead(ParamSet& params, std::unique_ptr<Optimizer> inner, int k, double alpha)
      : params_(params), inner_(std::move(inner)), k_(k), alpha_(alpha) {
    require(k >= 1, "lookahead k must be at least 1");
    require(alpha > 0.0 && alpha <= 1.0, "lookahead alpha must be in (0, 1]");
    for (auto& [name, p] : params_.entries()) slow_.push_back(p->value);
  }

  void step(double lr) override {
    inner_->step(lr);
    if (++count_ % k_ != 0) return;
    std::size_t i = 0;
    for (auto& [name, p] : params_.entries()) {
      auto& slow = slow_[i++];
      slow += alpha_ * (p->value - slow);
      p->value = slow;
    }
  }

 private:
  ParamSet& params_;
  std::unique_ptr<Optimizer> inner_;
  int k_;
  double alpha_;
  long count_ = 0;
  std::vector<ad::Matrix> slow_;
};

inline std::unique_ptr<Optimizer> make_optimizer(ParamSet& params, const OptimizerSettings& s) {
  std::unique_ptr<Optimizer> inner;
  const std::string kind = text::lower(s.kind);
  if (kind == "radam") {
    inner = std::make_unique<RAdam>(params, s);
  } else if (kind == "adam") {
    inner = std::make_unique<Adam>(params, s);
  } else {
    fail("unknown optimizer '", s.kind, "' (expected radam or adam)");
  }
  if (s.lookahead_k > 0) return std::make_unique<Lookahead>(params, std::move(inner), s.lookahead_k, s.lookahead_alpha);
  return inner;
}

}  // namespace audioret
