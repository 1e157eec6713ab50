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

// Bidirectional max-margin ranking loss over an in-batch similarity matrix.

#include <limits>

#include <Eigen/Core>

#include "audioret/autograd.hpp"
#include "audioret/error.hpp"

namespace audioret {

struct LossConfig {
  double margin = 0.2;
  int batch_size = 128;

  void validate() const {
    require(margin > 0.0, "margin must be positive, got ", margin);
    require(batch_size >= 2, "batch size must be at least 2, got ", batch_size);
  }
};

namespace detail {

inline void check_similarity(const Eigen::MatrixXd& s) {
  require(s.rows() == s.cols(), "similarity matrix must be square, got ", s.rows(), "x", s.cols());
  require(s.rows() >= 2, "ranking loss needs at least 2 pairs, got ", s.rows());
}

}  // namespace detail

/// L = (1/B) sum_i sum_{j != i} ([m + s_ij - s_ii]_+ + [m + s_ji - s_ii]_+)
inline double ranking_loss(const Eigen::MatrixXd& s, double margin) {
  detail::check_similarity(s);
  // max(0, NaN) would hide a diverged forward pass.
  if (!s.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::Index b = s.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == i) continue;
      total += std::max(0.0, margin + s(i, j) - s(i, i));
      total += std::max(0.0, margin + s(j, i) - s(i, i));
    }
  }
  return total / static_cast<double>(b);
}

/// dL/dS. At a hinge kink the inactive side is taken.
inline Eigen::MatrixXd ranking_loss_grad(const Eigen::MatrixXd& s, double margin) {
  detail::check_similarity(s);
  const Eigen::Index b = s.rows();
  const double inv = 1.0 / static_cast<double>(b);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == i) continue;
      if (margin + s(i, j) - s(i, i) > 0.0) {
        g(i, j) += inv;
        g(i, i) -= inv;
      }
      if (margin + s(j, i) - s(i, i) > 0.0) {
        g(j, i) += inv;
        g(i, i) -= inv;
      }
    }
  }
  return g;
}

namespace ad {

inline Var ranking_loss(const Var& s, double margin) {
  const double value = audioret::ranking_loss(s->value, margin);
  return detail::make(Matrix::Constant(1, 1, value), {s}, [margin](Node& n) {
    n.inputs[0]->accumulate(n.grad(0, 0) * audioret::ranking_loss_grad(n.inputs[0]->value, margin));
  });
}

}  // namespace ad
}  // namespace audioret
