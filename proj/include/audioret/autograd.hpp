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

// Minimal reverse-mode differentiation over dense row-oriented matrices.
//
// Every value is a 2-D Eigen matrix. Operations record their inputs and a
// backward closure only when some input requires a gradient and recording is
// enabled, so inference under `NoGrad` builds no graph.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "audioret/error.hpp"

namespace audioret::ad {

using Matrix = Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows back
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

namespace detail {
inline thread_local bool recording = true;
}

/// Disables graph recording for its lifetime.
class NoGrad {
 public:
  NoGrad() : previous_(detail::recording) { detail::recording = false; }
  ~NoGrad() { detail::recording = previous_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool previous_;
};

inline Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

inline Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

inline Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

namespace detail {

inline Var make(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (recording) {
    for (const auto& in : inputs) {
      if (in->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return n;
}

}  // namespace detail

/// Back-propagates from a 1x1 output into every reachable node.
inline void backward(const Var& root) {
  require(root->value.rows() == 1 && root->value.cols() == 1, "backward() needs a scalar output");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  require(a->value.cols() == b->value.rows(), "matmul shape mismatch");
  return detail::make(a->value * b->value, {a, b}, [](Node& n) {
    const auto& a = n.inputs[0];
    const auto& b = n.inputs[1];
    if (a->requires_grad) a->accumulate(n.grad * b->value.transpose());
    if (b->requires_grad) b->accumulate(a->value.transpose() * n.grad);
  });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  require(a->value.cols() == b->value.cols(), "matmul_nt shape mismatch");
  return detail::make(a->value * b->value.transpose(), {a, b}, [](Node& n) {
    const auto& a = n.inputs[0];
    const auto& b = n.inputs[1];
    if (a->requires_grad) a->accumulate(n.grad * b->value);
    if (b->requires_grad) b->accumulate(n.grad.transpose() * a->value);
  });
}

inline Var transpose(const Var& a) {
  return detail::make(a->value.transpose(), {a}, [](Node& n) { n.inputs[0]->accumulate(n.grad.transpose()); });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "add shape mismatch");
  return detail::make(a->value + b->value, {a, b}, [](Node& n) {
    for (auto& in : n.inputs) {
      if (in->requires_grad) in->accumulate(n.grad);
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "sub shape mismatch");
  return detail::make(a->value - b->value, {a, b}, [](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(-n.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "mul shape mismatch");
  return detail::make(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
    const auto& a = n.inputs[0];
    const auto& b = n.inputs[1];
    if (a->requires_grad) a->accumulate(n.grad.cwiseProduct(b->value));
    if (b->requires_grad) b->accumulate(n.grad.cwiseProduct(a->value));
  });
}

inline Var div(const Var& a, const Var& b) {
  require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "div shape mismatch");
  return detail::make(a->value.cwiseQuotient(b->value), {a, b}, [](Node& n) {
    const auto& a = n.inputs[0];
    const auto& b = n.inputs[1];
    if (a->requires_grad) a->accumulate(n.grad.cwiseQuotient(b->value));
    if (b->requires_grad) {
      b->accumulate(-n.grad.cwiseProduct(a->value).cwiseQuotient(b->value.cwiseProduct(b->value)));
    }
  });
}

inline Var scale(const Var& a, double s) {
  return detail::make(a->value * s, {a}, [s](Node& n) { n.inputs[0]->accumulate(n.grad * s); });
}

/// a + row, with `row` (1 x C) broadcast over rows.
inline Var add_row(const Var& a, const Var& row) {
  require(row->value.rows() == 1 && row->value.cols() == a->value.cols(), "add_row shape mismatch");
  Matrix v = a->value.rowwise() + row->value.row(0);
  return detail::make(std::move(v), {a, row}, [](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(n.grad.colwise().sum());
  });
}

/// a .* row, with `row` (1 x C) broadcast over rows.
inline Var mul_row(const Var& a, const Var& row) {
  require(row->value.rows() == 1 && row->value.cols() == a->value.cols(), "mul_row shape mismatch");
  Matrix v = a->value.array().rowwise() * row->value.row(0).array();
  return detail::make(std::move(v), {a, row}, [](Node& n) {
    const auto& a = n.inputs[0];
    const auto& r = n.inputs[1];
    if (a->requires_grad) a->accumulate((n.grad.array().rowwise() * r->value.row(0).array()).matrix());
    if (r->requires_grad) r->accumulate(n.grad.cwiseProduct(a->value).colwise().sum());
  });
}

/// a .* col, with `col` (R x 1) broadcast over columns.
inline Var mul_col(const Var& a, const Var& col) {
  require(col->value.cols() == 1 && col->value.rows() == a->value.rows(), "mul_col shape mismatch");
  Matrix v = a->value.array().colwise() * col->value.col(0).array();
  return detail::make(std::move(v), {a, col}, [](Node& n) {
    const auto& a = n.inputs[0];
    const auto& c = n.inputs[1];
    if (a->requires_grad) a->accumulate((n.grad.array().colwise() * c->value.col(0).array()).matrix());
    if (c->requires_grad) c->accumulate(n.grad.cwiseProduct(a->value).rowwise().sum());
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  Matrix v = a->value.unaryExpr([](double x) { return stable_sigmoid(x); });
  return detail::make(std::move(v), {a}, [](Node& n) {
    const Matrix& s = n.value;
    n.inputs[0]->accumulate(n.grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

inline Var relu(const Var& a) {
  Matrix v = a->value.cwiseMax(0.0);
  return detail::make(std::move(v), {a}, [](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    n.inputs[0]->accumulate(n.grad.binaryExpr(x, [](double g, double xi) { return xi > 0.0 ? g : 0.0; }));
  });
}

/// GELU, tanh approximation.
inline Var gelu(const Var& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Matrix v = a->value.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); });
  return detail::make(std::move(v), {a}, [](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    n.inputs[0]->accumulate(n.grad.binaryExpr(x, [](double g, double xi) {
      const double t = std::tanh(k * (xi + c * xi * xi * xi));
      const double dt = (1.0 - t * t) * k * (1.0 + 3.0 * c * xi * xi);
      return g * (0.5 * (1.0 + t) + 0.5 * xi * dt);
    }));
  });
}

// ---------------------------------------------------------------------------
// Row-wise reductions and normalizations

inline Var softmax_rows(const Var& a) {
  Matrix v(a->value.rows(), a->value.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mx = a->value.row(r).maxCoeff();
    v.row(r) = (a->value.row(r).array() - mx).exp().matrix();
    v.row(r) /= v.row(r).sum();
  }
  return detail::make(std::move(v), {a}, [](Node& n) {
    const Matrix& y = n.value;
    const Eigen::VectorXd dots = n.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = (n.grad.colwise() - dots).cwiseProduct(y);
    n.inputs[0]->accumulate(g);
  });
}

/// Divides each row by max(||row||, eps). Rows below eps are scaled by 1/eps,
/// so an exactly-zero row stays zero.
inline Var l2_normalize_rows(const Var& a, double eps = 1e-12) {
  const Eigen::VectorXd norms = a->value.rowwise().norm();
  const Eigen::VectorXd denom = norms.cwiseMax(eps);
  Matrix v = a->value.array().colwise() / denom.array();
  return detail::make(std::move(v), {a}, [norms, denom, eps](Node& n) {
    const Matrix& y = n.value;
    Matrix g(n.grad.rows(), n.grad.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (norms(r) > eps) {
        g.row(r) = (n.grad.row(r) - y.row(r) * y.row(r).dot(n.grad.row(r))) / norms(r);
      } else {
        g.row(r) = n.grad.row(r) / eps;
      }
    }
    n.inputs[0]->accumulate(g);
  });
}

/// Zero-mean, unit-variance rows (biased variance), no affine transform.
inline Var standardize_rows(const Var& a, double eps = 1e-5) {
  const Eigen::Index cols = a->value.cols();
  const Eigen::VectorXd mean = a->value.rowwise().mean();
  Matrix centered = a->value.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(cols)) + eps).rsqrt().matrix();
  Matrix v = centered.array().colwise() * inv_std.array();
  return detail::make(std::move(v), {a}, [inv_std, cols](Node& n) {
    const Matrix& xhat = n.value;
    const Eigen::VectorXd g_mean = n.grad.rowwise().mean();
    const Eigen::VectorXd gx_mean = n.grad.cwiseProduct(xhat).rowwise().sum() / static_cast<double>(cols);
    Matrix g = n.grad.colwise() - g_mean;
    g -= (xhat.array().colwise() * gx_mean.array()).matrix();
    g = g.array().colwise() * inv_std.array();
    n.inputs[0]->accumulate(g);
  });
}

/// Column sums as a 1 x C row.
inline Var col_sums(const Var& a) {
  Matrix v = a->value.colwise().sum();
  return detail::make(std::move(v), {a}, [](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    n.inputs[0]->accumulate(n.grad.replicate(x.rows(), 1));
  });
}

/// Sum of all entries as 1 x 1.
inline Var sum(const Var& a) {
  return detail::make(Matrix::Constant(1, 1, a->value.sum()), {a}, [](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    n.inputs[0]->accumulate(Matrix::Constant(x.rows(), x.cols(), n.grad(0, 0)));
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var gather_rows(const Var& a, std::vector<Eigen::Index> idx) {
  Matrix v(static_cast<Eigen::Index>(idx.size()), a->value.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = a->value.row(idx[i]);
  return detail::make(std::move(v), {a}, [idx = std::move(idx)](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    n.inputs[0]->accumulate(g);
  });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && start + count <= a->value.rows(), "slice_rows out of range");
  return detail::make(a->value.middleRows(start, count), {a}, [start, count](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = n.grad;
    n.inputs[0]->accumulate(g);
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && start + count <= a->value.cols(), "slice_cols out of range");
  return detail::make(a->value.middleCols(start, count), {a}, [start, count](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = n.grad;
    n.inputs[0]->accumulate(g);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const Eigen::Index cols = parts.front()->value.cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require(p->value.cols() == cols, "concat_rows column mismatch");
    rows += p->value.rows();
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p->value.rows()) = p->value;
    r += p->value.rows();
  }
  return detail::make(std::move(v), parts, [](Node& n) {
    Eigen::Index r = 0;
    for (auto& in : n.inputs) {
      const Eigen::Index h = in->value.rows();
      if (in->requires_grad) in->accumulate(n.grad.middleRows(r, h));
      r += h;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const Eigen::Index rows = parts.front()->value.rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p->value.rows() == rows, "concat_cols row mismatch");
    cols += p->value.cols();
  }
  Matrix v(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p->value.cols()) = p->value;
    c += p->value.cols();
  }
  return detail::make(std::move(v), parts, [](Node& n) {
    Eigen::Index c = 0;
    for (auto& in : n.inputs) {
      const Eigen::Index w = in->value.cols();
      if (in->requires_grad) in->accumulate(n.grad.middleCols(c, w));
      c += w;
    }
  });
}

/// Row-major flattening of R x C into 1 x (R*C).
inline Var flatten(const Var& a) {
  const Eigen::Index rows = a->value.rows();
  const Eigen::Index cols = a->value.cols();
  Matrix v(1, rows * cols);
  for (Eigen::Index r = 0; r < rows; ++r) v.block(0, r * cols, 1, cols) = a->value.row(r);
  return detail::make(std::move(v), {a}, [rows, cols](Node& n) {
    Matrix g(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) g.row(r) = n.grad.block(0, r * cols, 1, cols);
    n.inputs[0]->accumulate(g);
  });
}

}  // namespace audioret::ad
