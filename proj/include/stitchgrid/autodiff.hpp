// Copyright 2026 The stitchgrid Authors. All rights reserved.
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

#ifndef STITCHGRID_AUTODIFF_HPP_
#define STITCHGRID_AUTODIFF_HPP_

// Tape-free reverse-mode automatic differentiation over dense double
// matrices. Every op returns a Var whose node keeps its parents alive, so the
// graph lives exactly as long as the loss Var that roots it.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stitchgrid/error.hpp"

namespace stitchgrid::ad {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColVector = Eigen::VectorXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Matrix::Zero(value.rows(), value.cols());
    }
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  Matrix& grad() { return node_->ensure_grad(); }
  bool has_grad() const {
    return node_->grad.size() == node_->value.size() && node_->grad.size() > 0;
  }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }

  // Drops the gradient entirely so untouched parameters report !has_grad().
  void zero_grad() { node_->grad = Matrix(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

inline Var scalar_constant(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

namespace detail {

inline Var make(Matrix value, std::vector<Var> parents,
                std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return Var(std::move(n));
}

inline bool wants(const std::shared_ptr<Node>& p) { return p->requires_grad; }

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(op) + ": shape mismatch");
  }
}

}  // namespace detail

// Runs reverse accumulation from a 1x1 root.
inline void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw InvalidInput("backward: root must be a scalar");
  }
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
}

inline Var detach(const Var& a) { return constant(a.value()); }

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dim mismatch");
  Matrix out = a.value() * b.value();
  return detail::make(std::move(out), {a, b}, [](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (detail::wants(pa)) pa->ensure_grad().noalias() += n.grad * pb->value.transpose();
    if (detail::wants(pb)) pb->ensure_grad().noalias() += pa->value.transpose() * n.grad;
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  return detail::make(a.value() + b.value(), {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (detail::wants(p)) p->ensure_grad() += n.grad;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  return detail::make(a.value() - b.value(), {a, b}, [](Node& n) {
    if (detail::wants(n.parents[0])) n.parents[0]->ensure_grad() += n.grad;
    if (detail::wants(n.parents[1])) n.parents[1]->ensure_grad() -= n.grad;
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return detail::make(std::move(out), {a, b}, [](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (detail::wants(pa)) pa->ensure_grad() += n.grad.cwiseProduct(pb->value);
    if (detail::wants(pb)) pb->ensure_grad() += n.grad.cwiseProduct(pa->value);
  });
}

// a (n x m) + bias (1 x m), broadcast over rows.
inline Var add_row(const Var& a, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw InvalidInput("add_row: bias must be 1 x cols");
  }
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return detail::make(std::move(out), {a, bias}, [](Node& n) {
    if (detail::wants(n.parents[0])) n.parents[0]->ensure_grad() += n.grad;
    if (detail::wants(n.parents[1]))
      n.parents[1]->ensure_grad() += n.grad.colwise().sum();
  });
}

// a (n x m) scaled row-wise by c (n x 1).
inline Var mul_col(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) {
    throw InvalidInput("mul_col: expected n x 1 multiplier");
  }
  Matrix out = a.value().array().colwise() * c.value().col(0).array();
  return detail::make(std::move(out), {a, c}, [](Node& n) {
    auto& pa = n.parents[0];
    auto& pc = n.parents[1];
    if (detail::wants(pa))
      pa->ensure_grad().array() += n.grad.array().colwise() * pc->value.col(0).array();
    if (detail::wants(pc))
      pc->ensure_grad().col(0) += n.grad.cwiseProduct(pa->value).rowwise().sum();
  });
}

// Elementwise product with a constant matrix (masks, dropout).
inline Var mul_const(const Var& a, const Matrix& m) {
  if (m.rows() != a.rows() || m.cols() != a.cols()) {
    throw InvalidInput("mul_const: shape mismatch");
  }
  Matrix out = a.value().cwiseProduct(m);
  return detail::make(std::move(out), {a}, [m](Node& n) {
    n.parents[0]->ensure_grad() += n.grad.cwiseProduct(m);
  });
}

inline Var scale(const Var& a, double c) {
  return detail::make(a.value() * c, {a}, [c](Node& n) {
    n.parents[0]->ensure_grad() += n.grad * c;
  });
}

inline Var add_scalar(const Var& a, double c) {
  Matrix out = a.value().array() + c;
  return detail::make(std::move(out), {a}, [](Node& n) {
    n.parents[0]->ensure_grad() += n.grad;
  });
}

inline Var one_minus(const Var& a) { return add_scalar(scale(a, -1.0), 1.0); }

namespace detail {

template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Matrix out = a.value().unaryExpr(f);
  return make(std::move(out), {a}, [df](Node& n) {
    auto& p = n.parents[0];
    Matrix d = p->value.binaryExpr(n.value, df);
    p->ensure_grad() += n.grad.cwiseProduct(d);
  });
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

}  // namespace detail

inline Var silu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * detail::sigmoid(x); },
      [](double x, double) {
        const double s = detail::sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var softplus(const Var& a) {
  return detail::unary(
      a, [](double x) { return detail::softplus(x); },
      [](double x, double) { return detail::sigmoid(x); });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return detail::sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make(std::move(out), {a}, [](Node& n) {
    n.parents[0]->ensure_grad().array() += n.grad(0, 0);
  });
}

inline Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  if (count == 0) throw InvalidInput("mean: empty input");
  return scale(sum(a), 1.0 / count);
}

// sum_ij a_ij * w_ij for a constant weight matrix.
inline Var weighted_sum(const Var& a, const Matrix& w) {
  if (w.rows() != a.rows() || w.cols() != a.cols()) {
    throw InvalidInput("weighted_sum: shape mismatch");
  }
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(w).sum();
  return detail::make(std::move(out), {a}, [w](Node& n) {
    n.parents[0]->ensure_grad() += w * n.grad(0, 0);
  });
}

// Row sums: (n x m) -> (n x 1).
inline Var row_sum(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return detail::make(std::move(out), {a}, [](Node& n) {
    n.parents[0]->ensure_grad().colwise() += n.grad.col(0);
  });
}

inline Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("hcat: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw InvalidInput("hcat: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return detail::make(std::move(out), parts, [](Node& n) {
    Eigen::Index c = 0;
    for (auto& p : n.parents) {
      if (detail::wants(p)) p->ensure_grad() += n.grad.middleCols(c, p->value.cols());
      c += p->value.cols();
    }
  });
}

inline Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("vcat: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw InvalidInput("vcat: col mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return detail::make(std::move(out), parts, [](Node& n) {
    Eigen::Index r = 0;
    for (auto& p : n.parents) {
      if (detail::wants(p)) p->ensure_grad() += n.grad.middleRows(r, p->value.rows());
      r += p->value.rows();
    }
  });
}

inline Var select_cols(const Var& a, std::vector<int> idx) {
  Matrix out(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= a.cols()) throw InvalidInput("select_cols: index");
    out.col(static_cast<Eigen::Index>(j)) = a.value().col(idx[j]);
  }
  return detail::make(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    Matrix& g = n.parents[0]->ensure_grad();
    for (size_t j = 0; j < idx.size(); ++j)
      g.col(idx[j]) += n.grad.col(static_cast<Eigen::Index>(j));
  });
}

inline Var gather_rows(const Var& a, std::vector<int> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw InvalidInput("gather_rows: index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return detail::make(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    Matrix& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i)
      g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  });
}

// Row-wise log-softmax.
inline Var log_softmax(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    const double lse =
        m + std::log((a.value().row(i).array() - m).exp().sum());
    out.row(i) = a.value().row(i).array() - lse;
  }
  return detail::make(std::move(out), {a}, [](Node& n) {
    Matrix& g = n.parents[0]->ensure_grad();
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      const double gs = n.grad.row(i).sum();
      g.row(i).array() += n.grad.row(i).array() - n.value.row(i).array().exp() * gs;
    }
  });
}

// out(i) = a(i, idx[i]); idx entries < 0 produce 0 and no gradient.
inline Var pick(const Var& a, std::vector<int> idx) {
  if (static_cast<Eigen::Index>(idx.size()) != a.rows()) {
    throw InvalidInput("pick: one index per row required");
  }
  Matrix out = Matrix::Zero(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (idx[i] >= a.cols()) throw InvalidInput("pick: index out of range");
    if (idx[i] >= 0) out(i, 0) = a.value()(i, idx[i]);
  }
  return detail::make(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    Matrix& g = n.parents[0]->ensure_grad();
    for (Eigen::Index i = 0; i < n.value.rows(); ++i)
      if (idx[i] >= 0) g(i, idx[i]) += n.grad(i, 0);
  });
}

// Row-wise layer normalization with learned gain/bias (1 x m each).
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias,
                      double eps = 1e-5) {
  const Eigen::Index n = x.rows();
  const Eigen::Index m = x.cols();
  Matrix xhat(n, m);
  ColVector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  return detail::make(std::move(out), {x, gain, bias},
                      [xhat, inv_std](Node& nd) {
    auto& px = nd.parents[0];
    auto& pg = nd.parents[1];
    auto& pb = nd.parents[2];
    const Matrix& g = nd.grad;
    if (detail::wants(pg)) pg->ensure_grad() += g.cwiseProduct(xhat).colwise().sum();
    if (detail::wants(pb)) pb->ensure_grad() += g.colwise().sum();
    if (detail::wants(px)) {
      const Eigen::Index m = xhat.cols();
      Matrix& gx = px->ensure_grad();
      for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
        Eigen::ArrayXd gh = (g.row(i).array() * pg->value.row(0).array()).transpose();
        const double s1 = gh.sum();
        const double s2 = (gh * xhat.row(i).array().transpose()).sum();
        gx.row(i).array() += ((gh * m - s1 - xhat.row(i).array().transpose() * s2) *
                              (inv_std(i) / m))
                                 .transpose();
      }
    }
  });
}

// Global L2 norm over a set of gradients; optional rescale to max_norm.
inline double clip_grad_norm(std::vector<Var>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    if (p.has_grad()) sq += p.grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / (norm + 1e-12);
    for (auto& p : params)
      if (p.has_grad()) p.grad() *= f;
  }
  return norm;
}

}  // namespace stitchgrid::ad

#endif  // STITCHGRID_AUTODIFF_HPP_
