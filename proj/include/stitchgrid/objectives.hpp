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

#ifndef STITCHGRID_OBJECTIVES_HPP_
#define STITCHGRID_OBJECTIVES_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "stitchgrid/autodiff.hpp"
#include "stitchgrid/error.hpp"
#include "stitchgrid/nn.hpp"

namespace stitchgrid {

enum class RegressionKind { kExpectile, kQuantile, kMse };

inline std::string regression_name(RegressionKind k) {
  switch (k) {
    case RegressionKind::kExpectile: return "expectile";
    case RegressionKind::kQuantile: return "quantile";
    case RegressionKind::kMse: return "mse";
  }
  return "expectile";
}

inline RegressionKind regression_from_name(const std::string& s) {
  if (s == "expectile") return RegressionKind::kExpectile;
  if (s == "quantile") return RegressionKind::kQuantile;
  if (s == "mse") return RegressionKind::kMse;
  throw ConfigError("unknown loss kind '" + s + "'");
}

struct Regression {
  RegressionKind kind = RegressionKind::kExpectile;
  double tau = 0.95;

  void validate() const {
    if (kind != RegressionKind::kMse && !(tau > 0.0 && tau < 1.0))
      throw InvalidInput("tau must lie in (0, 1)");
  }
};

struct LossWeights {
  double critic = 1.0;
  double bc = 1.0;
  double q = 1.0;

  void validate() const {
    if (critic < 0 || bc < 0 || q < 0) throw ConfigError("loss weights must be >= 0");
  }
};

// |tau - 1(u < 0)| u^2, |tau - 1(u < 0)| |u| or u^2.
inline double asymmetric_loss(double u, const Regression& r) {
  const double w = u < 0.0 ? 1.0 - r.tau : r.tau;
  switch (r.kind) {
    case RegressionKind::kExpectile: return w * u * u;
    case RegressionKind::kQuantile: return w * std::abs(u);
    case RegressionKind::kMse: return u * u;
  }
  return 0.0;
}

inline double asymmetric_loss_derivative(double u, const Regression& r) {
  const double w = u < 0.0 ? 1.0 - r.tau : r.tau;
  switch (r.kind) {
    case RegressionKind::kExpectile: return 2.0 * w * u;
    case RegressionKind::kQuantile: return u > 0 ? w : (u < 0 ? -w : 0.0);
    case RegressionKind::kMse: return 2.0 * u;
  }
  return 0.0;
}

// Elementwise asymmetric loss on a Var.
inline Var asymmetric(const Var& u, const Regression& r) {
  Matrix out = u.value().unaryExpr([r](double x) { return asymmetric_loss(x, r); });
  return ad::detail::make(std::move(out), {u}, [r](ad::Node& n) {
    auto& p = n.parents[0];
    Matrix d = p->value.unaryExpr([r](double x) { return asymmetric_loss_derivative(x, r); });
    p->ensure_grad() += n.grad.cwiseProduct(d);
  });
}

// Mean over rows with weight[i] > 0 of loss(qbeta_i - qhat_i); qbeta is a
// detached target.
inline Var q_loss(const Matrix& qbeta, const Var& qhat, const Regression& r,
                  const Matrix* weights = nullptr) {
  if (qbeta.rows() != qhat.rows() || qbeta.cols() != qhat.cols())
    throw InvalidInput("q_loss: length mismatch");
  Var u = ad::sub(ad::constant(qbeta), qhat);
  Var l = asymmetric(u, r);
  if (!weights) return ad::mean(l);
  const double total = weights->sum();
  if (total <= 0) throw InvalidInput("q_loss: no weighted rows");
  return ad::weighted_sum(l, *weights / total);
}

// Mean categorical negative log-likelihood; rows with action < 0 are skipped.
inline Var bc_loss(const Var& logits, const std::vector<int>& actions) {
  if (static_cast<Eigen::Index>(actions.size()) != logits.rows())
    throw InvalidInput("bc_loss: one action per row required");
  const auto counted = std::count_if(actions.begin(), actions.end(), [](int a) { return a >= 0; });
  if (counted == 0) throw InvalidInput("bc_loss: empty batch");
  Var logp = ad::pick(ad::log_softmax(logits), actions);
  return ad::scale(ad::sum(logp), -1.0 / static_cast<double>(counted));
}

struct LossParts {
  Var nf;
  Var bc;
  Var q;
};

// Weighted sum; parts with zero weight (or absent) are left out of the graph.
inline Var total_loss(const LossParts& parts, const LossWeights& w) {
  Var total = ad::scalar_constant(0.0);
  if (parts.nf.defined() && w.critic != 0.0) total = ad::add(total, ad::scale(parts.nf, w.critic));
  if (parts.bc.defined() && w.bc != 0.0) total = ad::add(total, ad::scale(parts.bc, w.bc));
  if (parts.q.defined() && w.q != 0.0) total = ad::add(total, ad::scale(parts.q, w.q));
  return total;
}

// argmin_v sum_k L_tau(x_k - v), the root of
// tau sum_{x >= v}(x - v) = (1 - tau) sum_{x < v}(v - x), by bisection.
inline double scalar_expectile(std::span<const double> samples, double tau,
                               std::span<const double> weights = {}) {
  if (samples.empty()) throw InvalidInput("scalar_expectile: no samples");
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("scalar_expectile: tau in (0,1)");
  if (!weights.empty() && weights.size() != samples.size())
    throw InvalidInput("scalar_expectile: weight count mismatch");
  double lo = *std::min_element(samples.begin(), samples.end());
  double hi = *std::max_element(samples.begin(), samples.end());
  auto excess = [&](double v) {
    double up = 0.0, down = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      if (samples[i] >= v) {
        up += w * (samples[i] - v);
      } else {
        down += w * (v - samples[i]);
      }
    }
    return tau * up - (1.0 - tau) * down;
  };
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (excess(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Bias term of the expectile-vs-maximum bound under coverage c_tilde.
inline double expectile_bias_bound(double tau, double c_tilde, double qstar, double qmin) {
  if (!(tau > 0.5 && tau <= 1.0)) throw InvalidInput("bias bound: tau must lie in (0.5, 1]");
  if (!(c_tilde > 0.0 && c_tilde <= 1.0)) throw InvalidInput("bias bound: c_tilde in (0, 1]");
  if (qstar < qmin) throw InvalidInput("bias bound: qstar < qmin");
  const double denom = tau * c_tilde / 2.0 + (1.0 - tau) * (1.0 - c_tilde / 2.0);
  return (1.0 - tau) * (qstar - qmin) / denom;
}

}  // namespace stitchgrid

#endif  // STITCHGRID_OBJECTIVES_HPP_
