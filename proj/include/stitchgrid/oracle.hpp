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

#ifndef STITCHGRID_ORACLE_HPP_
#define STITCHGRID_ORACLE_HPP_

// Closed-form discounted occupancy for tabular GridWorld policies, plus the
// ground-truth statistics every learned quantity is checked against.
//
// Tensors indexed [s, a, s'] are stored as (S*A) x S matrices with row
// s * A + a.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "stitchgrid/env.hpp"
#include "stitchgrid/error.hpp"

namespace stitchgrid {

struct OccupancyTensors {
  Matrix T;   // S x S
  Matrix T0;  // (S*A) x S, one-hot rows
  Matrix P;   // (S*A) x S
  double gamma = 0.0;
  int states = 0;
  int actions = kActionCount;

  double& p(int s, int a, int g) { return P(s * actions + a, g); }
  double p(int s, int a, int g) const { return P(s * actions + a, g); }
};

struct TransitionMatrices {
  Matrix T;
  Matrix T0;
};

inline TransitionMatrices build_transition_matrices(const GridSpec& grid,
                                                    const TabularPolicy& policy) {
  const int S = grid.cell_count();
  if (policy.probs.rows() != S || policy.probs.cols() != kActionCount)
    throw InvalidInput("policy shape does not match grid");
  TransitionMatrices out;
  out.T = Matrix::Zero(S, S);
  out.T0 = Matrix::Zero(S * kActionCount, S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < kActionCount; ++a) {
      // Wall cells are unreachable; a self loop keeps their rows stochastic.
      const int next = grid.is_wall(s) ? s : step(grid, s, a);
      out.T0(s * kActionCount + a, next) = 1.0;
      out.T(s, next) += policy.probs(s, a);
    }
  }
  return out;
}

// P = (1 - gamma) T0 (I - gamma T)^{-1}.
inline Matrix analytic_future_distribution(const Matrix& T, const Matrix& T0,
                                           double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw NumericError("analytic_future_distribution: gamma must lie in [0, 1)");
  if (T.rows() != T.cols() || T0.cols() != T.rows())
    throw InvalidInput("analytic_future_distribution: dimension mismatch");
  const Eigen::Index S = T.rows();
  Matrix system = Matrix::Identity(S, S) - gamma * T;
  Eigen::PartialPivLU<Matrix> lu(system);
  Matrix inverse = lu.solve(Matrix::Identity(S, S));
  if (!inverse.allFinite()) throw NumericError("singular occupancy system");
  return (1.0 - gamma) * (T0 * inverse);
}

// (1 - gamma) sum_{k=0}^{K} gamma^k T0 T^k.
inline Matrix truncated_series_oracle(const Matrix& T, const Matrix& T0, double gamma,
                                      int K) {
  if (K < 0) throw InvalidInput("truncated_series_oracle: K must be >= 0");
  Matrix term = T0;
  Matrix acc = Matrix::Zero(T0.rows(), T0.cols());
  double weight = 1.0;
  for (int k = 0; k <= K; ++k) {
    acc += weight * term;
    weight *= gamma;
    if (k < K) term = term * T;
  }
  return (1.0 - gamma) * acc;
}

inline OccupancyTensors occupancy(const GridSpec& grid, const TabularPolicy& policy,
                                  double gamma) {
  auto tm = build_transition_matrices(grid, policy);
  OccupancyTensors occ;
  occ.P = analytic_future_distribution(tm.T, tm.T0, gamma);
  occ.T = std::move(tm.T);
  occ.T0 = std::move(tm.T0);
  occ.gamma = gamma;
  occ.states = grid.cell_count();
  return occ;
}

// Maximum-likelihood tabular policy from dataset action counts; unvisited
// states fall back to uniform.
inline TabularPolicy empirical_policy(const Dataset& ds) {
  const int S = ds.grid.cell_count();
  Matrix counts = Matrix::Zero(S, kActionCount);
  for (const auto& tr : ds.trajectories)
    for (int t = 0; t < tr.length(); ++t) counts(tr.cells[t], tr.actions[t]) += 1.0;
  TabularPolicy pi;
  pi.probs.resize(S, kActionCount);
  for (int s = 0; s < S; ++s) {
    const double n = counts.row(s).sum();
    if (n > 0) {
      pi.probs.row(s) = counts.row(s) / n;
    } else {
      pi.probs.row(s).setConstant(1.0 / kActionCount);
    }
  }
  return pi;
}

struct KlOptions {
  double epsilon_floor = 1e-12;
  // Optional per-row weights (visitation); uniform over rows when empty.
  std::vector<double> row_weights;
};

// Average over rows of D_KL(P_row || Qhat_row) after flooring and
// renormalizing Qhat. 0 * ln 0 = 0.
inline double forward_kl(const Matrix& P, const Matrix& Qhat, const KlOptions& opts = {}) {
  if (P.rows() != Qhat.rows() || P.cols() != Qhat.cols())
    throw InvalidInput("forward_kl: shape mismatch");
  if (Qhat.hasNaN()) throw NumericError("forward_kl: NaN in estimate");
  const bool weighted = !opts.row_weights.empty();
  if (weighted && static_cast<Eigen::Index>(opts.row_weights.size()) != P.rows())
    throw InvalidInput("forward_kl: one weight per row required");
  double total = 0.0;
  double wsum = 0.0;
  for (Eigen::Index r = 0; r < P.rows(); ++r) {
    const double w = weighted ? opts.row_weights[static_cast<size_t>(r)] : 1.0;
    if (w == 0.0) continue;
    Eigen::ArrayXd q = Qhat.row(r).transpose().array().max(opts.epsilon_floor);
    q /= q.sum();
    double kl = 0.0;
    for (Eigen::Index g = 0; g < P.cols(); ++g) {
      const double p = P(r, g);
      if (p > 0.0) kl += p * std::log(p / q(g));
    }
    total += w * kl;
    wsum += w;
  }
  return wsum > 0 ? total / wsum : 0.0;
}

// Closed-form KL of P against the uniform density over `cells` goals.
inline double uniform_baseline_kl(const Matrix& P) {
  Matrix uniform = Matrix::Constant(P.rows(), P.cols(), 1.0 / static_cast<double>(P.cols()));
  return forward_kl(P, uniform);
}

struct MaxQTable {
  Matrix qstar;   // (S*A) x S
  Matrix qmin;    // (S*A) x S
  Matrix counts;  // S x A visit counts
  double gamma = 0.0;
  double mean_truncation_bias = 0.0;  // mean of gamma^{remaining} over visits

  bool defined(int s, int a) const { return counts(s, a) > 0; }
};

// Discounted goal-hit sums (1-gamma) sum_k gamma^k 1[cell_{t+k+1} = g] for
// every step of one trajectory, truncated at its end. Row t, column g.
inline Matrix per_visit_q(const Trajectory& tr, int states, double gamma) {
  const int L = tr.length();
  Matrix V = Matrix::Zero(L + 1, states);
  for (int t = L - 1; t >= 0; --t) {
    V.row(t) = gamma * V.row(t + 1);
    V(t, tr.cells[static_cast<size_t>(t + 1)]) += 1.0 - gamma;
  }
  return V.topRows(L);
}

inline MaxQTable empirical_max_q(const Dataset& ds, double gamma) {
  if (ds.trajectories.empty()) throw InvalidInput("empirical_max_q: empty dataset");
  const int S = ds.grid.cell_count();
  MaxQTable table;
  table.gamma = gamma;
  table.qstar = Matrix::Zero(S * kActionCount, S);
  table.qmin = Matrix::Constant(S * kActionCount, S, std::numeric_limits<double>::infinity());
  table.counts = Matrix::Zero(S, kActionCount);
  double bias_sum = 0.0;
  long visits = 0;
  for (const auto& tr : ds.trajectories) {
    Matrix V = per_visit_q(tr, S, gamma);
    for (int t = 0; t < tr.length(); ++t) {
      const int s = tr.cells[static_cast<size_t>(t)];
      const int a = tr.actions[static_cast<size_t>(t)];
      const int row = s * kActionCount + a;
      table.qstar.row(row) = table.qstar.row(row).cwiseMax(V.row(t));
      table.qmin.row(row) = table.qmin.row(row).cwiseMin(V.row(t));
      table.counts(s, a) += 1.0;
      bias_sum += std::pow(gamma, tr.length() - t);
      ++visits;
    }
  }
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < kActionCount; ++a)
      if (table.counts(s, a) == 0) table.qmin.row(s * kActionCount + a).setZero();
  table.mean_truncation_bias = visits ? bias_sum / static_cast<double>(visits) : 0.0;
  return table;
}

// Q*(s, g) = max over dataset actions at s of the behavior occupancy
// P[s, a, g]. Rows of unvisited states are NaN.
inline Matrix in_distribution_max(const Matrix& P, const Matrix& counts) {
  const Eigen::Index S = counts.rows();
  Matrix out = Matrix::Constant(S, P.cols(), std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index s = 0; s < S; ++s) {
    for (int a = 0; a < kActionCount; ++a) {
      if (counts(s, a) <= 0) continue;
      const auto row = P.row(s * kActionCount + a);
      if (std::isnan(out(s, 0))) {
        out.row(s) = row;
      } else {
        out.row(s) = out.row(s).cwiseMax(row);
      }
    }
  }
  return out;
}

// Fraction of bins whose signal (population) variance across segments
// exceeds `threshold`.
inline double signal_coverage(const std::map<long, std::vector<double>>& bins,
                              double threshold = 0.01) {
  if (bins.empty()) return 0.0;
  long covered = 0;
  for (const auto& [key, values] : bins) {
    if (values.size() < 2) continue;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    if (var > threshold) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(bins.size());
}

}  // namespace stitchgrid

#endif  // STITCHGRID_ORACLE_HPP_
