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

#ifndef STITCHGRID_FLOW_HPP_
#define STITCHGRID_FLOW_HPP_

// Conditional affine-coupling flow p(g | s, a). The log-density of a goal is
// the goal-reaching score used as the Q-value conditioning signal.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "stitchgrid/autodiff.hpp"
#include "stitchgrid/error.hpp"
#include "stitchgrid/nn.hpp"

namespace stitchgrid {

struct FlowConfig {
  int obs_dim = 2;
  int goal_dim = 2;
  int action_count = 4;
  std::vector<int> encoder_hidden = {256, 256};
  int z_dim = 64;
  int blocks = 6;
  int channels = 256;
  double scale_bound = 5.0;  // <= 0 disables the tanh clamp
  // Fixed affine goal standardization u = (g - shift) / scale; its constant
  // log-Jacobian is included in every density.
  std::vector<double> goal_shift;
  std::vector<double> goal_scale;
  // Same standardization for encoder observations (no density effect).
  std::vector<double> obs_shift;
  std::vector<double> obs_scale;

  void validate() const {
    if (goal_dim < 2) throw ConfigError("flow goal_dim must be >= 2");
    if (blocks < 1 || channels < 1 || z_dim < 1) throw ConfigError("flow dims must be positive");
    for (const auto* v : {&goal_shift, &goal_scale})
      if (!v->empty() && static_cast<int>(v->size()) != goal_dim)
        throw ConfigError("goal standardization must have goal_dim entries");
  }
};

// One affine coupling step: transformed coordinates become
// (x2 + a(x1, z)) * exp(-s(x1, z)).
struct CouplingBlock {
  std::vector<int> keep;       // conditioning coordinates
  std::vector<int> transform;  // transformed coordinates
  std::vector<int> inverse_perm;
  Mlp shift_net;
  Mlp log_scale_net;
  double scale_bound = 5.0;

  CouplingBlock() = default;
  CouplingBlock(int goal_dim, int parity, int z_dim, int channels, double bound, Rng& rng)
      : scale_bound(bound) {
    for (int i = 0; i < goal_dim; ++i) ((i % 2 == parity) ? keep : transform).push_back(i);
    std::vector<int> order = keep;
    order.insert(order.end(), transform.begin(), transform.end());
    inverse_perm.assign(static_cast<size_t>(goal_dim), 0);
    for (size_t j = 0; j < order.size(); ++j) inverse_perm[static_cast<size_t>(order[j])] = static_cast<int>(j);
    const int in = static_cast<int>(keep.size()) + z_dim;
    const int out = static_cast<int>(transform.size());
    shift_net = Mlp(in, {channels, channels}, out, rng);
    log_scale_net = Mlp(in, {channels, channels}, out, rng);
  }

  Var log_scale(const Var& cond) const {
    Var s = log_scale_net(cond);
    if (scale_bound > 0.0) s = ad::scale(ad::tanh(ad::scale(s, 1.0 / scale_bound)), scale_bound);
    return s;
  }

  // Returns the transformed batch; adds this block's log|det| to `logdet`.
  Var forward(const Var& x, const Var& z, Var& logdet) const {
    Var x1 = ad::select_cols(x, keep);
    Var x2 = ad::select_cols(x, transform);
    Var cond = ad::hcat({x1, z});
    Var a = shift_net(cond);
    Var s = log_scale(cond);
    Var y2 = ad::mul(ad::add(x2, a), ad::exp(ad::scale(s, -1.0)));
    logdet = ad::sub(logdet, ad::row_sum(s));
    return ad::select_cols(ad::hcat({x1, y2}), inverse_perm);
  }

  Matrix inverse(const Matrix& y, const Matrix& z) const {
    Var x1 = ad::select_cols(ad::constant(y), keep);
    Var y2 = ad::select_cols(ad::constant(y), transform);
    Var cond = ad::hcat({x1, ad::constant(z)});
    const Matrix a = shift_net(cond).value();
    const Matrix s = log_scale(cond).value();
    Matrix x2 = y2.value().cwiseProduct(s.array().exp().matrix()) - a;
    Matrix out(y.rows(), y.cols());
    for (size_t j = 0; j < keep.size(); ++j) out.col(keep[j]) = x1.value().col(static_cast<Eigen::Index>(j));
    for (size_t j = 0; j < transform.size(); ++j)
      out.col(transform[j]) = x2.col(static_cast<Eigen::Index>(j));
    return out;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    shift_net.collect(prefix + ".shift", out);
    log_scale_net.collect(prefix + ".log_scale", out);
  }
};

struct FlowOutput {
  Var latent;  // n x goal_dim
  Var logdet;  // n x 1
};

class ConditionalFlow {
 public:
  ConditionalFlow() = default;
  ConditionalFlow(FlowConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    encoder_ = Mlp(cfg_.obs_dim + cfg_.action_count, cfg_.encoder_hidden, cfg_.z_dim, rng);
    for (int b = 0; b < cfg_.blocks; ++b)
      blocks_.emplace_back(cfg_.goal_dim, b % 2, cfg_.z_dim, cfg_.channels, cfg_.scale_bound, rng);
  }

  const FlowConfig& config() const { return cfg_; }
  std::vector<CouplingBlock>& blocks() { return blocks_; }
  const std::vector<CouplingBlock>& blocks() const { return blocks_; }
  Mlp& encoder() { return encoder_; }

  // z = MLP([standardized obs, one_hot(a)]).
  Var encode(const Matrix& obs, const std::vector<int>& actions) const {
    if (obs.cols() != cfg_.obs_dim || obs.rows() != static_cast<Eigen::Index>(actions.size()))
      throw InvalidInput("encode: dimension mismatch");
    Matrix in(obs.rows(), cfg_.obs_dim + cfg_.action_count);
    in.leftCols(cfg_.obs_dim) = standardize(obs, cfg_.obs_shift, cfg_.obs_scale);
    in.rightCols(cfg_.action_count) = one_hot(actions, cfg_.action_count);
    return encoder_(ad::constant(std::move(in)));
  }

  FlowOutput forward(const Var& goals, const Var& z) const {
    if (goals.cols() != cfg_.goal_dim) throw InvalidInput("flow_forward: goal_dim mismatch");
    if (goals.rows() != z.rows()) throw InvalidInput("flow_forward: batch mismatch");
    Var x = goals;
    double const_logdet = 0.0;
    if (!cfg_.goal_shift.empty()) {
      Matrix shift(1, cfg_.goal_dim), inv_scale = Matrix::Ones(cfg_.goal_dim, 1);
      for (int i = 0; i < cfg_.goal_dim; ++i) {
        shift(0, i) = -cfg_.goal_shift[static_cast<size_t>(i)];
        const double sc = cfg_.goal_scale.empty() ? 1.0 : cfg_.goal_scale[static_cast<size_t>(i)];
        inv_scale(i, 0) = 1.0 / sc;
        const_logdet -= std::log(sc);
      }
      x = ad::add_row(x, ad::constant(shift));
      x = ad::mul_const(x, Matrix::Ones(x.rows(), 1) * inv_scale.transpose());
    }
    Var logdet = ad::constant(Matrix::Constant(goals.rows(), 1, const_logdet));
    for (const auto& block : blocks_) x = block.forward(x, z, logdet);
    if (!x.value().allFinite() || !logdet.value().allFinite())
      throw NumericError("flow_forward: non-finite activations");
    return {x, logdet};
  }

  Matrix inverse(const Matrix& latent, const Matrix& z) const {
    Matrix x = latent;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) x = it->inverse(x, z);
    if (!cfg_.goal_shift.empty()) {
      for (int i = 0; i < cfg_.goal_dim; ++i) {
        const double sc = cfg_.goal_scale.empty() ? 1.0 : cfg_.goal_scale[static_cast<size_t>(i)];
        x.col(i) = x.col(i) * sc + Eigen::VectorXd::Constant(x.rows(), cfg_.goal_shift[static_cast<size_t>(i)]);
      }
    }
    return x;
  }

  // log p0(f(g; z)) + log|det df/dg| with p0 the standard normal. (n x 1)
  Var log_density(const Var& goals, const Var& z) const {
    FlowOutput f = forward(goals, z);
    const double norm = -0.5 * cfg_.goal_dim * std::log(2.0 * std::numbers::pi);
    Var quad = ad::scale(ad::row_sum(ad::square(f.latent)), -0.5);
    return ad::add_scalar(ad::add(quad, f.logdet), norm);
  }

  Var log_density(const Matrix& goals, const Matrix& obs, const std::vector<int>& actions) const {
    return log_density(ad::constant(goals), encode(obs, actions));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    encoder_.collect(prefix + ".encoder", out);
    for (size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(prefix + ".block" + std::to_string(b), out);
  }

  ParamList parameters() const {
    ParamList out;
    collect("critic", out);
    return out;
  }

  static Matrix standardize(const Matrix& x, const std::vector<double>& shift,
                            const std::vector<double>& scale) {
    if (shift.empty()) return x;
    Matrix out = x;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const double sc = scale.empty() ? 1.0 : scale[static_cast<size_t>(i)];
      out.col(i) = (x.col(i).array() - shift[static_cast<size_t>(i)]) / sc;
    }
    return out;
  }

 private:
  FlowConfig cfg_;
  Mlp encoder_;
  std::vector<CouplingBlock> blocks_;
};

// -mean log p(g + eps | s, a) with eps ~ N(0, sigma^2 I) drawn from rng.
inline Var nf_loss(const ConditionalFlow& flow, const Matrix& obs, const std::vector<int>& actions,
                   const Matrix& goals, double noise_sigma, Rng& rng) {
  if (goals.rows() == 0) throw InvalidInput("nf_loss: empty batch");
  Matrix noisy = goals;
  if (noise_sigma > 0.0) noisy += normal_matrix(goals.rows(), goals.cols(), noise_sigma, rng);
  return ad::scale(ad::mean(flow.log_density(noisy, obs, actions)), -1.0);
}

// q / (mean|q| + delta) over the batch.
inline Matrix normalize_q(const Matrix& q, double delta) {
  if (q.size() == 0) throw InvalidInput("normalize_q: empty batch");
  if (delta < 0.0) throw InvalidInput("normalize_q: delta must be >= 0");
  const double scale = q.cwiseAbs().mean() + delta;
  if (scale <= 0.0) throw NumericError("normalize_q: zero scale");
  return q / scale;
}

// Exponential moving average of the batch mean |Q|, persisted with the model
// for single-sample inference.
struct QNormalizer {
  double momentum = 0.99;
  double delta = 1e-3;
  double mean_abs = 1.0;
  bool initialized = false;

  void update(double batch_mean_abs) {
    if (!initialized) {
      mean_abs = batch_mean_abs;
      initialized = true;
    } else {
      mean_abs = momentum * mean_abs + (1.0 - momentum) * batch_mean_abs;
    }
  }

  double apply(double q) const { return q / (mean_abs + delta); }
};

}  // namespace stitchgrid

#endif  // STITCHGRID_FLOW_HPP_
