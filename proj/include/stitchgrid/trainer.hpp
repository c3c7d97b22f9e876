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

#ifndef STITCHGRID_TRAINER_HPP_
#define STITCHGRID_TRAINER_HPP_

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stitchgrid/backbone.hpp"
#include "stitchgrid/config.hpp"
#include "stitchgrid/env.hpp"
#include "stitchgrid/flow.hpp"
#include "stitchgrid/objectives.hpp"

namespace stitchgrid {

// Coordinates are standardized to roughly [-1, 1] over the grid.
inline std::vector<double> grid_shift(const GridSpec& g) {
  return {0.5 * (g.width - 1), 0.5 * (g.height - 1)};
}
inline std::vector<double> grid_scale(const GridSpec& g) {
  return {0.5 * std::max(1, g.width), 0.5 * std::max(1, g.height)};
}

// Critic, policy and the inference-time Q normalizer. Either model may be
// absent (critic-only runs).
struct Agent {
  TrainConfig config;
  GridSpec grid;
  std::optional<ConditionalFlow> critic;
  std::optional<HybridSequenceModel> policy;
  QNormalizer normalizer;

  ParamList parameters() const {
    ParamList out;
    if (critic) critic->collect("critic", out);
    if (policy) policy->collect("policy", out);
    return out;
  }
};

inline void require_policy(const Agent& a) {
  if (!a.policy) throw CheckpointError("checkpoint has no policy component (critic-only run)");
}

inline void require_critic(const Agent& a) {
  if (!a.critic) throw CheckpointError("checkpoint has no critic component");
}

inline Agent make_agent(const TrainConfig& cfg, const GridSpec& grid, bool with_critic,
                        bool with_policy) {
  cfg.validate();
  Agent agent;
  agent.config = cfg;
  agent.grid = grid;
  agent.normalizer.momentum = cfg.ema_momentum;
  agent.normalizer.delta = cfg.delta;
  const auto shift = grid_shift(grid), scale = grid_scale(grid);
  // Separate streams keep each model's initialization independent of the other.
  if (with_critic) {
    Rng rng = derive_rng(cfg.seed, 0xC1);
    agent.critic.emplace(cfg.flow_config(shift, scale), rng);
  }
  if (with_policy) {
    Rng rng = derive_rng(cfg.seed, 0xC2);
    agent.policy.emplace(cfg.model_config(shift, scale), rng);
  }
  return agent;
}

// K-step windows right-aligned at sampled anchors, each with one relabeled
// goal. Rows are b * K + k; the anchor is k = K - 1.
struct TrainBatch {
  SequenceBatch seq;
  std::vector<int> traj;
  std::vector<int> anchor;
  std::vector<int> goal_cell;
  std::vector<int> goal_index;  // -1 for random goals
  Matrix valid;                 // rows x 1, 0 at padding
  Matrix rtg;                   // rows x 1, 1 if the goal is reached later

  int batch() const { return seq.batch; }
  int steps() const { return seq.steps; }
  int anchor_row(int b) const { return b * seq.steps + seq.steps - 1; }
};

inline Vec2 goal_position(const Dataset& ds, const Trajectory& tr, const GoalSample& g, Rng& rng) {
  if (g.index >= 0) return tr.observations[static_cast<size_t>(g.index)];
  return observe(ds.grid, g.cell, rng);
}

inline TrainBatch assemble_batch(const Dataset& ds, int batch_size, int K, Rng& rng) {
  if (ds.trajectories.empty()) throw InvalidInput("assemble_batch: empty dataset");
  if (batch_size < 1 || K < 1) throw InvalidInput("assemble_batch: batch_size and K must be >= 1");
  TrainBatch out;
  out.seq.resize(batch_size, K, 2, 2);
  out.valid = Matrix::Zero(batch_size * K, 1);
  out.rtg = Matrix::Zero(batch_size * K, 1);
  std::uniform_int_distribution<size_t> pick_traj(0, ds.trajectories.size() - 1);
  for (int b = 0; b < batch_size; ++b) {
    int ti = 0;
    do {
      ti = static_cast<int>(pick_traj(rng));
    } while (ds.trajectories[static_cast<size_t>(ti)].length() == 0);
    const Trajectory& tr = ds.trajectories[static_cast<size_t>(ti)];
    std::uniform_int_distribution<int> pick_t(0, tr.length() - 1);
    const int t = pick_t(rng);
    const GoalSample g = her_sample(ds, ti, t, rng);
    const Vec2 gp = goal_position(ds, tr, g, rng);
    out.traj.push_back(ti);
    out.anchor.push_back(t);
    out.goal_cell.push_back(g.cell);
    out.goal_index.push_back(g.index);
    const int pad = std::max(0, K - 1 - t);
    out.seq.pad[static_cast<size_t>(b)] = pad;
    // Last step at which the goal cell is occupied, for the sparse RTG.
    int last_hit = -1;
    for (int j = tr.length(); j >= 1; --j)
      if (tr.cells[static_cast<size_t>(j)] == g.cell) {
        last_hit = j;
        break;
      }
    for (int k = 0; k < K; ++k) {
      const int r = b * K + k;
      out.seq.goals(r, 0) = gp.x;
      out.seq.goals(r, 1) = gp.y;
      if (k < pad) continue;
      const int tau = t - (K - 1 - k);
      out.seq.obs(r, 0) = tr.observations[static_cast<size_t>(tau)].x;
      out.seq.obs(r, 1) = tr.observations[static_cast<size_t>(tau)].y;
      out.seq.actions[static_cast<size_t>(r)] = tr.actions[static_cast<size_t>(tau)];
      out.valid(r, 0) = 1.0;
      out.rtg(r, 0) = last_hit > tau ? 1.0 : 0.0;
    }
  }
  return out;
}

// Quantities that are constants of the loss (noise draws and detached Q
// values). Capturing them once and replaying lets finite differences see
// the same function the analytic gradient describes.
struct FrozenInputs {
  bool set = false;
  Matrix nf_noise;
  Matrix qbeta;   // rows x 1, raw targets
  Matrix qtilde;  // rows x 1, normalized tokens
};

struct StepLosses {
  Var total;
  LossParts parts;
  Matrix qbeta;              // rows x 1 (0 at padding)
  double qbeta_mean_abs = 0;  // over valid rows
};

struct LossOptions {
  LossWeights weights;
  bool train = true;
  Rng* rng = nullptr;
  FrozenInputs* frozen = nullptr;
};

inline StepLosses compute_losses(const Agent& agent, TrainBatch& batch, const LossOptions& opt) {
  const TrainConfig& cfg = agent.config;
  const LossWeights& w = opt.weights;
  const int B = batch.batch(), K = batch.steps(), R = B * K;
  const bool replay = opt.frozen && opt.frozen->set;
  const bool q_mode = cfg.conditioning == Conditioning::kQ;
  const bool need_policy = w.bc > 0.0 || (q_mode && w.q > 0.0);
  const bool need_qbeta = need_policy && q_mode;
  if (need_policy && !agent.policy) throw CheckpointError("policy component is missing");
  if ((w.critic > 0.0 || (need_qbeta && !replay)) && !agent.critic)
    throw CheckpointError("critic component is missing");
  if (!replay && !opt.rng) throw InvalidInput("compute_losses: rng required");

  StepLosses out;
  out.qbeta = Matrix::Zero(R, 1);

  if (w.critic > 0.0) {
    Matrix obs(B, 2), goals(B, 2);
    std::vector<int> acts(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
      const int r = batch.anchor_row(b);
      obs.row(b) = batch.seq.obs.row(r);
      goals.row(b) = batch.seq.goals.row(r);
      acts[static_cast<size_t>(b)] = batch.seq.actions[static_cast<size_t>(r)];
    }
    Matrix noise;
    if (replay) {
      noise = opt.frozen->nf_noise;
    } else {
      noise = cfg.noise_sigma > 0.0 ? normal_matrix(B, 2, cfg.noise_sigma, *opt.rng) : Matrix::Zero(B, 2);
      if (opt.frozen) opt.frozen->nf_noise = noise;
    }
    out.parts.nf = ad::scale(ad::mean(agent.critic->log_density(goals + noise, obs, acts)), -1.0);
  }

  Var q_tokens;
  if (need_qbeta) {
    double scale = 1.0;
    Var qvar;
    if (replay) {
      out.qbeta = opt.frozen->qbeta;
      batch.seq.q = opt.frozen->qtilde;
    } else {
      std::vector<int> acts = batch.seq.actions;
      for (auto& a : acts) a = std::max(a, 0);  // padding rows are evaluated but unused
      qvar = agent.critic->log_density(batch.seq.goals, batch.seq.obs, acts);
      out.qbeta = qvar.value().cwiseProduct(batch.valid);
      const double n_valid = batch.valid.sum();
      out.qbeta_mean_abs = out.qbeta.cwiseAbs().sum() / n_valid;
      scale = out.qbeta_mean_abs + cfg.delta;
      if (!(scale > 0.0)) throw NumericError("Q normalization scale is zero");
      batch.seq.q = out.qbeta / scale;
      if (opt.frozen) {
        opt.frozen->qbeta = out.qbeta;
        opt.frozen->qtilde = batch.seq.q;
      }
    }
    if (cfg.stop_grad == StopGrad::kCurrent && qvar.defined() && w.critic > 0.0) {
      // Earlier tokens of each window keep their path into the critic; the
      // anchor token stays detached.
      Matrix keep = batch.valid / scale;
      Matrix fixed = Matrix::Zero(R, 1);
      for (int b = 0; b < B; ++b) {
        const int r = batch.anchor_row(b);
        keep(r, 0) = 0.0;
        fixed(r, 0) = batch.seq.q(r, 0);
      }
      q_tokens = ad::add(ad::mul_const(qvar, keep), ad::constant(fixed));
    }
  } else if (!q_mode) {
    batch.seq.q = batch.rtg;
  }

  if (need_policy) {
    ForwardOptions fo;
    fo.train = opt.train;
    fo.rng = opt.rng;
    if (replay || !opt.train) fo.train = false;
    ModelOutput mo = agent.policy->forward(batch.seq, fo, q_tokens);
    if (w.bc > 0.0) out.parts.bc = bc_loss(mo.logits, batch.seq.actions);
    if (q_mode && w.q > 0.0) out.parts.q = q_loss(out.qbeta, mo.qhat, cfg.regression, &batch.valid);
  }

  out.total = total_loss(out.parts, w);
  if (!std::isfinite(out.total.scalar())) {
    std::ostringstream os;
    os << "non-finite loss: total=" << out.total.scalar();
    if (out.parts.nf.defined()) os << " nf=" << out.parts.nf.scalar();
    if (out.parts.bc.defined()) os << " bc=" << out.parts.bc.scalar();
    if (out.parts.q.defined()) os << " q=" << out.parts.q.scalar();
    throw NumericError(os.str());
  }
  return out;
}

struct StepMetrics {
  long step = 0;
  double lr = 0.0;
  double total = 0.0;
  double nf = std::numeric_limits<double>::quiet_NaN();
  double bc = std::numeric_limits<double>::quiet_NaN();
  double q = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
  double q_scale = std::numeric_limits<double>::quiet_NaN();
};

// Loss weights in effect at a given step for the configured stage.
inline LossWeights stage_weights(const TrainConfig& cfg, long step) {
  LossWeights w = cfg.weights;
  if (cfg.conditioning == Conditioning::kNone) w.q = 0.0;
  switch (cfg.stage) {
    case Stage::kJoint: break;
    case Stage::kCritic: w.bc = w.q = 0.0; break;
    case Stage::kTwoPhase:
      if (step < cfg.critic_steps) {
        w.bc = w.q = 0.0;
      } else {
        w.critic = 0.0;
      }
      break;
  }
  if (cfg.conditioning == Conditioning::kNone && cfg.stage != Stage::kCritic) w.critic = 0.0;
  return w;
}

class Trainer {
 public:
  Trainer(Agent agent, const Dataset& ds)
      : agent_(std::move(agent)), ds_(&ds), rng_(derive_rng(agent_.config.seed, 0x7EA1)) {
    rebuild_optimizer();
  }

  static Trainer create(const TrainConfig& cfg, const Dataset& ds) {
    const bool critic = cfg.stage == Stage::kCritic || cfg.conditioning == Conditioning::kQ;
    const bool policy = cfg.stage != Stage::kCritic;
    return Trainer(make_agent(cfg, ds.grid, critic, policy), ds);
  }

  Agent& agent() { return agent_; }
  const Agent& agent() const { return agent_; }
  AdamW& optimizer() { return opt_; }
  Rng& rng() { return rng_; }
  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }

  LrSchedule schedule() const {
    const auto& c = agent_.config;
    return {c.lr, c.warmup_steps, c.steps, c.cosine};
  }

  StepMetrics step() {
    const TrainConfig& cfg = agent_.config;
    TrainBatch batch = assemble_batch(*ds_, cfg.batch_size, cfg.context, rng_);
    return step_on(batch);
  }

  StepMetrics step_on(TrainBatch& batch) {
    const TrainConfig& cfg = agent_.config;
    LossOptions lo;
    lo.weights = stage_weights(cfg, step_);
    lo.train = true;
    lo.rng = &rng_;
    opt_.zero_grad();
    StepLosses L = compute_losses(agent_, batch, lo);
    ad::backward(L.total);
    std::vector<Var> vars = vars_of(opt_.params());
    StepMetrics m;
    m.step = step_;
    m.grad_norm = ad::clip_grad_norm(vars, cfg.grad_clip);
    m.lr = schedule().at(step_);
    opt_.step(m.lr);
    if (L.qbeta_mean_abs > 0.0) {
      agent_.normalizer.update(L.qbeta_mean_abs);
      m.q_scale = agent_.normalizer.mean_abs;
    }
    m.total = L.total.scalar();
    if (L.parts.nf.defined()) m.nf = L.parts.nf.scalar();
    if (L.parts.bc.defined()) m.bc = L.parts.bc.scalar();
    if (L.parts.q.defined()) m.q = L.parts.q.scalar();
    ++step_;
    return m;
  }

  void rebuild_optimizer() {
    AdamW::Options o;
    o.weight_decay = agent_.config.weight_decay;
    opt_ = AdamW(agent_.parameters(), o);
  }

 private:
  Agent agent_;
  const Dataset* ds_;
  Rng rng_;
  AdamW opt_;
  long step_ = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  long checked = 0;
};

// Central differences against reverse-mode gradients. Entries are sampled
// (up to `per_tensor` per tensor, deterministic) to bound the cost.
// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult finite_difference_check(const std::function<Var()>& loss, ParamList params,
                                               double h = 1e-5, int per_tensor = 16,
                                               double floor = 1e-6, std::uint64_t seed = 7) {
  for (auto& p : params) p.var.zero_grad();
  Var base = loss();
  ad::backward(base);
  std::vector<Matrix> analytic;
  for (auto& p : params)
    analytic.push_back(p.var.has_grad() ? p.var.grad() : Matrix::Zero(p.var.rows(), p.var.cols()));
  GradCheckResult res;
  Rng rng = derive_rng(seed, 0x6C);
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix& w = params[i].var.mutable_value();
    const Eigen::Index n = w.size();
    std::vector<Eigen::Index> idx;
    if (n <= per_tensor) {
      for (Eigen::Index j = 0; j < n; ++j) idx.push_back(j);
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      for (int j = 0; j < per_tensor; ++j) idx.push_back(pick(rng));
    }
    for (Eigen::Index j : idx) {
      const double orig = w.data()[j];
      w.data()[j] = orig + h;
      const double fp = loss().scalar();
      w.data()[j] = orig - h;
      const double fm = loss().scalar();
      w.data()[j] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double an = analytic[i].data()[j];
      const double err = std::abs(an - num) / std::max({std::abs(an), std::abs(num), floor});
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = params[i].name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return res;
}

// Full-model check of total_loss over every critic and policy tensor, with
// dropout off and detached quantities frozen at the base point.
inline GradCheckResult gradient_check(Agent& agent, TrainBatch batch, const LossWeights& weights,
                                      double h = 1e-5, int per_tensor = 16) {
  Rng rng = derive_rng(agent.config.seed, 0x6D);
  FrozenInputs frozen;
  LossOptions lo;
  lo.weights = weights;
  lo.train = false;
  lo.rng = &rng;
  lo.frozen = &frozen;
  compute_losses(agent, batch, lo);
  frozen.set = true;
  auto loss = [&]() { return compute_losses(agent, batch, lo).total; };
  return finite_difference_check(loss, agent.parameters(), h, per_tensor);
}

}  // namespace stitchgrid

#endif  // STITCHGRID_TRAINER_HPP_
