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

#ifndef STITCHGRID_LAB_HPP_
#define STITCHGRID_LAB_HPP_

// Controlled GridWorld studies: expectile sweep, flow-vs-oracle KL,
// selective-scan adaptation, conditioning-signal coverage and stitching.

#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stitchgrid/dataset_io.hpp"
#include "stitchgrid/oracle.hpp"
#include "stitchgrid/rollout.hpp"

namespace stitchgrid {

struct MetricsRecord {
  long step = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::map<std::string, double> values;

  void set(const std::string& key, double v) {
    if (!std::isfinite(v)) throw NumericError("metric '" + key + "' is not finite");
    values[key] = v;
  }

  json to_json() const {
    json j;
    j["step"] = step;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["metrics"] = values;
    return j;
  }
};

inline void write_metrics(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write metrics '" + path + "'");
  for (const auto& r : records) os << r.to_json().dump() << "\n";
  if (!os) throw IoError("failed writing metrics '" + path + "'");
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << j.dump(2) << "\n";
  if (!os) throw IoError("failed writing '" + path + "'");
}

// Fixed-precision formatting keeps CSV files byte-stable.
inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline double r_squared(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size()) throw InvalidInput("r_squared: length mismatch");
  if (y_true.size() < 2) throw InvalidInput("r_squared: need at least 2 samples");
  double mean = 0.0;
  for (double v : y_true) mean += v;
  mean /= static_cast<double>(y_true.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < y_true.size(); ++i) {
    ss_res += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    ss_tot += (y_true[i] - mean) * (y_true[i] - mean);
  }
  if (ss_tot <= 0.0) throw NumericError("r_squared: undefined for zero-variance targets");
  return 1.0 - ss_res / ss_tot;
}

inline double mae(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size()) throw InvalidInput("mae: length mismatch");
  if (y_true.empty()) throw InvalidInput("mae: empty input");
  double s = 0.0;
  for (size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_true[i] - y_pred[i]);
  return s / static_cast<double>(y_true.size());
}

// ---------------------------------------------------------------------------
// Expectile sweep.
//
// Samples are the behavior occupancies P[s, a, g] of every dataset action at s,
// weighted by action frequency; the target is their maximum. An expectile
// regressor should approach that maximum as tau -> 1.

struct ExpectileLabConfig {
  int width = 5;
  int height = 5;
  int n_traj = 100;
  int traj_len = 100;
  double gamma = 0.95;
  std::vector<int> hidden = {128, 128};
  long steps = 6000;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

struct ExpectileRow {
  double tau = 0.0;
  double r2 = 0.0;
  double mae = 0.0;
  double final_loss = 0.0;
};

struct ExpectileLabResult {
  std::vector<ExpectileRow> rows;
  long samples = 0;
  long evaluated = 0;
};

namespace detail {

// One input per visited (s, g); each (s, a, g) sample points at its input
// row, so the predictor runs once per pair.
struct ExpectileData {
  Matrix inputs;  // [s, g] standardized centers
  std::vector<double> truth;
  std::vector<int> sample_input;
  Matrix targets;  // samples x 1, scaled
  Matrix weights;  // samples x 1
  double scale = 1.0;
};

inline ExpectileData expectile_data(const ExpectileLabConfig& cfg) {
  const GridSpec grid = GridSpec::open(cfg.width, cfg.height);
  GeneratorConfig gen;
  gen.n_traj = cfg.n_traj;
  gen.traj_len = cfg.traj_len;
  gen.seed = cfg.seed;
  const Dataset ds = generate_dataset(grid, gen);
  const OccupancyTensors occ = occupancy(grid, *ds.behavior, cfg.gamma);
  const int S = grid.cell_count();
  Matrix counts = Matrix::Zero(S, kActionCount);
  for (const auto& tr : ds.trajectories)
    for (int t = 0; t < tr.length(); ++t) counts(tr.cells[static_cast<size_t>(t)], tr.actions[static_cast<size_t>(t)]) += 1.0;
  const Matrix qstar = in_distribution_max(occ.P, counts);

  const auto shift = grid_shift(grid), scale = grid_scale(grid);
  auto put = [&](Matrix& m, Eigen::Index r, int s, int g) {
    const Vec2 a = grid.center(s), b = grid.center(g);
    m(r, 0) = (a.x - shift[0]) / scale[0];
    m(r, 1) = (a.y - shift[1]) / scale[1];
    m(r, 2) = (b.x - shift[0]) / scale[0];
    m(r, 3) = (b.y - shift[1]) / scale[1];
  };

  ExpectileData d;
  long rows = 0, evals = 0;
  for (int s = 0; s < S; ++s) {
    if (counts.row(s).sum() <= 0) continue;
    for (int a = 0; a < kActionCount; ++a)
      if (counts(s, a) > 0) rows += S;
    evals += S;
  }
  d.inputs.resize(evals, 4);
  d.targets.resize(rows, 1);
  d.weights.resize(rows, 1);
  Eigen::Index r = 0, e = 0;
  for (int s = 0; s < S; ++s) {
    const double n = counts.row(s).sum();
    if (n <= 0) continue;
    const Eigen::Index first = e;
    for (int g = 0; g < S; ++g) {
      put(d.inputs, e++, s, g);
      d.truth.push_back(qstar(s, g));
    }
    for (int a = 0; a < kActionCount; ++a) {
      if (counts(s, a) <= 0) continue;
      for (int g = 0; g < S; ++g) {
        d.sample_input.push_back(static_cast<int>(first + g));
        d.targets(r, 0) = occ.p(s, a, g);
        d.weights(r, 0) = counts(s, a) / n;
        ++r;
      }
    }
  }
  // Unit-variance targets; predictions are mapped back before scoring.
  const double mean = d.targets.mean();
  d.scale = std::sqrt((d.targets.array() - mean).square().mean());
  if (d.scale <= 0.0) d.scale = 1.0;
  d.targets /= d.scale;
  return d;
}

}  // namespace detail

inline ExpectileLabResult expectile_lab(const std::vector<double>& taus, const ExpectileLabConfig& cfg) {
  for (double t : taus)
    if (!(t > 0.0 && t < 1.0)) throw InvalidInput("expectile_lab: tau must lie in (0, 1)");
  const detail::ExpectileData d = detail::expectile_data(cfg);
  ExpectileLabResult out;
  out.samples = d.targets.rows();
  out.evaluated = d.inputs.rows();
  const Var x = ad::constant(d.inputs);
  for (double tau : taus) {
    Rng init = derive_rng(cfg.seed, 0xE1);  // identical start for every tau
    Mlp net(4, cfg.hidden, 1, init);
    ParamList params;
    net.collect("predictor", params);
    AdamW opt(params, {});
    const LrSchedule sched{cfg.lr, 0, cfg.steps, true};
    const Regression reg{RegressionKind::kExpectile, tau};
    double last = 0.0;
    for (long step = 0; step < cfg.steps; ++step) {
      opt.zero_grad();
      Var loss = q_loss(d.targets, ad::gather_rows(net(x), d.sample_input), reg, &d.weights);
      ad::backward(loss);
      opt.step(sched.at(step));
      last = loss.scalar();
    }
    const Matrix pred = net(x).value() * d.scale;
    std::vector<double> p(pred.data(), pred.data() + pred.size());
    out.rows.push_back({tau, r_squared(d.truth, p), mae(d.truth, p), last});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flow critic against the analytic occupancy.

struct FlowKlConfig {
  int width = 5;
  int height = 5;
  int n_traj = 100;
  int traj_len = 100;
  double gamma = 0.9;
  int mc_samples = 64;
  long eval_every = 1000;
  TrainConfig train;  // stage is forced to critic, context to 1

  FlowKlConfig() {
    train.steps = 6000;
    train.batch_size = 256;
    train.lr = 3e-3;
    train.warmup_steps = 100;
    train.noise_sigma = 0.0;
    train.flow_blocks = 6;
    train.flow_channels = 128;
    train.encoder_hidden = 128;
    train.z_dim = 32;
  }
};

struct KlPoint {
  long step = 0;
  double kl = 0.0;
};

struct FlowKlResult {
  std::vector<KlPoint> curve;
  double uniform_kl = 0.0;
  double initial_kl = 0.0;
  double final_kl = 0.0;
};

// Cell probabilities Qhat[s, a, g]: Monte-Carlo average of the density over
// each goal cell (common sample points for every row), renormalized per row.
// Conditioning observations are cell centers.
inline Matrix cell_probabilities(const ConditionalFlow& flow, const GridSpec& grid, int samples, Rng& rng) {
  if (samples < 1) throw InvalidInput("cell_probabilities: samples must be >= 1");
  const int S = grid.cell_count();
  const double h = grid.noise_half_width > 0.0 ? grid.noise_half_width : 0.5;
  std::uniform_real_distribution<double> u(-h, h);
  Matrix pts(static_cast<Eigen::Index>(S) * samples, 2);
  for (int g = 0; g < S; ++g) {
    const Vec2 c = grid.center(g);
    for (int m = 0; m < samples; ++m) {
      pts(g * samples + m, 0) = c.x + u(rng);
      pts(g * samples + m, 1) = c.y + u(rng);
    }
  }
  Matrix out = Matrix::Zero(S * kActionCount, S);
  const Eigen::Index n = pts.rows();
  for (int s = 0; s < S; ++s) {
    if (grid.is_wall(s)) continue;
    const Vec2 c = grid.center(s);
    for (int a = 0; a < kActionCount; ++a) {
      Matrix obs(n, 2);
      obs.col(0).setConstant(c.x);
      obs.col(1).setConstant(c.y);
      const Matrix logp = flow.log_density(pts, obs, std::vector<int>(static_cast<size_t>(n), a)).value();
      for (int g = 0; g < S; ++g) {
        if (grid.is_wall(g)) continue;
        out(s * kActionCount + a, g) = logp.middleRows(g * samples, samples).array().exp().mean();
      }
      const double total = out.row(s * kActionCount + a).sum();
      if (total > 0.0) out.row(s * kActionCount + a) /= total;
    }
  }
  return out;
}

inline FlowKlResult flow_kl_curve(const FlowKlConfig& cfg) {
  const GridSpec grid = GridSpec::open(cfg.width, cfg.height);
  GeneratorConfig gen;
  gen.n_traj = cfg.n_traj;
  gen.traj_len = cfg.traj_len;
  gen.seed = cfg.train.seed;
  // Pure geometric future goals so the training target is the occupancy.
  HerConfig her{1.0, 0.0, FutureSampling::kGeometric, cfg.gamma};
  const Dataset ds = generate_dataset(grid, gen, her);
  const OccupancyTensors occ = occupancy(grid, *ds.behavior, cfg.gamma);

  TrainConfig tc = cfg.train;
  tc.stage = Stage::kCritic;
  tc.context = 1;
  Trainer tr = Trainer::create(tc, ds);
  FlowKlResult res;
  res.uniform_kl = uniform_baseline_kl(occ.P);
  auto eval = [&](long step) {
    Rng mc = derive_rng(tc.seed, 0x3C);
    const double kl = forward_kl(occ.P, cell_probabilities(*tr.agent().critic, grid, cfg.mc_samples, mc));
    res.curve.push_back({step, kl});
  };
  eval(0);
  for (long s = 1; s <= tc.steps; ++s) {
    tr.step();
    if (s % cfg.eval_every == 0 || s == tc.steps) eval(s);
  }
  res.initial_kl = res.curve.front().kl;
  res.final_kl = res.curve.back().kl;
  return res;
}

// ---------------------------------------------------------------------------
// Content adaptation: the same model trained on correlated-noise ("play")
// and uncorrelated-noise expert data.

struct AdaptationConfig {
  int width = 7;
  int height = 7;
  int n_traj = 200;
  int traj_len = 100;
  double noise_scale = 1.5;
  double rho = 0.95;
  int eval_batches = 50;
  int eval_batch_size = 256;
  TrainConfig train;

  AdaptationConfig() {
    train.steps = 1000;
    train.batch_size = 64;
    train.lr = 3e-3;
    train.warmup_steps = 50;
    train.d_model = 32;
    train.blocks = 2;
    train.heads = 2;
    train.ssm_state = 8;
    train.dropout = 0.0;
    train.conditioning = Conditioning::kNone;
    train.flow_blocks = 2;
    train.flow_channels = 32;
    train.encoder_hidden = 32;
    train.z_dim = 8;
  }
};

struct AdaptationResult {
  DeltaStats correlated;
  DeltaStats uncorrelated;
};

inline Dataset adaptation_dataset(const AdaptationConfig& cfg, bool correlated, std::uint64_t seed) {
  GeneratorConfig gen;
  gen.policy = correlated ? BehaviorPolicyKind::correlated(cfg.noise_scale, cfg.rho)
                          : BehaviorPolicyKind::markov(cfg.noise_scale);
  gen.n_traj = cfg.n_traj;
  gen.traj_len = cfg.traj_len;
  gen.seed = seed;
  return generate_dataset(GridSpec::open(cfg.width, cfg.height), gen);
}

// Trains on `ds` and accumulates scan statistics over fresh evaluation
// batches drawn from the same data.
inline DeltaStats adaptation_arm(const AdaptationConfig& cfg, const Dataset& ds) {
  Trainer tr = Trainer::create(cfg.train, ds);
  for (long s = 0; s < cfg.train.steps; ++s) tr.step();
  const HybridSequenceModel& model = *tr.agent().policy;
  Rng rng = derive_rng(cfg.train.seed, 0xAD);
  DeltaAccumulator acc;
  for (int b = 0; b < cfg.eval_batches; ++b) {
    TrainBatch batch = assemble_batch(ds, cfg.eval_batch_size, cfg.train.context, rng);
    for (size_t r = 0; r < batch.seq.q_present.size(); ++r) {
      batch.seq.q(static_cast<Eigen::Index>(r), 0) = batch.rtg(static_cast<Eigen::Index>(r), 0);
      batch.seq.q_present[r] = batch.valid(static_cast<Eigen::Index>(r), 0) > 0 ? 1 : 0;
    }
    ForwardTrace trace;
    ForwardOptions opt;
    opt.trace = &trace;
    model.forward(batch.seq, opt);
    acc.add(trace);
  }
  return acc.stats();
}

inline AdaptationResult adaptation_study(const AdaptationConfig& cfg) {
  AdaptationResult r;
  const std::uint64_t seed = cfg.train.seed;
  r.correlated = adaptation_arm(cfg, adaptation_dataset(cfg, true, seed));
  r.uncorrelated = adaptation_arm(cfg, adaptation_dataset(cfg, false, seed));
  return r;
}

// ---------------------------------------------------------------------------
// Conditioning-signal coverage.
//
// Each trajectory is one segment with one goal drawn uniformly from the free
// cells. For every (s, a) visit the segment contributes its sparse return to
// go (1 if the goal is occupied later in the segment) and the critic's
// normalized Q for that goal.

struct CoverageResult {
  double rtg_coverage = 0.0;
  double q_coverage = 0.0;
  long bins = 0;
  long visits = 0;
};

inline CoverageResult coverage_study(const Dataset& ds, const ConditionalFlow& critic,
                                     std::uint64_t seed, double delta = 1e-3,
                                     double threshold = 0.01) {
  const GridSpec& grid = ds.grid;
  const std::vector<int> free = grid.free_cells();
  Rng rng = derive_rng(seed, 0xC0);
  std::vector<long> keys;
  std::vector<double> rtg;
  std::vector<Vec2> obs, goals;
  std::vector<int> actions;
  for (const auto& tr : ds.trajectories) {
    const int g = detail::uniform_free_cell(free, rng);
    const Vec2 gp = grid.center(g);
    int last_hit = -1;
    for (int j = tr.length(); j >= 1; --j)
      if (tr.cells[static_cast<size_t>(j)] == g) {
        last_hit = j;
        break;
      }
    for (int t = 0; t < tr.length(); ++t) {
      keys.push_back(static_cast<long>(tr.cells[static_cast<size_t>(t)]) * kActionCount +
                     tr.actions[static_cast<size_t>(t)]);
      rtg.push_back(last_hit > t ? 1.0 : 0.0);
      obs.push_back(tr.observations[static_cast<size_t>(t)]);
      goals.push_back(gp);
      actions.push_back(tr.actions[static_cast<size_t>(t)]);
    }
  }
  CoverageResult res;
  res.visits = static_cast<long>(keys.size());
  if (keys.empty()) return res;
  const Eigen::Index n = static_cast<Eigen::Index>(keys.size());
  Matrix o(n, 2), gm(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    o(i, 0) = obs[static_cast<size_t>(i)].x;
    o(i, 1) = obs[static_cast<size_t>(i)].y;
    gm(i, 0) = goals[static_cast<size_t>(i)].x;
    gm(i, 1) = goals[static_cast<size_t>(i)].y;
  }
  Matrix q(n, 1);
  const Eigen::Index chunk = 4096;
  for (Eigen::Index i = 0; i < n; i += chunk) {
    const Eigen::Index m = std::min(chunk, n - i);
    std::vector<int> a(actions.begin() + i, actions.begin() + i + m);
    q.middleRows(i, m) = critic.log_density(gm.middleRows(i, m), o.middleRows(i, m), a).value();
  }
  const Matrix qt = normalize_q(q, delta);
  std::map<long, std::vector<double>> rtg_bins, q_bins;
  for (Eigen::Index i = 0; i < n; ++i) {
    rtg_bins[keys[static_cast<size_t>(i)]].push_back(rtg[static_cast<size_t>(i)]);
    q_bins[keys[static_cast<size_t>(i)]].push_back(qt(i, 0));
  }
  res.bins = static_cast<long>(rtg_bins.size());
  res.rtg_coverage = signal_coverage(rtg_bins, threshold);
  res.q_coverage = signal_coverage(q_bins, threshold);
  return res;
}

// ---------------------------------------------------------------------------
// Stitching: agents trained on short-range data evaluated on distant pairs.

struct StitchConfig {
  int width = 9;
  int height = 9;
  int n_traj = 400;
  int traj_len = 40;
  int max_travel = 4;
  int min_distance = 8;
  int tasks = 40;
  int max_steps = 40;
  int eval_seeds = 2;
  double her_gamma = 0.99;
  TrainConfig train;

  StitchConfig() {
    train.steps = 1000;
    train.batch_size = 64;
    train.lr = 3e-3;
    train.regression.tau = 0.99;
    train.warmup_steps = 100;
    train.d_model = 32;
    train.blocks = 2;
    train.heads = 2;
    train.ssm_state = 8;
    train.dropout = 0.0;
    train.context = 5;
    train.flow_blocks = 4;
    train.flow_channels = 64;
    train.encoder_hidden = 64;
    train.z_dim = 16;
  }
};

inline Dataset stitch_dataset(const StitchConfig& cfg, std::uint64_t seed) {
  GeneratorConfig gen;
  gen.n_traj = cfg.n_traj;
  gen.traj_len = cfg.traj_len;
  gen.seed = seed;
  gen.max_travel = cfg.max_travel;
  HerConfig her;
  her.gamma = cfg.her_gamma;
  return generate_dataset(GridSpec::open(cfg.width, cfg.height), gen, her);
}

inline std::vector<EvalTask> stitch_tasks(const StitchConfig& cfg, const GridSpec& grid) {
  Rng rng = derive_rng(0, 0x7A5C);  // fixed task set across seeds and arms
  return sample_tasks(grid, cfg.tasks, cfg.min_distance, cfg.max_steps, rng);
}

struct StitchRun {
  EvalSummary summary;
  Agent agent;
};

inline StitchRun stitch_run(const StitchConfig& cfg, const Dataset& ds, Conditioning cond,
                            std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.conditioning = cond;
  tc.seed = seed;
  Trainer tr = Trainer::create(tc, ds);
  for (long s = 0; s < tc.steps; ++s) tr.step();
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.eval_seeds; ++i) seeds.push_back(seed * 1000 + static_cast<std::uint64_t>(i));
  StitchRun r{evaluate(tr.agent(), stitch_tasks(cfg, ds.grid), seeds), tr.agent()};
  return r;
}

}  // namespace stitchgrid

#endif  // STITCHGRID_LAB_HPP_
