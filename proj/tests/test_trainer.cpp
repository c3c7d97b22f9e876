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


#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stitchgrid/checkpoint.hpp"
#include "stitchgrid/rollout.hpp"
#include "train_checks.hpp"

namespace stitchgrid {
namespace {

using testing::tiny_config;
using testing::tiny_dataset;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("stitchgrid_" + name)).string();
}

std::vector<Matrix> snapshot(const ParamList& ps) {
  std::vector<Matrix> out;
  for (const auto& p : ps) out.push_back(p.var.value());
  return out;
}

double max_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return m;
}

TEST(AssembleBatch, SingleStepWindowsHaveNoPadding) {
  const Dataset ds = tiny_dataset();
  Rng rng(1);
  TrainBatch b = assemble_batch(ds, 16, 1, rng);
  for (int p : b.seq.pad) EXPECT_EQ(p, 0);
  EXPECT_EQ(b.valid.sum(), 16.0);
}

TEST(AssembleBatch, WindowsAreRightAlignedWithConstantGoal) {
  const Dataset ds = tiny_dataset();
  Rng rng(2);
  const int K = 4;
  TrainBatch b = assemble_batch(ds, 32, K, rng);
  for (int i = 0; i < 32; ++i) {
    const Trajectory& tr = ds.trajectories[static_cast<size_t>(b.traj[static_cast<size_t>(i)])];
    const int t = b.anchor[static_cast<size_t>(i)];
    EXPECT_EQ(b.seq.pad[static_cast<size_t>(i)], std::max(0, K - 1 - t));
    for (int k = 0; k < K; ++k) {
      const int r = i * K + k;
      EXPECT_EQ(b.seq.goals.row(r), b.seq.goals.row(i * K + K - 1));
      if (k < b.seq.pad[static_cast<size_t>(i)]) {
        EXPECT_EQ(b.valid(r, 0), 0.0);
        EXPECT_EQ(b.seq.actions[static_cast<size_t>(r)], -1);
      } else {
        EXPECT_EQ(b.seq.actions[static_cast<size_t>(r)], tr.actions[static_cast<size_t>(t - (K - 1 - k))]);
      }
    }
  }
}

TEST(AssembleBatch, TrajectoryGoalsOccurLater) {
  Dataset ds = tiny_dataset();
  ds.her.p_trajgoal = 1.0;
  ds.her.p_randomgoal = 0.0;
  Rng rng(3);
  TrainBatch b = assemble_batch(ds, 64, 2, rng);
  for (int i = 0; i < 64; ++i) {
    EXPECT_GT(b.goal_index[static_cast<size_t>(i)], b.anchor[static_cast<size_t>(i)]);
    const Trajectory& tr = ds.trajectories[static_cast<size_t>(b.traj[static_cast<size_t>(i)])];
    EXPECT_EQ(tr.cells[static_cast<size_t>(b.goal_index[static_cast<size_t>(i)])], b.goal_cell[static_cast<size_t>(i)]);
    EXPECT_EQ(b.rtg(b.anchor_row(i), 0), 1.0);
  }
}

TEST(AssembleBatch, Deterministic) {
  const Dataset ds = tiny_dataset();
  Rng a(4), c(4);
  TrainBatch x = assemble_batch(ds, 8, 3, a), y = assemble_batch(ds, 8, 3, c);
  EXPECT_EQ(x.seq.obs, y.seq.obs);
  EXPECT_EQ(x.seq.goals, y.seq.goals);
  EXPECT_EQ(x.seq.actions, y.seq.actions);
  Dataset empty;
  EXPECT_THROW(assemble_batch(empty, 8, 3, a), InvalidInput);
}

TEST(TrainStep, CriticOnlyWeightsLeavePolicyUntouched) {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.weights = {1.0, 0.0, 0.0};
  Trainer tr = Trainer::create(cfg, ds);
  const auto pol = snapshot(tr.agent().policy->parameters());
  const auto cri = snapshot(tr.agent().critic->parameters());
  tr.step();
  EXPECT_EQ(max_diff(pol, snapshot(tr.agent().policy->parameters())), 0.0);
  EXPECT_GT(max_diff(cri, snapshot(tr.agent().critic->parameters())), 0.0);
}

TEST(TrainStep, Deterministic) {
  const Dataset ds = tiny_dataset();
  Trainer a = Trainer::create(tiny_config(), ds), b = Trainer::create(tiny_config(), ds);
  for (int i = 0; i < 3; ++i) {
    const StepMetrics ma = a.step(), mb = b.step();
    EXPECT_EQ(ma.total, mb.total);
    EXPECT_EQ(ma.grad_norm, mb.grad_norm);
  }
  EXPECT_EQ(max_diff(snapshot(a.agent().parameters()), snapshot(b.agent().parameters())), 0.0);
}

TEST(TrainStep, LossDecreasesOverTraining) {
  const Dataset ds = tiny_dataset(0, 40, 30);
  TrainConfig cfg = tiny_config();
  cfg.steps = 500;
  cfg.batch_size = 16;
  cfg.warmup_steps = 20;
  Trainer tr = Trainer::create(cfg, ds);
  std::vector<double> window;
  double sum = 0.0;
  for (long s = 0; s < cfg.steps; ++s) {
    sum += tr.step().total;
    if ((s + 1) % 100 == 0) {
      window.push_back(sum / 100.0);
      sum = 0.0;
    }
  }
  // Mini-batch noise makes neighbouring windows jitter once the curve flattens.
  ASSERT_EQ(window.size(), 5u);
  EXPECT_LT(window[1], window[0]);
  EXPECT_LT(window[3] + window[4], window[0] + window[1]);
  EXPECT_LT(window[4], 0.95 * window[0]);
}

TEST(TrainStep, StopGradientKeepsCriticGradientPure) {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  Agent agent = make_agent(cfg, ds.grid, true, true);
  Rng brng(5);
  const TrainBatch base = assemble_batch(ds, 6, 3, brng);
  auto critic_grad = [&](const LossWeights& w) {
    for (auto& p : agent.parameters()) p.var.zero_grad();
    TrainBatch b = base;
    Rng rng(6);
    LossOptions lo;
    lo.weights = w;
    lo.rng = &rng;
    lo.train = false;
    ad::backward(compute_losses(agent, b, lo).total);
    std::vector<Matrix> g;
    for (auto& p : agent.critic->parameters()) g.push_back(p.var.has_grad() ? p.var.grad() : Matrix::Zero(p.var.rows(), p.var.cols()));
    return g;
  };
  EXPECT_EQ(max_diff(critic_grad({1, 1, 1}), critic_grad({1, 0, 0})), 0.0);
}

TEST(TrainStep, StageWeights) {
  TrainConfig cfg = tiny_config();
  cfg.stage = Stage::kCritic;
  LossWeights w = stage_weights(cfg, 0);
  EXPECT_EQ(w.bc, 0.0);
  EXPECT_EQ(w.q, 0.0);
  EXPECT_EQ(w.critic, 1.0);
  cfg.stage = Stage::kTwoPhase;
  cfg.critic_steps = 10;
  EXPECT_EQ(stage_weights(cfg, 9).bc, 0.0);
  EXPECT_EQ(stage_weights(cfg, 10).critic, 0.0);
  EXPECT_EQ(stage_weights(cfg, 10).bc, 1.0);
  cfg.stage = Stage::kJoint;
  cfg.conditioning = Conditioning::kNone;
  w = stage_weights(cfg, 0);
  EXPECT_EQ(w.q, 0.0);
  EXPECT_EQ(w.critic, 0.0);
}

TEST(TrainStep, NoQConditioningUsesReturnToGo) {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.conditioning = Conditioning::kNone;
  Trainer tr = Trainer::create(cfg, ds);
  EXPECT_FALSE(tr.agent().critic.has_value());
  const StepMetrics m = tr.step();
  EXPECT_TRUE(std::isnan(m.q));
  EXPECT_TRUE(std::isnan(m.nf));
  EXPECT_TRUE(std::isfinite(m.bc));
}

TEST(Schedule, WarmupReachesPeakThenCosine) {
  LrSchedule s{1e-3, 10, 110, true};
  EXPECT_NEAR(s.at(0), 1e-4, 1e-18);
  EXPECT_DOUBLE_EQ(s.at(9), 1e-3);
  EXPECT_DOUBLE_EQ(s.at(10), 1e-3);
  EXPECT_NEAR(s.at(60), 5e-4, 1e-15);
  EXPECT_NEAR(s.at(110), 0.0, 1e-18);
  LrSchedule flat{2e-3, 0, 10, false};
  EXPECT_DOUBLE_EQ(flat.at(7), 2e-3);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Var w = ad::parameter(Matrix::Constant(1, 2, 1.0));
  AdamW opt({{"w", w}}, {});
  ad::backward(ad::sum(ad::scale(w, 3.0)));
  opt.step(0.1);
  EXPECT_NEAR(w.value()(0, 0), 0.9, 1e-8);
  AdamW::Options o;
  o.weight_decay = 0.5;
  Var v = ad::parameter(Matrix::Constant(1, 1, 2.0));
  AdamW wd({{"v", v}}, o);
  v.grad().setZero();
  wd.step(0.1);
  EXPECT_NEAR(v.scalar(), 2.0 * 0.95, 1e-12);
}

TEST(GradientCheck, LinearToyIsExact) {
  Rng rng(7);
  Linear lin(3, 2, rng);
  ParamList ps;
  lin.collect("lin", ps);
  const Matrix x = normal_matrix(5, 3, 1.0, rng);
  auto loss = [&]() { return ad::mean(ad::square(lin(ad::constant(x)))); };
  EXPECT_LT(finite_difference_check(loss, ps, 1e-5, 100).max_rel_error, 1e-8);
}

TEST(GradientCheck, FullHybridModelAllLosses) {
  const GradCheckResult r = testing::full_model_gradcheck(0, 24);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  EXPECT_GT(r.checked, 500);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const Dataset ds = tiny_dataset();
  Trainer tr = Trainer::create(tiny_config(), ds);
  for (int i = 0; i < 3; ++i) tr.step();
  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, tr.agent(), tr.step_count(), &tr.optimizer(), &tr.rng());
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(max_diff(snapshot(tr.agent().parameters()), snapshot(ck.agent.parameters())), 0.0);
  EXPECT_EQ(ck.step, 3);
  EXPECT_EQ(ck.agent.normalizer.mean_abs, tr.agent().normalizer.mean_abs);
  EXPECT_EQ(to_text(ck.agent.config), to_text(tr.agent().config));
  EXPECT_EQ(ck.adam_steps, 3);
  // identical evaluation before and after
  const std::vector<EvalTask> tasks = {{0, 15, 8}, {3, 12, 8}};
  const EvalSummary a = evaluate(tr.agent(), tasks, {0, 1}), b = evaluate(ck.agent, tasks, {0, 1});
  for (size_t s = 0; s < 2; ++s)
    for (size_t t = 0; t < 2; ++t) EXPECT_EQ(a.results[s][t].actions, b.results[s][t].actions);
  std::remove(path.c_str());
}

TEST(Checkpoint, ResumeReproducesUninterruptedRun) {
  const Dataset ds = tiny_dataset();
  Trainer full = Trainer::create(tiny_config(), ds);
  for (int i = 0; i < 6; ++i) full.step();
  Trainer first = Trainer::create(tiny_config(), ds);
  for (int i = 0; i < 3; ++i) first.step();
  const std::string path = temp_path("resume.ckpt");
  save_checkpoint(path, first.agent(), first.step_count(), &first.optimizer(), &first.rng());
  const Checkpoint ck = load_checkpoint(path);
  Trainer resumed(ck.agent, ds);
  restore_trainer_state(resumed, ck);
  for (int i = 0; i < 3; ++i) resumed.step();
  EXPECT_EQ(max_diff(snapshot(full.agent().parameters()), snapshot(resumed.agent().parameters())), 0.0);
  std::remove(path.c_str());
}

TEST(Checkpoint, CriticOnlyHasNoPolicy) {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.stage = Stage::kCritic;
  Trainer tr = Trainer::create(cfg, ds);
  const std::string path = temp_path("critic.ckpt");
  save_checkpoint(path, tr.agent(), 0);
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_FALSE(ck.agent.policy.has_value());
  EXPECT_THROW(require_policy(ck.agent), CheckpointError);
  EXPECT_THROW(rollout(ck.agent, {0, 5, 3}, tr.rng()), CheckpointError);
  std::remove(path.c_str());
}

TEST(Checkpoint, CorruptAndForeignFiles) {
  const Dataset ds = tiny_dataset();
  Trainer tr = Trainer::create(tiny_config(), ds);
  const std::string path = temp_path("bad.ckpt");
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  save_checkpoint(path, tr.agent(), 0);
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  {
    std::string v = bytes;
    v[8] = 9;  // version
    std::ofstream os(path, std::ios::binary);
    os << v;
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  {
    std::ofstream os(path, std::ios::binary);
    os << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), IoError);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace stitchgrid
