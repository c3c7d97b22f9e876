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

#include <vector>

#include "stitchgrid/lab.hpp"
#include "train_checks.hpp"

namespace stitchgrid {
namespace {

TEST(Metrics, RSquaredExamples) {
  const std::vector<double> t = {0.0, 1.0, 2.0};
  EXPECT_DOUBLE_EQ(r_squared(t, t), 1.0);
  EXPECT_DOUBLE_EQ(r_squared(t, std::vector<double>{1.0, 1.0, 1.0}), 0.0);
  EXPECT_DOUBLE_EQ(r_squared(t, std::vector<double>{0.0, 1.0, 1.0}), 0.5);
  EXPECT_LT(r_squared(t, std::vector<double>{2.0, 1.0, 0.0}), 0.0);
  EXPECT_THROW(r_squared(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 2.0}), NumericError);
  EXPECT_THROW(r_squared(std::vector<double>{1.0}, std::vector<double>{1.0}), InvalidInput);
  EXPECT_THROW(r_squared(t, std::vector<double>{1.0}), InvalidInput);
}

TEST(Metrics, MaeExamples) {
  const std::vector<double> a = {0.0, 0.0}, b = {1.0, -1.0};
  EXPECT_DOUBLE_EQ(mae(a, a), 0.0);
  EXPECT_DOUBLE_EQ(mae(a, b), 1.0);
  EXPECT_DOUBLE_EQ(mae(std::vector<double>{5.0, 5.0}, std::vector<double>{6.0, 4.0}), 1.0);
  EXPECT_THROW(mae(std::vector<double>{}, std::vector<double>{}), InvalidInput);
}

TEST(CellProbabilities, RowsAreDistributions) {
  const GridSpec g = GridSpec::open(3, 3);
  TrainConfig cfg = testing::tiny_config();
  const Agent agent = make_agent(cfg, g, true, false);
  Rng rng(1);
  const Matrix q = cell_probabilities(*agent.critic, g, 8, rng);
  ASSERT_EQ(q.rows(), 36);
  ASSERT_EQ(q.cols(), 9);
  for (Eigen::Index r = 0; r < q.rows(); ++r) EXPECT_NEAR(q.row(r).sum(), 1.0, 1e-12);
  EXPECT_GE(q.minCoeff(), 0.0);
  Matrix P = Matrix::Constant(36, 9, 1.0 / 9.0);
  EXPECT_GE(forward_kl(P, q), 0.0);
  EXPECT_THROW(cell_probabilities(*agent.critic, g, 0, rng), InvalidInput);
}

TEST(ExpectileLab, SmallSweepRunsAndSharesInitialization) {
  ExpectileLabConfig cfg;
  cfg.width = 3;
  cfg.height = 3;
  cfg.n_traj = 10;
  cfg.traj_len = 20;
  cfg.hidden = {16};
  cfg.steps = 200;
  const ExpectileLabResult r = expectile_lab({0.5, 0.9}, cfg);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_GT(r.samples, r.evaluated);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(std::isfinite(row.r2));
    EXPECT_GE(row.mae, 0.0);
  }
  const ExpectileLabResult again = expectile_lab({0.9}, cfg);
  EXPECT_EQ(again.rows[0].r2, r.rows[1].r2);
  EXPECT_THROW(expectile_lab({1.0}, cfg), InvalidInput);
}

TEST(ExpectileLab, TargetsAreInDistributionMaxima) {
  ExpectileLabConfig cfg;
  cfg.width = 3;
  cfg.height = 3;
  cfg.n_traj = 10;
  cfg.traj_len = 20;
  const detail::ExpectileData d = detail::expectile_data(cfg);
  std::vector<double> best(static_cast<size_t>(d.inputs.rows()), -1.0);
  for (Eigen::Index i = 0; i < d.targets.rows(); ++i) {
    const size_t k = static_cast<size_t>(d.sample_input[static_cast<size_t>(i)]);
    best[k] = std::max(best[k], d.targets(i, 0) * d.scale);
  }
  for (size_t k = 0; k < best.size(); ++k) EXPECT_NEAR(best[k], d.truth[k], 1e-12);
}

TEST(Coverage, AlwaysSuccessfulDataHasNoReturnVariance) {
  Dataset ds;
  ds.grid = GridSpec::open(1, 1);
  Rng rng(2);
  std::uniform_int_distribution<int> a(0, 3);
  for (int i = 0; i < 5; ++i) {
    Trajectory t;
    for (int s = 0; s <= 10; ++s) {
      t.cells.push_back(0);
      t.observations.push_back(observe(ds.grid, 0, rng));
      if (s < 10) t.actions.push_back(a(rng));
    }
    ds.trajectories.push_back(t);
  }
  const Agent agent = make_agent(testing::tiny_config(), ds.grid, true, false);
  const CoverageResult c = coverage_study(ds, *agent.critic, 0);
  EXPECT_EQ(c.rtg_coverage, 0.0);
  EXPECT_EQ(c.visits, 50);
  EXPECT_EQ(c.bins, 4);
  EXPECT_GE(c.q_coverage, 0.0);
  EXPECT_LE(c.q_coverage, 1.0);
}

TEST(Coverage, RandomCriticInRange) {
  const Dataset ds = testing::tiny_dataset(1, 30, 15);
  const Agent agent = make_agent(testing::tiny_config(), ds.grid, true, false);
  const CoverageResult c = coverage_study(ds, *agent.critic, 3);
  EXPECT_GE(c.q_coverage, 0.0);
  EXPECT_LE(c.q_coverage, 1.0);
  EXPECT_GE(c.rtg_coverage, 0.0);
  EXPECT_LE(c.rtg_coverage, 1.0);
  EXPECT_EQ(c.visits, 30 * 15);
}

TEST(Adaptation, IdenticalDataGivesIdenticalStatistics) {
  AdaptationConfig cfg;
  cfg.width = cfg.height = 4;
  cfg.n_traj = 20;
  cfg.traj_len = 20;
  cfg.eval_batches = 2;
  cfg.eval_batch_size = 8;
  cfg.train.steps = 5;
  cfg.train.batch_size = 4;
  cfg.train.context = 4;
  cfg.train.d_model = 8;
  const Dataset ds = adaptation_dataset(cfg, true, 0);
  const DeltaStats a = adaptation_arm(cfg, ds), b = adaptation_arm(cfg, ds);
  EXPECT_EQ(a.mean_delta, b.mean_delta);
  EXPECT_EQ(a.effective_memory, b.effective_memory);
  EXPECT_GT(a.mean_delta, 0.0);
  EXPECT_GT(a.tokens, 0);
}

}  // namespace
}  // namespace stitchgrid
