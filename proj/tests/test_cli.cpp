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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "cli_checks.hpp"
#include "stitchgrid/lab.hpp"
#include "train_checks.hpp"

namespace fs = std::filesystem;

namespace stitchgrid {
namespace {

using testing::fresh_dir;
using testing::run_cli;
using testing::slurp;

// Writes a tiny dataset and a config pointing at it; returns the config path.
std::string write_tiny_run(const fs::path& dir, long steps = 10) {
  const std::string data = (dir / "data.ndjson").string();
  save_dataset(testing::tiny_dataset(0), data);
  TrainConfig c = testing::tiny_config(0);
  c.steps = steps;
  c.log_every = 5;
  c.dataset = data;
  const std::string cfg = (dir / "run.cfg").string();
  std::ofstream(cfg) << to_text(c);
  return cfg;
}

TEST(Cli, HelpExitsZero) {
  const auto dir = fresh_dir("cli_help");
  const auto r = run_cli("--help", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("gen-data"), std::string::npos);
  for (const char* sub : {"gen-data", "oracle", "train", "eval", "expectile-lab", "diag", "ablate"})
    EXPECT_EQ(run_cli(std::string(sub) + " --help", dir).code, 0) << sub;
}

TEST(Cli, NoSubcommandIsConfigError) {
  const auto r = run_cli("", fresh_dir("cli_nosub"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("\"config\""), std::string::npos);
}

TEST(Cli, MissingDatasetIsConfigError) {
  const auto dir = fresh_dir("cli_missing");
  TrainConfig c = testing::tiny_config(0);
  c.dataset = (dir / "does_not_exist.ndjson").string();
  std::ofstream((dir / "run.cfg").string()) << to_text(c);
  const auto r = run_cli("train --config \"" + (dir / "run.cfg").string() + "\" --out \"" + (dir / "out").string() + "\"", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("\"error\":\"config\""), std::string::npos) << r.err;
}

TEST(Cli, MissingConfigIsConfigError) {
  const auto dir = fresh_dir("cli_nocfg");
  const auto r = run_cli("train --config \"" + (dir / "nope.cfg").string() + "\"", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("\"error\":\"config\""), std::string::npos);
}

TEST(Cli, CorruptCheckpointIsCheckpointError) {
  const auto dir = fresh_dir("cli_badckpt");
  std::ofstream((dir / "bad.bin").string()) << "not a checkpoint";
  std::ofstream((dir / "tasks.json").string()) << R"({"tasks":[{"start":0,"goal":1}]})";
  const auto r = run_cli("eval --checkpoint \"" + (dir / "bad.bin").string() + "\" --tasks \"" +
                             (dir / "tasks.json").string() + "\" --out \"" + (dir / "e").string() + "\"",
                         dir);
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("\"error\":\"checkpoint\""), std::string::npos);
}

TEST(Cli, GenDataAndOracle) {
  const auto dir = fresh_dir("cli_gen");
  const std::string data = (dir / "d.ndjson").string(), orc = (dir / "o.json").string();
  auto r = run_cli("gen-data --grid 3x3 --n-traj 5 --len 8 --seed 4 --out \"" + data + "\"", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const Dataset ds = load_dataset(data);
  EXPECT_EQ(ds.trajectories.size(), 5u);
  EXPECT_EQ(ds.grid.width, 3);
  r = run_cli("oracle --dataset \"" + data + "\" --gamma 0.9 --out \"" + orc + "\"", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(slurp(orc));
  EXPECT_LT(j["residuals"]["occupancy_row_sum"].get<double>(), 1e-9);
  EXPECT_EQ(j["P"].size(), 9u);
}

TEST(Cli, GenDataRejectsBadGrid) {
  const auto dir = fresh_dir("cli_badgrid");
  const auto r = run_cli("gen-data --grid 3by3 --out \"" + (dir / "d").string() + "\"", dir);
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, TrainWritesRunDirectory) {
  const auto dir = fresh_dir("cli_train");
  const std::string cfg = write_tiny_run(dir);
  const auto out = dir / "run";
  const auto r = run_cli("train --config \"" + cfg + "\" --out \"" + out.string() + "\"", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.txt", "manifest.json", "metrics.jsonl", "checkpoint.bin"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const json m = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["inputs_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(parse_config(slurp(out / "config.txt")).steps, 10);
  // Log lines at steps 5 and 10.
  const std::string metrics = slurp(out / "metrics.jsonl");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 2);
}

TEST(Cli, RerunIsByteIdentical) {
  const auto dir = fresh_dir("cli_rerun");
  const std::string cfg = write_tiny_run(dir);
  for (const char* run : {"a", "b"})
    ASSERT_EQ(run_cli("train --config \"" + cfg + "\" --out \"" + (dir / run).string() + "\"", dir).code, 0);
  for (const char* f : {"config.txt", "manifest.json", "metrics.jsonl", "checkpoint.bin"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Cli, ResumeRejectsDifferentConfig) {
  const auto dir = fresh_dir("cli_resume");
  const std::string full = write_tiny_run(dir, 10);
  TrainConfig half = parse_config(slurp(full));
  half.steps = 5;
  std::ofstream((dir / "half.cfg").string()) << to_text(half);
  ASSERT_EQ(run_cli("train --config \"" + (dir / "half.cfg").string() + "\" --out \"" + (dir / "h").string() + "\"", dir).code, 0);
  const auto r = run_cli("train --config \"" + full + "\" --out \"" + (dir / "h").string() + "\" --resume \"" +
                             (dir / "h" / "checkpoint.bin").string() + "\"",
                         dir);
  EXPECT_EQ(r.code, 5);
}

TEST(Cli, EvalWritesSummary) {
  const auto dir = fresh_dir("cli_eval");
  const std::string cfg = write_tiny_run(dir);
  ASSERT_EQ(run_cli("train --config \"" + cfg + "\" --out \"" + (dir / "run").string() + "\"", dir).code, 0);
  std::ofstream((dir / "tasks.json").string())
      << R"({"tasks":[{"start":0,"goal":5,"max_steps":6},{"start":3,"goal":3,"max_steps":2}]})";
  const auto r = run_cli("eval --checkpoint \"" + (dir / "run" / "checkpoint.bin").string() + "\" --tasks \"" +
                             (dir / "tasks.json").string() + "\" --seeds 2 --out \"" + (dir / "e").string() + "\"",
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = json::parse(slurp(dir / "e" / "summary.json"));
  EXPECT_EQ(s["per_seed"].size(), 2u);
  const json per = json::parse(slurp(dir / "e" / "per_task.json"));
  EXPECT_DOUBLE_EQ(per[1]["success_rate"].get<double>(), 1.0);
}

TEST(Cli, EvalRejectsOutOfGridTask) {
  const auto dir = fresh_dir("cli_evalbad");
  const std::string cfg = write_tiny_run(dir, 5);
  ASSERT_EQ(run_cli("train --config \"" + cfg + "\" --out \"" + (dir / "run").string() + "\"", dir).code, 0);
  std::ofstream((dir / "tasks.json").string()) << R"({"tasks":[{"start":0,"goal":99}]})";
  const auto r = run_cli("eval --checkpoint \"" + (dir / "run" / "checkpoint.bin").string() + "\" --tasks \"" +
                             (dir / "tasks.json").string() + "\" --out \"" + (dir / "e").string() + "\"",
                         dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("invalid-input"), std::string::npos) << r.err;
}

TEST(Cli, AblateThreeByTwoMakesSixRuns) {
  const auto dir = fresh_dir("cli_ablate");
  const std::string cfg = write_tiny_run(dir, 5);
  const auto root = dir / "abl";
  const auto r = run_cli("ablate --config \"" + cfg + "\" --out \"" + root.string() +
                             "\" --backbone attention,mamba,hybrid --conditioning q,none",
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::set<std::string> children, hashes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    children.insert(e.path().filename().string());
    for (const char* f : {"config.txt", "manifest.json", "metrics.jsonl", "checkpoint.bin"})
      EXPECT_TRUE(fs::exists(e.path() / f)) << e.path() << " " << f;
    hashes.insert(config_hash(parse_config(slurp(e.path() / "config.txt"))));
  }
  EXPECT_EQ(children.size(), 6u);
  EXPECT_EQ(hashes.size(), 6u);
  EXPECT_TRUE(fs::exists(root / "ablation.csv"));
  EXPECT_TRUE(fs::exists(root / "manifest.json"));
}

TEST(Cli, AblateDryRunWritesConfigsOnly) {
  const auto dir = fresh_dir("cli_ablate_dry");
  const std::string cfg = write_tiny_run(dir, 5);
  const auto root = dir / "abl";
  const auto r = run_cli("ablate --config \"" + cfg + "\" --out \"" + root.string() +
                             "\" --loss expectile,quantile,mse --tokenization concat,separate --dry-run",
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  int n = 0;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) {
      ++n;
      EXPECT_FALSE(fs::exists(e.path() / "checkpoint.bin"));
    }
  EXPECT_EQ(n, 6);
}

TEST(Cli, AblateRejectsUnknownAxisValue) {
  const auto dir = fresh_dir("cli_ablate_bad");
  const std::string cfg = write_tiny_run(dir, 5);
  const auto r = run_cli("ablate --config \"" + cfg + "\" --out \"" + (dir / "a").string() + "\" --backbone lstm --dry-run", dir);
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, DiagNeedsExactlyOneMode) {
  const auto dir = fresh_dir("cli_diag");
  const auto r = run_cli("diag --flow-kl --adaptation --out \"" + dir.string() + "\"", dir);
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, DiagCoverageAndDeltaStats) {
  const auto dir = fresh_dir("cli_diag_cov");
  const std::string cfg = write_tiny_run(dir, 5);
  ASSERT_EQ(run_cli("train --config \"" + cfg + "\" --out \"" + (dir / "run").string() + "\"", dir).code, 0);
  const std::string common = " --checkpoint \"" + (dir / "run" / "checkpoint.bin").string() + "\" --dataset \"" +
                             (dir / "data.ndjson").string() + "\"";
  auto r = run_cli("diag --coverage" + common + " --out \"" + (dir / "cov").string() + "\"", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json c = json::parse(slurp(dir / "cov" / "summary.json"));
  EXPECT_GE(c["q_coverage"].get<double>(), 0.0);
  EXPECT_LE(c["q_coverage"].get<double>(), 1.0);
  r = run_cli("diag --delta-stats --batches 2 --batch-size 4" + common + " --out \"" + (dir / "ds").string() + "\"", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json d = json::parse(slurp(dir / "ds" / "summary.json"));
  EXPECT_GT(d["mean_delta"].get<double>(), 0.0);
}

}  // namespace
}  // namespace stitchgrid
