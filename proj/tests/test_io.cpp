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
#include <sstream>

#include "stitchgrid/dataset_io.hpp"
#include "stitchgrid/lab.hpp"

namespace stitchgrid {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("stitchgrid_io_" + name)).string();
}

TEST(Config, TextRoundTripAndHash) {
  TrainConfig c;
  c.lr = 1.0 / 3.0;
  c.backbone = BackboneKind::kMamba;
  c.tokenization = Tokenization::kSeparate;
  c.conditioning = Conditioning::kNone;
  c.regression = {RegressionKind::kQuantile, 0.7};
  c.stop_grad = StopGrad::kCurrent;
  c.stage = Stage::kTwoPhase;
  c.dataset = "data/x.jsonl";
  c.seed = 42;
  const TrainConfig d = parse_config(to_text(c));
  EXPECT_EQ(to_text(c), to_text(d));
  EXPECT_EQ(d.lr, c.lr);
  EXPECT_EQ(config_hash(c), config_hash(d));
  d.validate();
  TrainConfig e = d;
  e.seed = 43;
  EXPECT_NE(config_hash(e), config_hash(d));
}

TEST(Config, ParsesCommentsSectionsAndQuotes) {
  const TrainConfig c = parse_config(
      "# run\n[train]\nsteps = 10   # short\nbackbone = \"attention\"\ncosine = false\n\n dataset=d.jsonl\n");
  EXPECT_EQ(c.steps, 10);
  EXPECT_EQ(c.backbone, BackboneKind::kAttention);
  EXPECT_FALSE(c.cosine);
  EXPECT_EQ(c.dataset, "d.jsonl");
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("nonsense = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("steps = ten\n"), ConfigError);
  EXPECT_THROW(parse_config("steps 10\n"), ConfigError);
  EXPECT_THROW(parse_config("heads = 3\n"), ConfigError);  // d_model 128
  EXPECT_THROW(parse_config("tau = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("context = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("cosine = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("stage = warm\n"), ConfigError);
  EXPECT_THROW(load_config(temp_path("nope.toml")), ConfigError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  GeneratorConfig gen;
  gen.n_traj = 5;
  gen.traj_len = 7;
  gen.seed = 3;
  GridSpec g = GridSpec::open(4, 3);
  g.walls[5] = true;
  const Dataset ds = generate_dataset(g, gen);
  const std::string path = temp_path("ds.jsonl");
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  ASSERT_EQ(back.trajectories.size(), ds.trajectories.size());
  for (size_t i = 0; i < ds.trajectories.size(); ++i) {
    EXPECT_EQ(back.trajectories[i].cells, ds.trajectories[i].cells);
    EXPECT_EQ(back.trajectories[i].actions, ds.trajectories[i].actions);
    for (size_t t = 0; t < ds.trajectories[i].observations.size(); ++t) {
      EXPECT_EQ(back.trajectories[i].observations[t].x, ds.trajectories[i].observations[t].x);
      EXPECT_EQ(back.trajectories[i].observations[t].y, ds.trajectories[i].observations[t].y);
    }
  }
  EXPECT_EQ(back.grid.walls, ds.grid.walls);
  ASSERT_TRUE(back.behavior.has_value());
  EXPECT_EQ(back.behavior->probs, ds.behavior->probs);
  EXPECT_EQ(back.generator.seed, 3u);
  // writing twice is byte-identical
  std::ostringstream a, b;
  write_dataset(ds, a);
  write_dataset(back, b);
  EXPECT_EQ(a.str(), b.str());
  std::remove(path.c_str());
}

TEST(Dataset, Errors) {
  EXPECT_THROW(load_dataset(temp_path("missing.jsonl")), ConfigError);
  std::istringstream empty("");
  EXPECT_THROW(read_dataset(empty), InvalidInput);
  std::istringstream junk("{not json\n");
  EXPECT_THROW(read_dataset(junk), InvalidInput);

  GeneratorConfig gen;
  gen.n_traj = 1;
  gen.traj_len = 3;
  const Dataset ds = generate_dataset(GridSpec::open(3, 3), gen);
  std::ostringstream os;
  write_dataset(ds, os);
  std::string text = os.str();
  // truncate inside the trajectory
  std::istringstream cut(text.substr(0, text.rfind('\n', text.size() - 2) + 1));
  EXPECT_THROW(read_dataset(cut), InvalidInput);
  // corrupt an action so the transition no longer matches
  const auto pos = text.find("\"action\":");
  ASSERT_NE(pos, std::string::npos);
  std::string bad = text;
  const Trajectory& tr = ds.trajectories[0];
  int wrong = 0;
  while (step(ds.grid, tr.cells[0], wrong) == tr.cells[1]) ++wrong;
  bad[pos + 9] = static_cast<char>('0' + wrong);
  std::istringstream bs(bad);
  EXPECT_THROW(read_dataset(bs), InvalidInput);
}

TEST(Errors, KindsAndExitCodes) {
  EXPECT_STREQ(InvalidInput("x").kind(), "invalid-input");
  EXPECT_STREQ(ConfigError("x").kind(), "config");
  EXPECT_STREQ(IoError("x").kind(), "io");
  EXPECT_STREQ(NumericError("x").kind(), "numeric");
  EXPECT_STREQ(CheckpointError("x").kind(), "checkpoint");
  EXPECT_EQ(ConfigError("x").exit_code(), 2);
  EXPECT_EQ(IoError("x").exit_code(), 3);
  EXPECT_EQ(NumericError("x").exit_code(), 4);
  EXPECT_EQ(CheckpointError("x").exit_code(), 5);
}

TEST(Metrics, RecordsAreFiniteAndStable) {
  MetricsRecord r;
  r.step = 3;
  r.config_hash = "abc";
  r.set("loss", 0.5);
  EXPECT_THROW(r.set("bad", std::nan("")), NumericError);
  EXPECT_THROW(r.set("inf", INFINITY), NumericError);
  const std::string path = temp_path("m.jsonl");
  write_metrics(path, {r, r});
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "{\"config_hash\":\"abc\",\"metrics\":{\"loss\":0.5},\"seed\":0,\"step\":3}");
  std::remove(path.c_str());
  EXPECT_EQ(fmt(0.1), "0.1");
  EXPECT_EQ(fmt(1.0 / 3.0), "0.3333333333");
}

}  // namespace
}  // namespace stitchgrid
