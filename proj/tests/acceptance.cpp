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

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
// fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <string>

#include "bound_checks.hpp"
#include "cli_checks.hpp"
#include "flow_checks.hpp"
#include "scan_checks.hpp"
#include "stitchgrid/lab.hpp"
#include "train_checks.hpp"

namespace fs = std::filesystem;
using namespace stitchgrid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

Outcome oracle_exactness() {
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    GridSpec g = GridSpec::open(5, 5);
    std::bernoulli_distribution wall(0.15);
    for (int c = 1; c < g.cell_count(); ++c) g.walls[static_cast<size_t>(c)] = wall(rng);
    const auto m = build_transition_matrices(g, sample_dirichlet_policy(g, rng));
    const Matrix P = analytic_future_distribution(m.T, m.T0, 0.9);
    worst = std::max(worst, (P - truncated_series_oracle(m.T, m.T0, 0.9, 500)).cwiseAbs().maxCoeff());
  }
  Matrix T = Matrix::Zero(2, 2), T0 = Matrix::Zero(2 * kActionCount, 2);
  T(0, 1) = T(1, 0) = 1.0;
  for (int a = 0; a < kActionCount; ++a) {
    T0(a, 1) = 1.0;
    T0(kActionCount + a, 0) = 1.0;
  }
  const Matrix pp = analytic_future_distribution(T, T0, 0.9);
  double pp_err = 0.0;
  for (int a = 0; a < kActionCount; ++a) pp_err = std::max(pp_err, std::abs(pp(a, 1) - 1.0 / 1.9));
  const double g0 = (analytic_future_distribution(T, T0, 0.0) - T0).cwiseAbs().maxCoeff();
  return {worst < 1e-6 && pp_err < 1e-9 && g0 == 0.0,
          "series_max_abs=" + num(worst) + " ping_pong_err=" + num(pp_err) + " gamma0_err=" + num(g0)};
}

Outcome flow_correctness() {
  Rng rng(7);
  double rt = 0.0, jac = 0.0, mass_err = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const ConditionalFlow f = testing::random_flow(100 + s);
    rt = std::max(rt, testing::roundtrip_max_error(f, 250, rng));
    jac = std::max(jac, testing::logdet_jacobian_error(f, 25, rng));
    mass_err = std::max(mass_err, std::abs(testing::quadrature_mass(f, rng) - 1.0));
  }
  return {rt < 1e-6 && jac < 1e-4 && mass_err < 1e-2,
          "roundtrip=" + num(rt) + " logdet_rel=" + num(jac) + " mass_err=" + num(mass_err)};
}

Outcome scan_equivalence() {
  const double e = testing::scan_max_error(100, 11, 48);
  return {e < 1e-5, "max_abs=" + num(e) + " instances=100"};
}

Outcome gradient_fidelity() {
  const GradCheckResult r = testing::full_model_gradcheck(0, 1000);
  return {r.max_rel_error < 1e-3,
          "max_rel=" + num(r.max_rel_error) + " worst=" + r.worst + " checked=" + std::to_string(r.checked)};
}

Outcome expectile_lab_run() {
  const std::vector<double> taus = {0.5, 0.7, 0.8, 0.9, 0.95, 0.99};
  const ExpectileLabResult r = expectile_lab(taus, ExpectileLabConfig{});
  bool monotone = true;
  std::string curve;
  for (size_t i = 0; i < r.rows.size(); ++i) {
    if (i > 0 && r.rows[i].r2 < r.rows[i - 1].r2 - 0.01) monotone = false;
    curve += (i ? "," : "") + num(r.rows[i].r2);
  }
  const auto& top = r.rows.back();
  const auto& bottom = r.rows.front();
  return {monotone && top.r2 >= 0.98 && top.mae <= 0.01 && bottom.r2 <= 0.85,
          "r2=[" + curve + "] mae(0.99)=" + num(top.mae)};
}

Outcome bias_bound() {
  const testing::BoundSweep s = testing::bias_bound_sweep(1000, {0.7, 0.9, 0.95, 0.99}, 5);
  return {s.violations == 0 && s.checked == 4000,
          "checked=" + std::to_string(s.checked) + " violations=" + std::to_string(s.violations) +
              " worst_slack=" + num(s.worst_slack)};
}

Outcome flow_kl() {
  const FlowKlResult r = flow_kl_curve(FlowKlConfig{});
  const double ratio = r.final_kl / r.initial_kl;
  return {ratio <= 0.20 && r.final_kl < r.uniform_kl,
          "initial=" + num(r.initial_kl) + " final=" + num(r.final_kl) + " ratio=" + num(ratio) +
              " uniform=" + num(r.uniform_kl)};
}

// Filled by the stitching run; the coverage criterion reuses its data and
// the seed-0 Q-conditioned critic.
struct StitchShared {
  std::optional<Dataset> data;
  std::optional<Agent> agent;
};
StitchShared g_stitch;

Outcome stitching() {
  const StitchConfig cfg;
  double q = 0.0, noq = 0.0;
  std::string per;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset ds = stitch_dataset(cfg, seed);
    StitchRun a = stitch_run(cfg, ds, Conditioning::kQ, seed);
    const StitchRun b = stitch_run(cfg, ds, Conditioning::kNone, seed);
    q += a.summary.mean / 5.0;
    noq += b.summary.mean / 5.0;
    per += " s" + std::to_string(seed) + "=" + num(a.summary.mean) + "/" + num(b.summary.mean);
    if (seed == 0) {
      g_stitch.data = ds;
      g_stitch.agent = std::move(a.agent);
    }
  }
  return {q - noq >= 0.20, "q=" + num(q) + " noq=" + num(noq) + per};
}

Outcome adaptation() {
  bool ok = true;
  std::string per;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    AdaptationConfig cfg;
    cfg.train.seed = seed;
    cfg.eval_batches = 50;
    cfg.eval_batch_size = 256;
    const AdaptationResult r = adaptation_study(cfg);
    ok = ok && r.correlated.mean_delta < r.uncorrelated.mean_delta &&
         r.correlated.effective_memory > r.uncorrelated.effective_memory;
    per += " s" + std::to_string(seed) + ":delta=" + num(r.correlated.mean_delta) + "/" +
           num(r.uncorrelated.mean_delta) + ",mem=" + num(r.correlated.effective_memory) + "/" +
           num(r.uncorrelated.effective_memory);
  }
  return {ok, "correlated/uncorrelated" + per};
}

Outcome coverage() {
  const StitchConfig cfg;
  if (!g_stitch.data) {
    g_stitch.data = stitch_dataset(cfg, 0);
    g_stitch.agent = stitch_run(cfg, *g_stitch.data, Conditioning::kQ, 0).agent;
  }
  const CoverageResult r = coverage_study(*g_stitch.data, *g_stitch.agent->critic, 0, g_stitch.agent->config.delta);
  return {r.q_coverage > r.rtg_coverage && r.rtg_coverage > 0.0,
          "q=" + num(r.q_coverage) + " rtg=" + num(r.rtg_coverage) + " bins=" + std::to_string(r.bins)};
}

Outcome determinism() {
  const fs::path dir = testing::fresh_dir("acceptance_determinism");
  const std::string data = (dir / "data.ndjson").string();
  save_dataset(testing::tiny_dataset(0, 30, 16), data);
  TrainConfig c = testing::tiny_config(3);
  c.steps = 60;
  c.dataset = data;
  std::ofstream((dir / "run.cfg").string()) << to_text(c);
  std::ofstream((dir / "tasks.json").string())
      << R"({"tasks":[{"start":0,"goal":15,"max_steps":10},{"start":5,"goal":10,"max_steps":10}]})";
  auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  for (const char* run : {"a", "b"}) {
    const fs::path out = dir / run;
    const std::vector<std::string> cmds = {
        "train --config " + q(dir / "run.cfg") + " --out " + q(out / "train"),
        "eval --checkpoint " + q(out / "train" / "checkpoint.bin") + " --tasks " + q(dir / "tasks.json") +
            " --seeds 2 --temperature 1 --out " + q(out / "eval"),
        "expectile-lab --taus 0.5,0.9 --grid 3x3 --n-traj 10 --len 20 --steps 100 --out " + q(out / "lab"),
        "oracle --dataset " + q(data) + " --out " + q(out / "oracle.json")};
    for (const auto& cmd : cmds) {
      const auto r = testing::run_cli(cmd, dir / "io");
      if (r.code != 0) return {false, "command failed: " + cmd + " " + r.err};
    }
  }
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir / "a");
    if (testing::slurp(e.path()) != testing::slurp(dir / "b" / rel)) return {false, "differs: " + rel.string()};
    ++files;
  }
  return {files >= 10, "identical_files=" + std::to_string(files)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"oracle exactness", oracle_exactness},     {"flow correctness", flow_correctness},
      {"scan equivalence", scan_equivalence},     {"gradient fidelity", gradient_fidelity},
      {"expectile lab", expectile_lab_run},       {"expectile bias bound", bias_bound},
      {"flow vs oracle density", flow_kl},        {"stitching", stitching},
      {"content adaptation", adaptation},         {"coverage ordering", coverage},
      {"determinism", determinism}};
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
