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

// stitchgrid command line. Failures print one JSON line
//   {"error": "<class>", "message": "..."}
// on stderr and exit with the class's code (config/invalid-input 2, io 3,
// numeric 4, checkpoint 5, anything else 1).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stitchgrid/checkpoint.hpp"
#include "stitchgrid/lab.hpp"

namespace fs = std::filesystem;
using namespace stitchgrid;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << text;
  if (!os) throw IoError("failed writing '" + path + "'");
}

// Git-style blob digest: FNV-1a over "blob <size>\0<content>".
std::string content_hash(const std::string& content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob += content;
  return hex64(fnv1a64(blob));
}

std::string out_dir(const std::string& given, const std::string& command) {
  if (!given.empty()) return given;
  const char* root = std::getenv("STITCHGRID_OUT");
  return (fs::path(root ? root : "runs") / command).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

// Resolved settings, the input digest and the list of produced files.
void write_manifest(const std::string& dir, const std::string& command, const json& settings,
                    const std::string& inputs, const std::vector<std::string>& files) {
  json m;
  m["command"] = command;
  m["settings"] = settings;
  m["inputs_hash"] = content_hash(inputs);
  m["files"] = files;
  write_json((fs::path(dir) / "manifest.json").string(), m);
}

std::pair<int, int> parse_grid(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw ConfigError("--grid must look like WxH");
  try {
    const int w = std::stoi(s.substr(0, x)), h = std::stoi(s.substr(x + 1));
    if (w < 1 || h < 1) throw ConfigError("--grid dimensions must be >= 1");
    return {w, h};
  } catch (const std::logic_error&) {
    throw ConfigError("--grid must look like WxH");
  }
}

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

json stats_json(const DeltaStats& s) {
  json j = {{"mean_delta", s.mean_delta}, {"std_delta", s.std_delta}, {"mean_abar", s.mean_abar},
            {"effective_memory", s.effective_memory}, {"tokens", s.tokens}};
  j["mean_alpha"] = std::isfinite(s.mean_alpha) ? json(s.mean_alpha) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string grid = "5x5";
  std::string policy = "dirichlet";
  int n_traj = 100;
  int len = 100;
  std::uint64_t seed = 0;
  int max_travel = 0;
  double noise_scale = 1.0;
  double rho = 0.9;
  double her_gamma = 0.99;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  const auto [w, h] = parse_grid(a.grid);
  GeneratorConfig gen;
  gen.policy.kind = behavior_from_name(a.policy);
  gen.policy.noise_scale = a.noise_scale;
  gen.policy.rho = gen.policy.kind == BehaviorKind::kExpertCorrelatedNoise ? a.rho : 0.0;
  gen.n_traj = a.n_traj;
  gen.traj_len = a.len;
  gen.seed = a.seed;
  if (a.max_travel > 0) gen.max_travel = a.max_travel;
  HerConfig her;
  her.gamma = a.her_gamma;
  const Dataset ds = generate_dataset(GridSpec::open(w, h), gen, her);
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  save_dataset(ds, a.out);
  json info = {{"dataset", a.out}, {"trajectories", ds.trajectories.size()},
               {"transitions", ds.transition_count()}, {"content_hash", content_hash(read_file(a.out))}};
  std::cout << info.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int run_oracle(const std::string& dataset, double gamma, const std::string& out) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("--gamma must lie in [0, 1)");
  const Dataset ds = load_dataset(dataset);
  const bool tabular = ds.behavior.has_value();
  const TabularPolicy pi = tabular ? *ds.behavior : empirical_policy(ds);
  const OccupancyTensors occ = occupancy(ds.grid, pi, gamma);
  const MaxQTable mq = empirical_max_q(ds, gamma);
  const Matrix series = truncated_series_oracle(occ.T, occ.T0, gamma, 500);
  const int S = ds.grid.cell_count();

  auto tensor = [&](const Matrix& m) {
    json t = json::array();
    for (int s = 0; s < S; ++s) {
      json row = json::array();
      for (int a = 0; a < kActionCount; ++a) {
        const auto r = m.row(s * kActionCount + a);
        row.push_back(std::vector<double>(r.data(), r.data() + r.size()));
      }
      t.push_back(row);
    }
    return t;
  };
  json counts = json::array();
  for (int s = 0; s < S; ++s) {
    const auto r = mq.counts.row(s);
    counts.push_back(std::vector<double>(r.data(), r.data() + r.size()));
  }
  const Eigen::VectorXd tsum = occ.T.rowwise().sum();
  const Eigen::VectorXd psum = occ.P.rowwise().sum();
  json j;
  j["gamma"] = gamma;
  j["policy_source"] = tabular ? "behavior" : "empirical";
  j["P"] = tensor(occ.P);
  j["max_q"] = {{"qstar", tensor(mq.qstar)}, {"qmin", tensor(mq.qmin)}, {"counts", counts},
                {"mean_truncation_bias", mq.mean_truncation_bias}};
  j["residuals"] = {{"transition_row_sum", (tsum.array() - 1.0).abs().maxCoeff()},
                    {"occupancy_row_sum", (psum.array() - 1.0).abs().maxCoeff()},
                    {"occupancy_min", occ.P.minCoeff()},
                    {"series_k500_max_abs", (occ.P - series).cwiseAbs().maxCoeff()},
                    {"qmin_le_qstar", (mq.qstar - mq.qmin).minCoeff() >= 0.0}};
  const fs::path p(out);
  if (p.has_parent_path()) ensure_dir(p.parent_path().string());
  std::ofstream os(out);
  if (!os) throw IoError("cannot write '" + out + "'");
  os << j.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

// Trains one run into `dir`: config.txt, manifest.json, metrics.jsonl and
// checkpoint.bin.
void train_into(const TrainConfig& cfg, const std::string& dir, const std::string& resume = "") {
  const Dataset ds = load_dataset(cfg.dataset);
  ensure_dir(dir);
  Trainer tr = Trainer::create(cfg, ds);
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    if (to_text(ck.agent.config) != to_text(cfg))
      throw CheckpointError("checkpoint config differs from the requested config");
    tr = Trainer(std::move(ck.agent), ds);
    restore_trainer_state(tr, ck);
  }
  const std::string hash = config_hash(cfg);
  std::ofstream metrics((fs::path(dir) / "metrics.jsonl").string(), resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot write metrics in '" + dir + "'");
  while (tr.step_count() < cfg.steps) {
    const StepMetrics m = tr.step();
    if ((m.step + 1) % cfg.log_every == 0 || m.step + 1 == cfg.steps) {
      MetricsRecord r;
      r.step = m.step + 1;
      r.seed = cfg.seed;
      r.config_hash = hash;
      r.set("lr", m.lr);
      r.set("loss_total", m.total);
      r.set("grad_norm", m.grad_norm);
      if (std::isfinite(m.nf)) r.set("loss_nf", m.nf);
      if (std::isfinite(m.bc)) r.set("loss_bc", m.bc);
      if (std::isfinite(m.q)) r.set("loss_q", m.q);
      if (std::isfinite(m.q_scale)) r.set("q_scale", m.q_scale);
      metrics << r.to_json().dump() << "\n";
    }
  }
  const std::string ckpt = (fs::path(dir) / "checkpoint.bin").string();
  save_checkpoint(ckpt, tr.agent(), tr.step_count(), &tr.optimizer(), &tr.rng());
  write_file((fs::path(dir) / "config.txt").string(), to_text(cfg));
  write_manifest(dir, "train", {{"config_hash", hash}, {"steps", cfg.steps}, {"seed", cfg.seed}},
                 to_text(cfg) + read_file(cfg.dataset), {"config.txt", "metrics.jsonl", "checkpoint.bin"});
}

TrainConfig load_train_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config not found: '" + path + "'");
  return load_config(path);
}

// ---------------------------------------------------------------------------

std::vector<EvalTask> load_tasks(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("tasks file not found: '" + path + "'");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed tasks file: ") + e.what());
  }
  const json& list = j.is_object() ? j.at("tasks") : j;
  std::vector<EvalTask> tasks;
  for (const auto& t : list) {
    EvalTask e;
    e.start = t.at("start").get<int>();
    e.goal = t.at("goal").get<int>();
    e.max_steps = t.value("max_steps", 50);
    tasks.push_back(e);
  }
  if (tasks.empty()) throw ConfigError("tasks file has no tasks");
  return tasks;
}

// per_task.json and summary.csv for one evaluation.
void write_eval(const std::string& dir, const std::vector<EvalTask>& tasks, const EvalSummary& s) {
  json per = json::array();
  std::ostringstream csv;
  csv << "task,start,goal,success_rate,mean_steps\n";
  for (size_t i = 0; i < tasks.size(); ++i) {
    json seeds = json::array();
    double ok = 0.0, steps = 0.0;
    for (const auto& row : s.results) {
      const RolloutResult& r = row[i];
      seeds.push_back({{"success", r.success}, {"steps", r.steps}, {"cells", r.cells}});
      ok += r.success ? 1.0 : 0.0;
      steps += r.steps;
    }
    const double n = static_cast<double>(s.results.size());
    per.push_back({{"task", i}, {"start", tasks[i].start}, {"goal", tasks[i].goal},
                   {"max_steps", tasks[i].max_steps}, {"success_rate", ok / n}, {"rollouts", seeds}});
    csv << i << "," << tasks[i].start << "," << tasks[i].goal << "," << fmt(ok / n) << "," << fmt(steps / n) << "\n";
  }
  csv << "all,,," << fmt(s.mean) << ",\n";
  write_json((fs::path(dir) / "per_task.json").string(), per);
  write_file((fs::path(dir) / "summary.csv").string(), csv.str());
  json summary = {{"success_mean", s.mean}, {"success_std", s.std}, {"per_seed", s.per_seed}};
  write_json((fs::path(dir) / "summary.json").string(), summary);
}

int run_eval(const std::string& checkpoint, const std::string& tasks_path, int seeds,
             double temperature, const std::string& out) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: '" + checkpoint + "'");
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  const Checkpoint ck = load_checkpoint(checkpoint);
  require_policy(ck.agent);
  const std::vector<EvalTask> tasks = load_tasks(tasks_path);
  for (const auto& t : tasks) validate_task(ck.agent.grid, t);
  std::vector<std::uint64_t> seed_list;
  for (int i = 0; i < seeds; ++i) seed_list.push_back(static_cast<std::uint64_t>(i));
  ActOptions opt;
  opt.temperature = temperature;
  const EvalSummary s = evaluate(ck.agent, tasks, seed_list, opt);
  ensure_dir(out);
  write_eval(out, tasks, s);
  write_file((fs::path(out) / "config.txt").string(), to_text(ck.agent.config));
  write_manifest(out, "eval", {{"seeds", seeds}, {"temperature", temperature}, {"checkpoint_step", ck.step}},
                 read_file(checkpoint) + read_file(tasks_path),
                 {"config.txt", "per_task.json", "summary.csv", "summary.json"});
  std::cout << json({{"success_mean", s.mean}, {"success_std", s.std}}).dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int run_expectile_lab(const std::string& taus_arg, const ExpectileLabConfig& cfg, const std::string& out) {
  std::vector<double> taus;
  for (const auto& t : split(taus_arg)) {
    try {
      taus.push_back(std::stod(t));
    } catch (const std::logic_error&) {
      throw ConfigError("bad tau '" + t + "'");
    }
  }
  if (taus.empty()) throw ConfigError("--taus is empty");
  for (double t : taus)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("every tau must lie in (0, 1)");
  const ExpectileLabResult r = expectile_lab(taus, cfg);
  ensure_dir(out);
  std::ostringstream csv;
  csv << "tau,r2,mae,final_loss\n";
  json rows = json::array();
  for (const auto& row : r.rows) {
    csv << fmt(row.tau) << "," << fmt(row.r2) << "," << fmt(row.mae) << "," << fmt(row.final_loss) << "\n";
    rows.push_back({{"tau", row.tau}, {"r2", row.r2}, {"mae", row.mae}, {"final_loss", row.final_loss}});
  }
  write_file((fs::path(out) / "expectile.csv").string(), csv.str());
  const json settings = {{"grid", std::to_string(cfg.width) + "x" + std::to_string(cfg.height)},
                         {"n_traj", cfg.n_traj}, {"traj_len", cfg.traj_len}, {"gamma", cfg.gamma},
                         {"hidden", cfg.hidden}, {"steps", cfg.steps}, {"lr", cfg.lr}, {"seed", cfg.seed},
                         {"taus", taus}};
  write_json((fs::path(out) / "config.json").string(), settings);
  write_json((fs::path(out) / "summary.json").string(),
             {{"rows", rows}, {"samples", r.samples}, {"evaluated_pairs", r.evaluated}});
  write_manifest(out, "expectile-lab", settings, settings.dump(), {"config.json", "expectile.csv", "summary.json"});
  std::cout << json(rows).dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct DiagArgs {
  bool flow_kl = false, adaptation = false, coverage = false, delta_stats = false;
  std::string out;
  std::string checkpoint;
  std::string dataset;
  std::uint64_t seed = 0;
  long steps = -1;
  int batches = 50;
  int batch_size = 256;
};

json train_settings(const TrainConfig& c) {
  json j;
  std::istringstream in(to_text(c));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    std::string v = line.substr(eq + 3);
    if (v.size() >= 2 && v.front() == '"') v = v.substr(1, v.size() - 2);
    j[line.substr(0, eq)] = v;
  }
  return j;
}

int run_diag(const DiagArgs& a) {
  const int chosen = a.flow_kl + a.adaptation + a.coverage + a.delta_stats;
  if (chosen != 1) throw ConfigError("diag needs exactly one of --flow-kl, --adaptation, --coverage, --delta-stats");
  ensure_dir(a.out);
  if (a.flow_kl) {
    FlowKlConfig cfg;
    cfg.train.seed = a.seed;
    if (a.steps >= 0) cfg.train.steps = a.steps;
    const FlowKlResult r = flow_kl_curve(cfg);
    std::ostringstream csv;
    csv << "step,forward_kl,uniform_kl\n";
    for (const auto& p : r.curve) csv << p.step << "," << fmt(p.kl) << "," << fmt(r.uniform_kl) << "\n";
    write_file((fs::path(a.out) / "flow_kl.csv").string(), csv.str());
    const json summary = {{"uniform_kl", r.uniform_kl}, {"initial_kl", r.initial_kl}, {"final_kl", r.final_kl},
                          {"final_over_initial", r.final_kl / r.initial_kl}};
    write_json((fs::path(a.out) / "summary.json").string(), summary);
    json settings = train_settings(cfg.train);
    settings["mc_samples"] = cfg.mc_samples;
    settings["gamma"] = cfg.gamma;
    write_manifest(a.out, "diag --flow-kl", settings, settings.dump(), {"flow_kl.csv", "summary.json"});
    std::cout << summary.dump() << "\n";
    return 0;
  }
  if (a.adaptation) {
    AdaptationConfig cfg;
    cfg.train.seed = a.seed;
    if (a.steps >= 0) cfg.train.steps = a.steps;
    cfg.eval_batches = a.batches;
    cfg.eval_batch_size = a.batch_size;
    const AdaptationResult r = adaptation_study(cfg);
    std::ostringstream csv;
    csv << "data,mean_delta,std_delta,mean_abar,effective_memory\n";
    for (const auto& [name, s] : {std::pair{"correlated", r.correlated}, std::pair{"uncorrelated", r.uncorrelated}})
      csv << name << "," << fmt(s.mean_delta) << "," << fmt(s.std_delta) << "," << fmt(s.mean_abar) << ","
          << fmt(s.effective_memory) << "\n";
    write_file((fs::path(a.out) / "adaptation.csv").string(), csv.str());
    const json summary = {{"correlated", stats_json(r.correlated)}, {"uncorrelated", stats_json(r.uncorrelated)}};
    write_json((fs::path(a.out) / "summary.json").string(), summary);
    json settings = train_settings(cfg.train);
    settings["noise_scale"] = cfg.noise_scale;
    settings["rho"] = cfg.rho;
    settings["eval_batches"] = cfg.eval_batches;
    settings["eval_batch_size"] = cfg.eval_batch_size;
    write_manifest(a.out, "diag --adaptation", settings, settings.dump(), {"adaptation.csv", "summary.json"});
    std::cout << summary.dump() << "\n";
    return 0;
  }
  if (a.checkpoint.empty() || a.dataset.empty())
    throw ConfigError("--coverage and --delta-stats need --checkpoint and --dataset");
  if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint not found: '" + a.checkpoint + "'");
  const Dataset ds = load_dataset(a.dataset);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const std::string inputs = read_file(a.checkpoint) + read_file(a.dataset);
  if (a.coverage) {
    require_critic(ck.agent);
    const CoverageResult r = coverage_study(ds, *ck.agent.critic, a.seed, ck.agent.config.delta);
    const json summary = {{"rtg_coverage", r.rtg_coverage}, {"q_coverage", r.q_coverage},
                          {"bins", r.bins}, {"visits", r.visits}};
    write_json((fs::path(a.out) / "summary.json").string(), summary);
    write_file((fs::path(a.out) / "coverage.csv").string(),
               "signal,coverage\nrtg," + fmt(r.rtg_coverage) + "\nq," + fmt(r.q_coverage) + "\n");
    write_manifest(a.out, "diag --coverage", {{"seed", a.seed}}, inputs, {"coverage.csv", "summary.json"});
    std::cout << summary.dump() << "\n";
    return 0;
  }
  require_policy(ck.agent);
  Rng rng = derive_rng(a.seed, 0xD5);
  DeltaAccumulator acc;
  for (int b = 0; b < a.batches; ++b) {
    TrainBatch batch = assemble_batch(ds, a.batch_size, ck.agent.config.context, rng);
    ForwardTrace trace;
    ForwardOptions opt;
    opt.trace = &trace;
    ck.agent.policy->forward(batch.seq, opt);
    acc.add(trace);
  }
  const json summary = stats_json(acc.stats());
  write_json((fs::path(a.out) / "summary.json").string(), summary);
  write_manifest(a.out, "diag --delta-stats", {{"seed", a.seed}, {"batches", a.batches}, {"batch_size", a.batch_size}},
                 inputs, {"summary.json"});
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string config;
  std::string out;
  std::string backbone, conditioning, loss, tokenization;
  std::string tasks;
  int seeds = 3;
  bool dry_run = false;
};

int run_ablate(const AblateArgs& a) {
  const TrainConfig base = load_train_config(a.config);
  auto axis = [](const std::string& arg, const std::string& fallback) {
    std::vector<std::string> v = split(arg);
    return v.empty() ? std::vector<std::string>{fallback} : v;
  };
  const auto backbones = axis(a.backbone, backbone_name(base.backbone));
  const auto conds = axis(a.conditioning, conditioning_name(base.conditioning));
  const auto losses = axis(a.loss, regression_name(base.regression.kind));
  const auto toks = axis(a.tokenization, tokenization_name(base.tokenization));
  std::vector<EvalTask> tasks;
  if (!a.tasks.empty()) tasks = load_tasks(a.tasks);
  ensure_dir(a.out);
  json children = json::array();
  std::ostringstream csv;
  csv << "run,backbone,conditioning,loss,tokenization,config_hash,success_mean\n";
  for (const auto& bb : backbones)
    for (const auto& cd : conds)
      for (const auto& ls : losses)
        for (const auto& tk : toks) {
          TrainConfig c = base;
          set_config_value(c, "backbone", bb);
          set_config_value(c, "conditioning", cd);
          set_config_value(c, "loss", ls);
          set_config_value(c, "tokenization", tk);
          c.validate();
          const std::string name = bb + "-" + cd + "-" + ls + "-" + tk;
          const std::string dir = (fs::path(a.out) / name).string();
          ensure_dir(dir);
          std::string success;
          if (a.dry_run) {
            write_file((fs::path(dir) / "config.txt").string(), to_text(c));
          } else {
            train_into(c, dir);
            if (!tasks.empty()) {
              const Checkpoint ck = load_checkpoint((fs::path(dir) / "checkpoint.bin").string());
              std::vector<std::uint64_t> seeds;
              for (int i = 0; i < a.seeds; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
              const EvalSummary s = evaluate(ck.agent, tasks, seeds);
              const std::string edir = (fs::path(dir) / "eval").string();
              ensure_dir(edir);
              write_eval(edir, tasks, s);
              success = fmt(s.mean);
            }
          }
          csv << name << "," << bb << "," << cd << "," << ls << "," << tk << "," << config_hash(c) << ","
              << success << "\n";
          children.push_back({{"run", name}, {"config_hash", config_hash(c)}});
        }
  write_file((fs::path(a.out) / "ablation.csv").string(), csv.str());
  write_file((fs::path(a.out) / "base_config.txt").string(), to_text(base));
  write_manifest(a.out, "ablate", {{"runs", children}, {"dry_run", a.dry_run}},
                 to_text(base) + (a.tasks.empty() ? "" : read_file(a.tasks)),
                 {"ablation.csv", "base_config.txt"});
  std::cout << json({{"runs", children.size()}}).dump() << "\n";
  return 0;
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << json({{"error", kind}, {"message", message}}).dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stitchgrid: offline goal-conditioned RL on noisy GridWorlds"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a trajectory dataset (NDJSON)");
  gen->add_option("--grid", gd.grid, "Grid size WxH")->capture_default_str();
  gen->add_option("--policy", gd.policy, "Behavior policy")
      ->check(CLI::IsMember({"dirichlet", "markov", "play"}))
      ->capture_default_str();
  gen->add_option("--n-traj", gd.n_traj, "Number of trajectories")->capture_default_str();
  gen->add_option("--len", gd.len, "Steps per trajectory")->capture_default_str();
  gen->add_option("--seed", gd.seed, "Generator seed")->capture_default_str();
  gen->add_option("--max-travel", gd.max_travel, "Bound on each trajectory's bounding-box span (0 = none)");
  gen->add_option("--noise-scale", gd.noise_scale, "Expert policy logit noise")->capture_default_str();
  gen->add_option("--rho", gd.rho, "AR(1) correlation of the play policy noise")->capture_default_str();
  gen->add_option("--her-gamma", gd.her_gamma, "Discount of geometric future goals")->capture_default_str();
  gen->add_option("--out", gd.out, "Output dataset path")->required();

  std::string o_dataset, o_out;
  double o_gamma = 0.9;
  auto* orc = app.add_subcommand("oracle", "Exact occupancy and in-distribution max Q for a dataset");
  orc->add_option("--dataset", o_dataset, "Dataset path")->required();
  orc->add_option("--gamma", o_gamma, "Discount")->capture_default_str();
  orc->add_option("--out", o_out, "Output JSON path")->required();

  std::string t_config, t_out, t_stage, t_resume;
  auto* trn = app.add_subcommand("train", "Train critic and policy from a config file");
  trn->add_option("--config", t_config, "Config file (key = value)")->required();
  trn->add_option("--out", t_out, "Run directory");
  trn->add_option("--stage", t_stage, "Override the training stage")
      ->check(CLI::IsMember({"critic", "joint", "two_phase"}));
  trn->add_option("--resume", t_resume, "Continue from a checkpoint written with the same config");

  std::string e_ckpt, e_tasks, e_out;
  int e_seeds = 5;
  double e_temp = 0.0;
  auto* evl = app.add_subcommand("eval", "Roll out a checkpoint on a task list");
  evl->add_option("--checkpoint", e_ckpt, "Checkpoint path")->required();
  evl->add_option("--tasks", e_tasks, "Tasks JSON")->required();
  evl->add_option("--seeds", e_seeds, "Evaluation seeds")->capture_default_str();
  evl->add_option("--temperature", e_temp, "Sampling temperature (0 = greedy)")->capture_default_str();
  evl->add_option("--out", e_out, "Output directory");

  std::string x_taus = "0.5,0.7,0.8,0.9,0.95,0.99", x_out, x_grid = "5x5";
  ExpectileLabConfig xcfg;
  auto* xlab = app.add_subcommand("expectile-lab", "Expectile sweep against the in-distribution maximum");
  xlab->add_option("--taus", x_taus, "Comma-separated expectiles")->capture_default_str();
  xlab->add_option("--grid", x_grid, "Grid size WxH")->capture_default_str();
  xlab->add_option("--n-traj", xcfg.n_traj, "Trajectories")->capture_default_str();
  xlab->add_option("--len", xcfg.traj_len, "Steps per trajectory")->capture_default_str();
  xlab->add_option("--gamma", xcfg.gamma, "Discount")->capture_default_str();
  xlab->add_option("--steps", xcfg.steps, "Optimizer steps per tau")->capture_default_str();
  xlab->add_option("--lr", xcfg.lr, "Peak learning rate")->capture_default_str();
  xlab->add_option("--seed", xcfg.seed, "Seed")->capture_default_str();
  xlab->add_option("--out", x_out, "Output directory");

  DiagArgs da;
  auto* diag = app.add_subcommand("diag", "Diagnostics: flow KL, adaptation, coverage, scan statistics");
  diag->add_flag("--flow-kl", da.flow_kl, "Flow critic vs analytic occupancy KL curve");
  diag->add_flag("--adaptation", da.adaptation, "Scan step sizes on correlated vs uncorrelated data");
  diag->add_flag("--coverage", da.coverage, "RTG vs Q conditioning-signal coverage");
  diag->add_flag("--delta-stats", da.delta_stats, "Scan statistics of a trained policy");
  diag->add_option("--checkpoint", da.checkpoint, "Checkpoint (coverage, delta-stats)");
  diag->add_option("--dataset", da.dataset, "Dataset (coverage, delta-stats)");
  diag->add_option("--seed", da.seed, "Seed")->capture_default_str();
  diag->add_option("--steps", da.steps, "Override training steps (flow-kl, adaptation)");
  diag->add_option("--batches", da.batches, "Evaluation batches")->capture_default_str();
  diag->add_option("--batch-size", da.batch_size, "Evaluation batch size")->capture_default_str();
  diag->add_option("--out", da.out, "Output directory");

  AblateArgs ab;
  auto* abl = app.add_subcommand("ablate", "Train the cartesian product of ablation axes");
  abl->add_option("--config", ab.config, "Base config")->required();
  abl->add_option("--out", ab.out, "Output root");
  abl->add_option("--backbone", ab.backbone, "attention,mamba,hybrid");
  abl->add_option("--conditioning", ab.conditioning, "q,none");
  abl->add_option("--loss", ab.loss, "expectile,quantile,mse");
  abl->add_option("--tokenization", ab.tokenization, "concat,separate,nogoal");
  abl->add_option("--tasks", ab.tasks, "Tasks JSON; evaluates every child when given");
  abl->add_option("--seeds", ab.seeds, "Evaluation seeds")->capture_default_str();
  abl->add_flag("--dry-run", ab.dry_run, "Write child configs without training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config", e.what(), 2);
  }

  try {
    if (*gen) return run_gen_data(gd);
    if (*orc) return run_oracle(o_dataset, o_gamma, o_out);
    if (*trn) {
      TrainConfig cfg = load_train_config(t_config);
      if (!t_stage.empty()) cfg.stage = stage_from_name(t_stage);
      cfg.validate();
      train_into(cfg, out_dir(t_out, "train"), t_resume);
      return 0;
    }
    if (*evl) return run_eval(e_ckpt, e_tasks, e_seeds, e_temp, out_dir(e_out, "eval"));
    if (*xlab) {
      const auto [w, h] = parse_grid(x_grid);
      xcfg.width = w;
      xcfg.height = h;
      return run_expectile_lab(x_taus, xcfg, out_dir(x_out, "expectile-lab"));
    }
    if (*diag) {
      da.out = out_dir(da.out, "diag");
      return run_diag(da);
    }
    if (*abl) {
      ab.out = out_dir(ab.out, "ablate");
      return run_ablate(ab);
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), e.exit_code());
  } catch (const json::exception& e) {
    return fail("invalid-input", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
