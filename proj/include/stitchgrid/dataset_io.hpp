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

#ifndef STITCHGRID_DATASET_IO_HPP_
#define STITCHGRID_DATASET_IO_HPP_

// Newline-delimited JSON datasets. Line 1 is a header with the grid,
// generator and HER settings (and the tabular behavior policy when there is
// one); each following line is one step
//   {"traj_id": i, "t": t, "cell": c, "obs": [x, y], "action": a}
// with "action": null on the final step of a trajectory.

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "stitchgrid/env.hpp"
#include "stitchgrid/error.hpp"

namespace stitchgrid {

using json = nlohmann::json;

inline json grid_to_json(const GridSpec& g) {
  json walls = json::array();
  for (int c = 0; c < g.cell_count(); ++c)
    if (g.is_wall(c)) walls.push_back(c);
  return {{"width", g.width}, {"height", g.height}, {"noise_half_width", g.noise_half_width},
          {"walls", walls}};
}

inline GridSpec grid_from_json(const json& j) {
  GridSpec g = GridSpec::open(j.at("width").get<int>(), j.at("height").get<int>(),
                              j.at("noise_half_width").get<double>());
  for (int c : j.at("walls")) {
    if (!g.in_range(c)) throw InvalidInput("wall cell out of range");
    g.walls[static_cast<size_t>(c)] = true;
  }
  g.validate();
  return g;
}

inline json dataset_header(const Dataset& ds) {
  const auto& gen = ds.generator;
  json h;
  h["type"] = "header";
  h["format"] = "stitchgrid-dataset";
  h["version"] = 1;
  h["grid"] = grid_to_json(ds.grid);
  h["generator"] = {{"policy", behavior_name(gen.policy.kind)},
                    {"noise_scale", gen.policy.noise_scale},
                    {"rho", gen.policy.rho},
                    {"expert_gain", gen.policy.expert_gain},
                    {"n_traj", gen.n_traj},
                    {"traj_len", gen.traj_len},
                    {"seed", gen.seed},
                    {"max_travel", gen.max_travel ? json(*gen.max_travel) : json(nullptr)}};
  h["her"] = {{"p_trajgoal", ds.her.p_trajgoal},
              {"p_randomgoal", ds.her.p_randomgoal},
              {"future", ds.her.future == FutureSampling::kGeometric ? "geometric" : "uniform"},
              {"gamma", ds.her.gamma}};
  if (ds.behavior) {
    json rows = json::array();
    for (Eigen::Index s = 0; s < ds.behavior->probs.rows(); ++s) {
      json row = json::array();
      for (Eigen::Index a = 0; a < ds.behavior->probs.cols(); ++a) row.push_back(ds.behavior->probs(s, a));
      rows.push_back(row);
    }
    h["behavior_policy"] = rows;
  } else {
    h["behavior_policy"] = nullptr;
  }
  return h;
}

inline void write_dataset(const Dataset& ds, std::ostream& os) {
  os << dataset_header(ds).dump() << "\n";
  for (size_t i = 0; i < ds.trajectories.size(); ++i) {
    const Trajectory& tr = ds.trajectories[i];
    for (int t = 0; t <= tr.length(); ++t) {
      json r;
      r["traj_id"] = i;
      r["t"] = t;
      r["cell"] = tr.cells[static_cast<size_t>(t)];
      r["obs"] = {tr.observations[static_cast<size_t>(t)].x, tr.observations[static_cast<size_t>(t)].y};
      r["action"] = t < tr.length() ? json(tr.actions[static_cast<size_t>(t)]) : json(nullptr);
      os << r.dump() << "\n";
    }
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write dataset '" + path + "'");
  write_dataset(ds, os);
  if (!os) throw IoError("failed writing dataset '" + path + "'");
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("dataset is empty");
  Dataset ds;
  try {
    const json h = json::parse(line);
    if (h.value("type", "") != "header") throw InvalidInput("dataset header record missing");
    ds.grid = grid_from_json(h.at("grid"));
    const json& g = h.at("generator");
    ds.generator.policy.kind = behavior_from_name(g.at("policy").get<std::string>());
    ds.generator.policy.noise_scale = g.at("noise_scale").get<double>();
    ds.generator.policy.rho = g.at("rho").get<double>();
    ds.generator.policy.expert_gain = g.at("expert_gain").get<double>();
    ds.generator.n_traj = g.at("n_traj").get<int>();
    ds.generator.traj_len = g.at("traj_len").get<int>();
    ds.generator.seed = g.at("seed").get<std::uint64_t>();
    if (!g.at("max_travel").is_null()) ds.generator.max_travel = g.at("max_travel").get<int>();
    const json& her = h.at("her");
    ds.her.p_trajgoal = her.at("p_trajgoal").get<double>();
    ds.her.p_randomgoal = her.at("p_randomgoal").get<double>();
    ds.her.future = her.at("future").get<std::string>() == "uniform" ? FutureSampling::kUniform
                                                                     : FutureSampling::kGeometric;
    ds.her.gamma = her.at("gamma").get<double>();
    if (!h.at("behavior_policy").is_null()) {
      const json& rows = h.at("behavior_policy");
      TabularPolicy pi;
      pi.probs.resize(static_cast<Eigen::Index>(rows.size()), kActionCount);
      for (size_t s = 0; s < rows.size(); ++s)
        for (int a = 0; a < kActionCount; ++a) pi.probs(static_cast<Eigen::Index>(s), a) = rows[s].at(static_cast<size_t>(a)).get<double>();
      if (pi.probs.rows() != ds.grid.cell_count()) throw InvalidInput("behavior policy shape mismatch");
      ds.behavior = std::move(pi);
    }
    long expected_traj = 0;
    int expected_t = 0;
    Trajectory cur;
    bool open = false;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json r = json::parse(line);
      const long id = r.at("traj_id").get<long>();
      const int t = r.at("t").get<int>();
      if (!open) {
        if (id != expected_traj || t != 0) throw InvalidInput("dataset records out of order");
        cur = Trajectory{};
        open = true;
        expected_t = 0;
      }
      if (id != expected_traj || t != expected_t) throw InvalidInput("dataset records out of order");
      const int cell = r.at("cell").get<int>();
      if (!ds.grid.in_range(cell) || ds.grid.is_wall(cell)) throw InvalidInput("dataset cell invalid");
      cur.cells.push_back(cell);
      cur.observations.push_back({r.at("obs").at(0).get<double>(), r.at("obs").at(1).get<double>()});
      if (r.at("action").is_null()) {
        ds.trajectories.push_back(std::move(cur));
        open = false;
        ++expected_traj;
      } else {
        const int a = r.at("action").get<int>();
        if (a < 0 || a >= kActionCount) throw InvalidInput("dataset action out of range");
        cur.actions.push_back(a);
        ++expected_t;
      }
    }
    if (open) throw InvalidInput("dataset ends inside a trajectory");
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed dataset: ") + e.what());
  }
  for (const auto& tr : ds.trajectories)
    for (int t = 0; t < tr.length(); ++t)
      if (step(ds.grid, tr.cells[static_cast<size_t>(t)], tr.actions[static_cast<size_t>(t)]) !=
          tr.cells[static_cast<size_t>(t + 1)])
        throw InvalidInput("dataset transition inconsistent with the grid");
  return ds;
}

// Missing files are a configuration problem from the caller's point of view.
inline Dataset load_dataset(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("dataset not found: '" + path + "'");
  std::ifstream is(path);
  if (!is) throw IoError("cannot read dataset '" + path + "'");
  return read_dataset(is);
}

}  // namespace stitchgrid

#endif  // STITCHGRID_DATASET_IO_HPP_
