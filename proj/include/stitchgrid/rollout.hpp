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

#ifndef STITCHGRID_ROLLOUT_HPP_
#define STITCHGRID_ROLLOUT_HPP_

// Two-stage inference: the Q estimate is read at the newest sg token with the
// current Q slot masked, written back (normalized) into that slot, and the
// action is read at the Q position.

#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "stitchgrid/trainer.hpp"

namespace stitchgrid {

struct BufferEntry {
  Vec2 obs;
  Vec2 goal;
  double q = 0.0;
  bool q_present = false;
  int action = -1;
};

// The last K timesteps of context, oldest evicted first.
class RolloutBuffer {
 public:
  explicit RolloutBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw InvalidInput("buffer capacity must be >= 1");
  }

  void push(const BufferEntry& e) {
    entries_.push_back(e);
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  }

  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  BufferEntry& back() { return entries_.back(); }
  const BufferEntry& at(int i) const { return entries_[static_cast<size_t>(i)]; }
  void clear() { entries_.clear(); }

  // Right-aligned in a K-step window; missing history is left padding.
  SequenceBatch to_batch() const {
    if (entries_.empty()) throw InvalidInput("buffer is empty");
    SequenceBatch b;
    b.resize(1, capacity_, 2, 2);
    const int pad = capacity_ - size();
    b.pad[0] = pad;
    for (int i = 0; i < size(); ++i) {
      const int r = pad + i;
      const BufferEntry& e = at(i);
      b.obs(r, 0) = e.obs.x;
      b.obs(r, 1) = e.obs.y;
      b.goals(r, 0) = e.goal.x;
      b.goals(r, 1) = e.goal.y;
      b.q(r, 0) = e.q;
      b.q_present[static_cast<size_t>(r)] = e.q_present ? 1 : 0;
      b.actions[static_cast<size_t>(r)] = e.action;
    }
    return b;
  }

 private:
  int capacity_;
  std::deque<BufferEntry> entries_;
};

struct ActOptions {
  double temperature = 0.0;  // 0 = greedy argmax
  // Replaces the stage-1 estimate before it is written back (probe hook).
  std::optional<double> q_override;
};

struct ActResult {
  int action = 0;
  double qhat = 0.0;   // raw stage-1 estimate
  double qtoken = 0.0;  // value placed in the Q slot
  Eigen::RowVectorXd logits;
};

inline ActResult act(const Agent& agent, RolloutBuffer& buffer, Vec2 obs, Vec2 goal,
                     const ActOptions& opt = {}, Rng* rng = nullptr) {
  require_policy(agent);
  const HybridSequenceModel& model = *agent.policy;
  buffer.push({obs, goal, 0.0, false, -1});
  const int last = buffer.capacity() - 1;
  ActResult res;
  SequenceBatch b = buffer.to_batch();
  ModelOutput s1 = model.forward(b);
  res.qhat = opt.q_override ? *opt.q_override : s1.qhat.value()(last, 0);
  if (agent.config.conditioning == Conditioning::kQ) {
    res.qtoken = agent.normalizer.apply(res.qhat);
  } else {
    res.qtoken = 1.0;  // sparse-reward return target
  }
  buffer.back().q = res.qtoken;
  buffer.back().q_present = true;
  b = buffer.to_batch();
  ModelOutput s2 = model.forward(b);
  res.logits = s2.logits.value().row(last);
  if (opt.temperature > 0.0) {
    if (!rng) throw InvalidInput("sampling requires an rng");
    Eigen::RowVectorXd z = res.logits / opt.temperature;
    z = (z.array() - z.maxCoeff()).exp();
    std::discrete_distribution<int> d(z.data(), z.data() + z.size());
    res.action = d(*rng);
  } else {
    Eigen::Index best = 0;
    res.logits.maxCoeff(&best);
    res.action = static_cast<int>(best);
  }
  buffer.back().action = res.action;
  return res;
}

struct EvalTask {
  int start = 0;
  int goal = 0;
  int max_steps = 50;
};

struct RolloutResult {
  std::vector<int> cells;
  std::vector<int> actions;
  std::vector<double> qhats;
  bool success = false;
  int steps = 0;
};

inline void validate_task(const GridSpec& grid, const EvalTask& t) {
  if (!grid.in_range(t.start) || !grid.in_range(t.goal) || grid.is_wall(t.start) || grid.is_wall(t.goal))
    throw InvalidInput("task start and goal must be free cells");
  if (t.max_steps < 0) throw InvalidInput("max_steps must be >= 0");
}

// Observation noise comes from `rng`; the goal is given as its cell center.
inline RolloutResult rollout(const Agent& agent, const EvalTask& task, Rng& rng,
                             const ActOptions& opt = {}) {
  const GridSpec& grid = agent.grid;
  validate_task(grid, task);
  RolloutResult res;
  int cell = task.start;
  res.cells.push_back(cell);
  if (cell == task.goal) {
    res.success = true;
    return res;
  }
  RolloutBuffer buffer(agent.config.context);
  const Vec2 goal = grid.center(task.goal);
  for (int t = 0; t < task.max_steps; ++t) {
    const Vec2 obs = observe(grid, cell, rng);
    ActResult a = act(agent, buffer, obs, goal, opt, &rng);
    cell = step(grid, cell, a.action);
    res.actions.push_back(a.action);
    res.qhats.push_back(a.qhat);
    res.cells.push_back(cell);
    res.steps = t + 1;
    if (cell == task.goal) {
      res.success = true;
      break;
    }
  }
  return res;
}

struct EvalSummary {
  double mean = 0.0;  // success rate over tasks x seeds
  double std = 0.0;   // across seeds of the per-seed rate
  std::vector<double> per_seed;
  std::vector<std::vector<RolloutResult>> results;  // [seed][task]
};

inline EvalSummary summarize(std::vector<std::vector<RolloutResult>> results) {
  EvalSummary s;
  s.results = std::move(results);
  for (const auto& row : s.results) {
    double ok = 0.0;
    for (const auto& r : row) ok += r.success ? 1.0 : 0.0;
    s.per_seed.push_back(row.empty() ? 0.0 : ok / static_cast<double>(row.size()));
  }
  if (s.per_seed.empty()) return s;
  for (double v : s.per_seed) s.mean += v;
  s.mean /= static_cast<double>(s.per_seed.size());
  for (double v : s.per_seed) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(s.per_seed.size()));
  return s;
}

// Seed s, task i rolls out with stream (s, i) so outcomes do not depend on
// task order.
inline EvalSummary evaluate(const Agent& agent, const std::vector<EvalTask>& tasks,
                            const std::vector<std::uint64_t>& seeds, const ActOptions& opt = {}) {
  std::vector<std::vector<RolloutResult>> all;
  for (std::uint64_t s : seeds) {
    std::vector<RolloutResult> row;
    for (size_t i = 0; i < tasks.size(); ++i) {
      Rng rng = derive_rng(s, fnv1a64(std::to_string(tasks[i].start) + ":" + std::to_string(tasks[i].goal)));
      row.push_back(rollout(agent, tasks[i], rng, opt));
    }
    all.push_back(std::move(row));
  }
  return summarize(std::move(all));
}

// Uniform-random action baseline under the same protocol.
inline EvalSummary evaluate_random(const GridSpec& grid, const std::vector<EvalTask>& tasks,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<std::vector<RolloutResult>> all;
  for (std::uint64_t s : seeds) {
    std::vector<RolloutResult> row;
    for (size_t i = 0; i < tasks.size(); ++i) {
      validate_task(grid, tasks[i]);
      Rng rng = derive_rng(s, 0xA11 + i);
      std::uniform_int_distribution<int> pick(0, kActionCount - 1);
      RolloutResult r;
      int cell = tasks[i].start;
      r.cells.push_back(cell);
      r.success = cell == tasks[i].goal;
      for (int t = 0; t < tasks[i].max_steps && !r.success; ++t) {
        const int a = pick(rng);
        cell = step(grid, cell, a);
        r.actions.push_back(a);
        r.cells.push_back(cell);
        r.steps = t + 1;
        r.success = cell == tasks[i].goal;
      }
      row.push_back(std::move(r));
    }
    all.push_back(std::move(row));
  }
  return summarize(std::move(all));
}

// Random start/goal pairs at BFS distance >= min_distance.
inline std::vector<EvalTask> sample_tasks(const GridSpec& grid, int count, int min_distance,
                                          int max_steps, Rng& rng) {
  const std::vector<int> free = grid.free_cells();
  std::vector<EvalTask> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 100000) throw InvalidInput("cannot find tasks at the requested distance");
    const int s = detail::uniform_free_cell(free, rng);
    const int g = detail::uniform_free_cell(free, rng);
    const int d = bfs_distances(grid, g)[static_cast<size_t>(s)];
    if (d >= min_distance) out.push_back({s, g, max_steps});
  }
  return out;
}

}  // namespace stitchgrid

#endif  // STITCHGRID_ROLLOUT_HPP_
