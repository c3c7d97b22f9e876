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

#ifndef STITCHGRID_ENV_HPP_
#define STITCHGRID_ENV_HPP_

// Noisy-observation GridWorld, behavior policies and offline dataset
// generation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "stitchgrid/error.hpp"
#include "stitchgrid/nn.hpp"

namespace stitchgrid {

inline constexpr int kActionCount = 4;

enum class Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

inline constexpr std::array<std::array<int, 2>, kActionCount> kActionOffsets = {
    {{0, 1}, {0, -1}, {-1, 0}, {1, 0}}};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for the i-th unit of work under a master seed.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(seed ^ splitmix64(stream + 0x5851f42d4c957f2dULL)));
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct GridSpec {
  int width = 5;
  int height = 5;
  std::vector<bool> walls;  // row-major, index = y * width + x
  double noise_half_width = 0.5;
  int action_count = kActionCount;

  static GridSpec open(int w, int h, double noise = 0.5) {
    if (w <= 0 || h <= 0) throw InvalidInput("grid dimensions must be positive");
    GridSpec g;
    g.width = w;
    g.height = h;
    g.walls.assign(static_cast<size_t>(w) * h, false);
    g.noise_half_width = noise;
    return g;
  }

  int cell_count() const { return width * height; }
  int cell_of(int x, int y) const { return y * width + x; }
  int x_of(int cell) const { return cell % width; }
  int y_of(int cell) const { return cell / width; }
  bool in_range(int cell) const { return cell >= 0 && cell < cell_count(); }
  bool is_wall(int cell) const { return walls[static_cast<size_t>(cell)]; }
  Vec2 center(int cell) const {
    return {static_cast<double>(x_of(cell)), static_cast<double>(y_of(cell))};
  }

  void set_wall(int x, int y) { walls[static_cast<size_t>(cell_of(x, y))] = true; }

  std::vector<int> free_cells() const {
    std::vector<int> out;
    for (int c = 0; c < cell_count(); ++c)
      if (!is_wall(c)) out.push_back(c);
    return out;
  }

  void validate() const {
    if (width <= 0 || height <= 0) throw InvalidInput("grid dimensions must be positive");
    if (static_cast<int>(walls.size()) != cell_count())
      throw InvalidInput("wall mask size does not match grid");
    if (noise_half_width < 0.0 || noise_half_width > 0.5)
      throw InvalidInput("noise_half_width must lie in [0, 0.5]");
    if (action_count != kActionCount) throw InvalidInput("action_count must be 4");
    if (free_cells().empty()) throw InvalidInput("grid has no free cells");
  }
};

// Deterministic transition; moves into walls or off the grid are no-ops.
inline int step(const GridSpec& grid, int cell, int action) {
  if (!grid.in_range(cell) || grid.is_wall(cell))
    throw InvalidInput("step: cell is a wall or out of range");
  if (action < 0 || action >= kActionCount) throw InvalidInput("step: bad action");
  const int nx = grid.x_of(cell) + kActionOffsets[static_cast<size_t>(action)][0];
  const int ny = grid.y_of(cell) + kActionOffsets[static_cast<size_t>(action)][1];
  if (nx < 0 || ny < 0 || nx >= grid.width || ny >= grid.height) return cell;
  const int next = grid.cell_of(nx, ny);
  return grid.is_wall(next) ? cell : next;
}

// Center of the cell plus independent Unif[-h, h) noise per coordinate.
inline Vec2 observe(const GridSpec& grid, int cell, Rng& rng) {
  if (!grid.in_range(cell) || grid.is_wall(cell))
    throw InvalidInput("observe: cell is a wall or out of range");
  Vec2 c = grid.center(cell);
  const double h = grid.noise_half_width;
  if (h > 0.0) {
    std::uniform_real_distribution<double> u(-h, h);
    c.x += u(rng);
    c.y += u(rng);
  }
  return c;
}

// Nearest-cell decoding; half-open supports make rounding unambiguous.
inline int decode_cell(const GridSpec& grid, Vec2 obs) {
  const int x = std::clamp(static_cast<int>(std::floor(obs.x + 0.5)), 0, grid.width - 1);
  const int y = std::clamp(static_cast<int>(std::floor(obs.y + 0.5)), 0, grid.height - 1);
  return grid.cell_of(x, y);
}

inline int manhattan(const GridSpec& grid, int a, int b) {
  return std::abs(grid.x_of(a) - grid.x_of(b)) + std::abs(grid.y_of(a) - grid.y_of(b));
}

// Shortest-path step counts to `target` (-1 where unreachable).
inline std::vector<int> bfs_distances(const GridSpec& grid, int target) {
  std::vector<int> dist(static_cast<size_t>(grid.cell_count()), -1);
  std::queue<int> q;
  dist[static_cast<size_t>(target)] = 0;
  q.push(target);
  while (!q.empty()) {
    const int c = q.front();
    q.pop();
    for (int a = 0; a < kActionCount; ++a) {
      // Moves are symmetric on a grid, so predecessors are neighbours.
      const int n = step(grid, c, a);
      if (dist[static_cast<size_t>(n)] < 0) {
        dist[static_cast<size_t>(n)] = dist[static_cast<size_t>(c)] + 1;
        q.push(n);
      }
    }
  }
  return dist;
}

struct TabularPolicy {
  Matrix probs;  // cells x actions

  void validate() const {
    for (Eigen::Index s = 0; s < probs.rows(); ++s) {
      if (std::abs(probs.row(s).sum() - 1.0) > 1e-12 || probs.row(s).minCoeff() < 0.0)
        throw InvalidInput("tabular policy rows must be probability vectors");
    }
  }
};

inline TabularPolicy sample_dirichlet_policy(const GridSpec& grid, Rng& rng,
                                             double concentration = 1.0) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  TabularPolicy pi;
  pi.probs.resize(grid.cell_count(), kActionCount);
  for (int s = 0; s < grid.cell_count(); ++s) {
    double total = 0.0;
    for (int a = 0; a < kActionCount; ++a) {
      pi.probs(s, a) = gamma(rng);
      total += pi.probs(s, a);
    }
    pi.probs.row(s) /= total;
  }
  return pi;
}

inline TabularPolicy uniform_policy(const GridSpec& grid) {
  TabularPolicy pi;
  pi.probs = Matrix::Constant(grid.cell_count(), kActionCount, 1.0 / kActionCount);
  return pi;
}

enum class BehaviorKind { kTabularDirichlet, kExpertMarkovNoise, kExpertCorrelatedNoise };

struct BehaviorPolicyKind {
  BehaviorKind kind = BehaviorKind::kTabularDirichlet;
  double noise_scale = 1.0;
  double rho = 0.9;
  double expert_gain = 2.0;  // logit margin of a distance-reducing move

  static BehaviorPolicyKind tabular_dirichlet() { return {}; }
  static BehaviorPolicyKind markov(double noise_scale) {
    return {BehaviorKind::kExpertMarkovNoise, noise_scale, 0.0, 2.0};
  }
  static BehaviorPolicyKind correlated(double noise_scale, double rho) {
    return {BehaviorKind::kExpertCorrelatedNoise, noise_scale, rho, 2.0};
  }

  void validate() const {
    if (noise_scale < 0.0) throw InvalidInput("noise_scale must be >= 0");
    if (rho < 0.0 || rho >= 1.0) throw InvalidInput("rho must lie in [0, 1)");
  }
};

inline std::string behavior_name(BehaviorKind k) {
  switch (k) {
    case BehaviorKind::kTabularDirichlet: return "dirichlet";
    case BehaviorKind::kExpertMarkovNoise: return "markov";
    case BehaviorKind::kExpertCorrelatedNoise: return "play";
  }
  return "dirichlet";
}

inline BehaviorKind behavior_from_name(const std::string& s) {
  if (s == "dirichlet") return BehaviorKind::kTabularDirichlet;
  if (s == "markov") return BehaviorKind::kExpertMarkovNoise;
  if (s == "play") return BehaviorKind::kExpertCorrelatedNoise;
  throw ConfigError("unknown policy kind '" + s + "'");
}

// Stationary AR(1) latent: u' = rho u + sqrt(1 - rho^2) eta, eta ~ N(0, s^2).
class Ar1Process {
 public:
  Ar1Process(int dim, double noise_scale, double rho, Rng& rng)
      : rho_(rho), innovation_(std::sqrt(1.0 - rho * rho)),
        dist_(0.0, noise_scale), state_(static_cast<size_t>(dim)) {
    for (auto& u : state_) u = dist_(rng);
  }

  const std::vector<double>& value() const { return state_; }

  void advance(Rng& rng) {
    for (auto& u : state_) u = rho_ * u + innovation_ * dist_(rng);
  }

 private:
  double rho_;
  double innovation_;
  std::normal_distribution<double> dist_;
  std::vector<double> state_;
};

struct Trajectory {
  std::vector<int> cells;          // length + 1 entries
  std::vector<Vec2> observations;  // length + 1 entries
  std::vector<int> actions;        // length entries

  int length() const { return static_cast<int>(actions.size()); }
};

enum class FutureSampling { kGeometric, kUniform };

struct HerConfig {
  double p_trajgoal = 0.8;
  double p_randomgoal = 0.2;
  FutureSampling future = FutureSampling::kGeometric;
  double gamma = 0.99;

  void validate() const {
    if (p_trajgoal < 0.0 || p_randomgoal < 0.0 ||
        std::abs(p_trajgoal + p_randomgoal - 1.0) > 1e-9)
      throw ConfigError("HER probabilities must be nonnegative and sum to 1");
    if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("HER gamma must lie in (0, 1)");
  }
};

struct GeneratorConfig {
  BehaviorPolicyKind policy;
  int n_traj = 100;
  int traj_len = 100;
  std::uint64_t seed = 0;
  std::optional<int> max_travel;
};

struct Dataset {
  GridSpec grid;
  GeneratorConfig generator;
  HerConfig her;
  std::optional<TabularPolicy> behavior;  // present for tabular behavior
  std::vector<Trajectory> trajectories;

  std::optional<int> max_travel() const { return generator.max_travel; }
  long transition_count() const {
    long n = 0;
    for (const auto& t : trajectories) n += t.length();
    return n;
  }
};

// Maximum pairwise Manhattan distance over the visited cells.
inline int manhattan_span(const GridSpec& grid, const std::vector<int>& cells) {
  int lo_s = std::numeric_limits<int>::max(), hi_s = std::numeric_limits<int>::min();
  int lo_d = lo_s, hi_d = hi_s;
  for (int c : cells) {
    const int s = grid.x_of(c) + grid.y_of(c);
    const int d = grid.x_of(c) - grid.y_of(c);
    lo_s = std::min(lo_s, s);
    hi_s = std::max(hi_s, s);
    lo_d = std::min(lo_d, d);
    hi_d = std::max(hi_d, d);
  }
  if (cells.empty()) return 0;
  return std::max(hi_s - lo_s, hi_d - lo_d);
}

namespace detail {

struct SpanTracker {
  int lo_s = std::numeric_limits<int>::max(), hi_s = std::numeric_limits<int>::min();
  int lo_d = std::numeric_limits<int>::max(), hi_d = std::numeric_limits<int>::min();

  void add(const GridSpec& g, int c) {
    const int s = g.x_of(c) + g.y_of(c), d = g.x_of(c) - g.y_of(c);
    lo_s = std::min(lo_s, s);
    hi_s = std::max(hi_s, s);
    lo_d = std::min(lo_d, d);
    hi_d = std::max(hi_d, d);
  }
  bool admits(const GridSpec& g, int c, int bound) const {
    const int s = g.x_of(c) + g.y_of(c), d = g.x_of(c) - g.y_of(c);
    return std::max(hi_s, s) - std::min(lo_s, s) <= bound &&
           std::max(hi_d, d) - std::min(lo_d, d) <= bound;
  }
};

inline int sample_categorical(const double* probs, int n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += probs[i];
    if (r < acc) return i;
  }
  for (int i = n - 1; i >= 0; --i)
    if (probs[i] > 0.0) return i;
  return n - 1;
}

inline int uniform_free_cell(const std::vector<int>& free, Rng& rng) {
  std::uniform_int_distribution<size_t> pick(0, free.size() - 1);
  return free[pick(rng)];
}

}  // namespace detail

// Generates one trajectory. `latent_log`, when given, receives the first
// component of the behavior's logit perturbation at every step.
inline Trajectory generate_trajectory(const GridSpec& grid, const BehaviorPolicyKind& kind,
                                      const TabularPolicy* tabular, int traj_len,
                                      std::optional<int> max_travel, Rng& rng,
                                      std::vector<double>* latent_log = nullptr) {
  const std::vector<int> free = grid.free_cells();
  Trajectory traj;
  int cell = detail::uniform_free_cell(free, rng);
  traj.cells.push_back(cell);
  traj.observations.push_back(observe(grid, cell, rng));
  detail::SpanTracker span;
  span.add(grid, cell);

  const bool expert = kind.kind != BehaviorKind::kTabularDirichlet;
  std::optional<Ar1Process> latent;
  int waypoint = -1;
  std::vector<int> dist;
  if (expert) {
    latent.emplace(kActionCount, kind.noise_scale,
                   kind.kind == BehaviorKind::kExpertCorrelatedNoise ? kind.rho : 0.0, rng);
  }

  for (int t = 0; t < traj_len; ++t) {
    std::array<bool, kActionCount> allowed{};
    std::array<int, kActionCount> next{};
    for (int a = 0; a < kActionCount; ++a) {
      next[static_cast<size_t>(a)] = step(grid, cell, a);
      allowed[static_cast<size_t>(a)] =
          !max_travel || span.admits(grid, next[static_cast<size_t>(a)], *max_travel);
    }
    int action = 0;
    if (!expert) {
      std::array<double, kActionCount> p{};
      double total = 0.0;
      for (int a = 0; a < kActionCount; ++a) {
        p[static_cast<size_t>(a)] = allowed[static_cast<size_t>(a)] ? tabular->probs(cell, a) : 0.0;
        total += p[static_cast<size_t>(a)];
      }
      if (total <= 0.0) {
        for (int a = 0; a < kActionCount; ++a)
          p[static_cast<size_t>(a)] = allowed[static_cast<size_t>(a)] ? 1.0 : 0.0;
        total = std::count(allowed.begin(), allowed.end(), true);
      }
      for (auto& v : p) v /= total;
      action = detail::sample_categorical(p.data(), kActionCount, rng);
    } else {
      if (waypoint < 0 || waypoint == cell) {
        do {
          waypoint = detail::uniform_free_cell(free, rng);
        } while (waypoint == cell && free.size() > 1);
        dist = bfs_distances(grid, waypoint);
      }
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < kActionCount; ++a) {
        if (!allowed[static_cast<size_t>(a)]) continue;
        const int here = dist[static_cast<size_t>(cell)];
        const int there = dist[static_cast<size_t>(next[static_cast<size_t>(a)])];
        const double logit = kind.expert_gain * static_cast<double>(here - there) +
                             latent->value()[static_cast<size_t>(a)];
        if (logit > best) {
          best = logit;
          action = a;
        }
      }
      if (latent_log) latent_log->push_back(latent->value()[0]);
      latent->advance(rng);
    }
    cell = next[static_cast<size_t>(action)];
    span.add(grid, cell);
    traj.actions.push_back(action);
    traj.cells.push_back(cell);
    traj.observations.push_back(observe(grid, cell, rng));
  }
  return traj;
}

inline Dataset generate_dataset(const GridSpec& grid, const GeneratorConfig& gen,
                                const HerConfig& her = {}) {
  grid.validate();
  gen.policy.validate();
  her.validate();
  if (gen.n_traj < 1 || gen.traj_len < 1)
    throw ConfigError("n_traj and traj_len must be >= 1");
  if (gen.max_travel && *gen.max_travel < 1)
    throw ConfigError("max_travel must be >= 1; no trajectory can move otherwise");

  Dataset ds;
  ds.grid = grid;
  ds.generator = gen;
  ds.her = her;
  Rng master = derive_rng(gen.seed, 0xB0B);
  if (gen.policy.kind == BehaviorKind::kTabularDirichlet)
    ds.behavior = sample_dirichlet_policy(grid, master);
  const TabularPolicy* tab = ds.behavior ? &*ds.behavior : nullptr;
  ds.trajectories.reserve(static_cast<size_t>(gen.n_traj));
  for (int i = 0; i < gen.n_traj; ++i) {
    Rng rng = derive_rng(gen.seed, static_cast<std::uint64_t>(i) + 1);
    ds.trajectories.push_back(
        generate_trajectory(grid, gen.policy, tab, gen.traj_len, gen.max_travel, rng));
  }
  return ds;
}

struct GoalSample {
  int cell = 0;
  int index = -1;  // position in the source trajectory, -1 for random goals
};

// Hindsight relabeling: a future cell of the same trajectory with
// probability p_trajgoal, otherwise a uniform free cell.
inline GoalSample her_sample(const Dataset& ds, int traj_index, int t, Rng& rng) {
  const Trajectory& traj = ds.trajectories.at(static_cast<size_t>(traj_index));
  if (t < 0 || t > traj.length()) throw InvalidInput("her_sample: t out of range");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < ds.her.p_trajgoal) {
    const int horizon = traj.length() - t;
    if (horizon <= 0) return {traj.cells.back(), traj.length()};
    int offset = 1;
    if (ds.her.future == FutureSampling::kUniform) {
      std::uniform_int_distribution<int> pick(1, horizon);
      offset = pick(rng);
    } else {
      // Inverse CDF of Geom(1 - gamma) on {1, ..., horizon}.
      const double g = ds.her.gamma;
      const double mass = 1.0 - std::pow(g, horizon);
      const double r = u(rng) * mass;
      offset = static_cast<int>(std::ceil(std::log1p(-r) / std::log(g)));
      offset = std::clamp(offset, 1, horizon);
    }
    return {traj.cells[static_cast<size_t>(t + offset)], t + offset};
  }
  return {detail::uniform_free_cell(ds.grid.free_cells(), rng), -1};
}

}  // namespace stitchgrid

#endif  // STITCHGRID_ENV_HPP_
