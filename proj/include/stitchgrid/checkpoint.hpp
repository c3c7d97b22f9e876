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

#ifndef STITCHGRID_CHECKPOINT_HPP_
#define STITCHGRID_CHECKPOINT_HPP_

// Binary checkpoint layout (little-endian host order):
//   magic "SGCKPT01", u32 version, str config, grid, u8 has_critic,
//   u8 has_policy, normalizer, i64 step, u32 n_tensors, tensors...,
//   u8 has_optimizer, [i64 adam_t, moments per tensor], str rng_state.
// str = u64 length + bytes; tensor = str name, i64 rows, i64 cols, doubles.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "stitchgrid/trainer.hpp"

namespace stitchgrid {

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename T>
  void pod(const T& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void matrix(const Matrix& m) {
    pod<std::int64_t>(m.rows());
    pod<std::int64_t>(m.cols());
    os_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  template <typename T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw CheckpointError("checkpoint truncated");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 30)) throw CheckpointError("checkpoint corrupt: string length");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) throw CheckpointError("checkpoint truncated");
    return s;
  }
  Matrix matrix() {
    const auto r = pod<std::int64_t>(), c = pod<std::int64_t>();
    if (r < 0 || c < 0 || r * c > (1LL << 28)) throw CheckpointError("checkpoint corrupt: tensor shape");
    Matrix m(r, c);
    is_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is_) throw CheckpointError("checkpoint truncated");
    return m;
  }

 private:
  std::istream& is_;
};

}  // namespace detail

struct Checkpoint {
  Agent agent;
  long step = 0;
  bool has_optimizer = false;
  long adam_steps = 0;
  std::vector<Matrix> first_moments;
  std::vector<Matrix> second_moments;
  std::string rng_state;
};

inline void save_checkpoint(const std::string& path, const Agent& agent, long step,
                            const AdamW* opt = nullptr, const Rng* rng = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  detail::Writer w(os);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod(kCheckpointVersion);
  w.str(to_text(agent.config));
  w.pod<std::int32_t>(agent.grid.width);
  w.pod<std::int32_t>(agent.grid.height);
  w.pod(agent.grid.noise_half_width);
  for (bool b : agent.grid.walls) w.pod<std::uint8_t>(b ? 1 : 0);
  w.pod<std::uint8_t>(agent.critic ? 1 : 0);
  w.pod<std::uint8_t>(agent.policy ? 1 : 0);
  w.pod(agent.normalizer.momentum);
  w.pod(agent.normalizer.delta);
  w.pod(agent.normalizer.mean_abs);
  w.pod<std::uint8_t>(agent.normalizer.initialized ? 1 : 0);
  w.pod<std::int64_t>(step);
  const ParamList params = agent.parameters();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.matrix(p.var.value());
  }
  w.pod<std::uint8_t>(opt ? 1 : 0);
  if (opt) {
    w.pod<std::int64_t>(opt->steps_taken());
    for (size_t i = 0; i < params.size(); ++i) {
      w.matrix(opt->first_moments()[i]);
      w.matrix(opt->second_moments()[i]);
    }
  }
  std::string rs;
  if (rng) {
    std::ostringstream ss;
    ss << *rng;
    rs = ss.str();
  }
  w.str(rs);
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint '" + path + "'");
  detail::Reader r(is);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointError("not a checkpoint file: '" + path + "'");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
  TrainConfig cfg = parse_config(r.str());
  GridSpec grid;
  grid.width = r.pod<std::int32_t>();
  grid.height = r.pod<std::int32_t>();
  grid.noise_half_width = r.pod<double>();
  if (grid.width <= 0 || grid.height <= 0 || grid.width * grid.height > (1 << 24))
    throw CheckpointError("checkpoint corrupt: grid");
  grid.walls.resize(static_cast<size_t>(grid.cell_count()));
  for (size_t i = 0; i < grid.walls.size(); ++i) grid.walls[i] = r.pod<std::uint8_t>() != 0;
  const bool has_critic = r.pod<std::uint8_t>() != 0;
  const bool has_policy = r.pod<std::uint8_t>() != 0;
  Checkpoint ck;
  ck.agent = make_agent(cfg, grid, has_critic, has_policy);
  ck.agent.normalizer.momentum = r.pod<double>();
  ck.agent.normalizer.delta = r.pod<double>();
  ck.agent.normalizer.mean_abs = r.pod<double>();
  ck.agent.normalizer.initialized = r.pod<std::uint8_t>() != 0;
  ck.step = r.pod<std::int64_t>();
  ParamList params = ck.agent.parameters();
  std::map<std::string, Var> by_name;
  for (auto& p : params) by_name[p.name] = p.var;
  const auto n = r.pod<std::uint32_t>();
  if (n != params.size()) throw CheckpointError("checkpoint tensor count does not match its config");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    Matrix m = r.matrix();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    Var v = it->second;
    if (v.rows() != m.rows() || v.cols() != m.cols())
      throw CheckpointError("shape mismatch for tensor '" + name + "'");
    v.mutable_value() = std::move(m);
  }
  ck.has_optimizer = r.pod<std::uint8_t>() != 0;
  if (ck.has_optimizer) {
    ck.adam_steps = r.pod<std::int64_t>();
    for (size_t i = 0; i < params.size(); ++i) {
      ck.first_moments.push_back(r.matrix());
      ck.second_moments.push_back(r.matrix());
    }
  }
  ck.rng_state = r.str();
  return ck;
}

// Restores optimizer moments and the data RNG into a trainer built from the
// checkpoint's agent.
inline void restore_trainer_state(Trainer& tr, const Checkpoint& ck) {
  tr.set_step_count(ck.step);
  if (ck.has_optimizer) {
    tr.optimizer().set_steps_taken(ck.adam_steps);
    tr.optimizer().first_moments() = ck.first_moments;
    tr.optimizer().second_moments() = ck.second_moments;
  }
  if (!ck.rng_state.empty()) {
    std::istringstream ss(ck.rng_state);
    ss >> tr.rng();
  }
}

}  // namespace stitchgrid

#endif  // STITCHGRID_CHECKPOINT_HPP_
