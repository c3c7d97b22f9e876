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

#ifndef STITCHGRID_CONFIG_HPP_
#define STITCHGRID_CONFIG_HPP_

// Training configuration and its flat `key = value` text form.
//
//   # comment
//   steps = 20000
//   backbone = "hybrid"
//
// Unknown keys are rejected. `[section]` lines are accepted for grouping and
// do not change key names.

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>

#include "stitchgrid/backbone.hpp"
#include "stitchgrid/error.hpp"
#include "stitchgrid/flow.hpp"
#include "stitchgrid/objectives.hpp"

namespace stitchgrid {

enum class Conditioning { kQ, kNone };
enum class StopGrad { kAll, kCurrent };
enum class Stage { kJoint, kCritic, kTwoPhase };

inline std::string conditioning_name(Conditioning c) { return c == Conditioning::kQ ? "q" : "none"; }
inline Conditioning conditioning_from_name(const std::string& s) {
  if (s == "q") return Conditioning::kQ;
  if (s == "none") return Conditioning::kNone;
  throw ConfigError("unknown conditioning '" + s + "'");
}

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kJoint: return "joint";
    case Stage::kCritic: return "critic";
    case Stage::kTwoPhase: return "two_phase";
  }
  return "joint";
}
inline Stage stage_from_name(const std::string& s) {
  if (s == "joint") return Stage::kJoint;
  if (s == "critic") return Stage::kCritic;
  if (s == "two_phase") return Stage::kTwoPhase;
  throw ConfigError("unknown stage '" + s + "'");
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct TrainConfig {
  std::string dataset;
  long steps = 20000;
  int batch_size = 256;
  int context = 10;
  double lr = 3e-4;
  long warmup_steps = 1000;
  bool cosine = true;
  double grad_clip = 1.0;
  double weight_decay = 0.0;
  Regression regression;
  LossWeights weights;
  double noise_sigma = 0.05;
  double delta = 1e-3;
  double ema_momentum = 0.99;
  // policy backbone
  int d_model = 128;
  int blocks = 3;
  int heads = 4;
  int ssm_state = 16;
  int conv_kernel = 4;
  double dropout = 0.1;
  BackboneKind backbone = BackboneKind::kHybrid;
  Tokenization tokenization = Tokenization::kConcat;
  Conditioning conditioning = Conditioning::kQ;
  StopGrad stop_grad = StopGrad::kAll;
  // flow critic
  int flow_blocks = 6;
  int flow_channels = 256;
  int encoder_hidden = 256;
  int encoder_layers = 2;
  int z_dim = 64;
  double flow_scale_bound = 5.0;
  // schedule
  Stage stage = Stage::kJoint;
  long critic_steps = 0;  // two_phase: critic-only steps before the freeze
  std::uint64_t seed = 0;
  long log_every = 100;

  void validate() const {
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (context < 1) throw ConfigError("context must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    if (delta < 0.0) throw ConfigError("delta must be >= 0");
    if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) throw ConfigError("ema_momentum in [0, 1)");
    if (flow_blocks < 1 || flow_channels < 1 || encoder_hidden < 1 || encoder_layers < 0 || z_dim < 1)
      throw ConfigError("flow dims must be positive");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    if (critic_steps < 0) throw ConfigError("critic_steps must be >= 0");
    weights.validate();
    try {
      regression.validate();
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
    model_config({}).validate();
  }

  ModelConfig model_config(const std::vector<double>& shift, const std::vector<double>& scale = {}) const {
    ModelConfig m;
    m.d_model = d_model;
    m.blocks = blocks;
    m.heads = heads;
    m.ssm_state = ssm_state;
    m.conv_kernel = conv_kernel;
    m.context = context;
    m.dropout = dropout;
    m.backbone = backbone;
    m.tokenization = tokenization;
    m.input_shift = shift;
    m.input_scale = scale;
    return m;
  }

  FlowConfig flow_config(const std::vector<double>& shift, const std::vector<double>& scale) const {
    FlowConfig f;
    f.encoder_hidden.assign(static_cast<size_t>(encoder_layers), encoder_hidden);
    f.z_dim = z_dim;
    f.blocks = flow_blocks;
    f.channels = flow_channels;
    f.scale_bound = flow_scale_bound;
    f.goal_shift = shift;
    f.goal_scale = scale;
    f.obs_shift = shift;
    f.obs_scale = scale;
    return f;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (is.fail() || !is.eof()) throw ConfigError("bad value for '" + key + "': '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + v + "'");
}

// One accessor per key: read a string into the config, or print the value.
struct ConfigField {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = [] {
    std::map<std::string, ConfigField> f;
    auto num = [&f](const std::string& key, auto member) {
      using T = std::remove_reference_t<decltype(std::declval<TrainConfig&>().*member)>;
      f[key] = {[key, member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
                [member](const TrainConfig& c) {
                  if constexpr (std::is_floating_point_v<T>) {
                    return format_double(c.*member);
                  } else {
                    return std::to_string(c.*member);
                  }
                }};
    };
    num("steps", &TrainConfig::steps);
    num("batch_size", &TrainConfig::batch_size);
    num("context", &TrainConfig::context);
    num("lr", &TrainConfig::lr);
    num("warmup_steps", &TrainConfig::warmup_steps);
    num("grad_clip", &TrainConfig::grad_clip);
    num("weight_decay", &TrainConfig::weight_decay);
    num("noise_sigma", &TrainConfig::noise_sigma);
    num("delta", &TrainConfig::delta);
    num("ema_momentum", &TrainConfig::ema_momentum);
    num("d_model", &TrainConfig::d_model);
    num("blocks", &TrainConfig::blocks);
    num("heads", &TrainConfig::heads);
    num("ssm_state", &TrainConfig::ssm_state);
    num("conv_kernel", &TrainConfig::conv_kernel);
    num("dropout", &TrainConfig::dropout);
    num("flow_blocks", &TrainConfig::flow_blocks);
    num("flow_channels", &TrainConfig::flow_channels);
    num("encoder_hidden", &TrainConfig::encoder_hidden);
    num("encoder_layers", &TrainConfig::encoder_layers);
    num("z_dim", &TrainConfig::z_dim);
    num("flow_scale_bound", &TrainConfig::flow_scale_bound);
    num("critic_steps", &TrainConfig::critic_steps);
    num("seed", &TrainConfig::seed);
    num("log_every", &TrainConfig::log_every);
    f["dataset"] = {[](TrainConfig& c, const std::string& v) { c.dataset = v; },
                    [](const TrainConfig& c) { return "\"" + c.dataset + "\""; }};
    f["cosine"] = {[](TrainConfig& c, const std::string& v) { c.cosine = parse_bool("cosine", v); },
                   [](const TrainConfig& c) { return std::string(c.cosine ? "true" : "false"); }};
    f["tau"] = {[](TrainConfig& c, const std::string& v) { c.regression.tau = parse_number<double>("tau", v); },
                [](const TrainConfig& c) { return format_double(c.regression.tau); }};
    f["loss"] = {[](TrainConfig& c, const std::string& v) { c.regression.kind = regression_from_name(v); },
                 [](const TrainConfig& c) { return "\"" + regression_name(c.regression.kind) + "\""; }};
    f["w_critic"] = {[](TrainConfig& c, const std::string& v) { c.weights.critic = parse_number<double>("w_critic", v); },
                     [](const TrainConfig& c) { return format_double(c.weights.critic); }};
    f["w_bc"] = {[](TrainConfig& c, const std::string& v) { c.weights.bc = parse_number<double>("w_bc", v); },
                 [](const TrainConfig& c) { return format_double(c.weights.bc); }};
    f["w_q"] = {[](TrainConfig& c, const std::string& v) { c.weights.q = parse_number<double>("w_q", v); },
                [](const TrainConfig& c) { return format_double(c.weights.q); }};
    f["backbone"] = {[](TrainConfig& c, const std::string& v) { c.backbone = backbone_from_name(v); },
                     [](const TrainConfig& c) { return "\"" + backbone_name(c.backbone) + "\""; }};
    f["tokenization"] = {[](TrainConfig& c, const std::string& v) { c.tokenization = tokenization_from_name(v); },
                         [](const TrainConfig& c) { return "\"" + tokenization_name(c.tokenization) + "\""; }};
    f["conditioning"] = {[](TrainConfig& c, const std::string& v) { c.conditioning = conditioning_from_name(v); },
                         [](const TrainConfig& c) { return "\"" + conditioning_name(c.conditioning) + "\""; }};
    f["stop_grad"] = {[](TrainConfig& c, const std::string& v) {
                        if (v == "all") c.stop_grad = StopGrad::kAll;
                        else if (v == "current") c.stop_grad = StopGrad::kCurrent;
                        else throw ConfigError("stop_grad must be 'all' or 'current'");
                      },
                      [](const TrainConfig& c) {
                        return std::string(c.stop_grad == StopGrad::kAll ? "\"all\"" : "\"current\"");
                      }};
    f["stage"] = {[](TrainConfig& c, const std::string& v) { c.stage = stage_from_name(v); },
                  [](const TrainConfig& c) { return "\"" + stage_name(c.stage) + "\""; }};
    return f;
  }();
  return fields;
}

}  // namespace detail

inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto& fields = detail::config_fields();
  auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

inline TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    set_config_value(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Canonical text: every key, sorted, one per line. Round-trips through
// parse_config.
inline std::string to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, field] : detail::config_fields()) os << key << " = " << field.get(cfg) << "\n";
  return os.str();
}

inline std::string config_hash(const TrainConfig& cfg) { return hex64(fnv1a64(to_text(cfg))); }

}  // namespace stitchgrid

#endif  // STITCHGRID_CONFIG_HPP_
