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

#ifndef STITCHGRID_BACKBONE_HPP_
#define STITCHGRID_BACKBONE_HPP_

// Gated attention + selective-SSM sequence model over per-timestep
// (state-goal, Q, action) tokens.
//
// Token order within a timestep is (sg, Q, a): the Q estimate is read at the
// sg output, the action logits at the Q output, and the a output is unused.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "stitchgrid/autodiff.hpp"
#include "stitchgrid/error.hpp"
#include "stitchgrid/nn.hpp"
#include "stitchgrid/ssm.hpp"

namespace stitchgrid {

enum class BackboneKind { kAttention, kMamba, kHybrid };
enum class Tokenization { kConcat, kSeparate, kNoGoal };

inline std::string backbone_name(BackboneKind k) {
  switch (k) {
    case BackboneKind::kAttention: return "attention";
    case BackboneKind::kMamba: return "mamba";
    case BackboneKind::kHybrid: return "hybrid";
  }
  return "hybrid";
}

inline BackboneKind backbone_from_name(const std::string& s) {
  if (s == "attention") return BackboneKind::kAttention;
  if (s == "mamba") return BackboneKind::kMamba;
  if (s == "hybrid") return BackboneKind::kHybrid;
  throw ConfigError("unknown backbone '" + s + "'");
}

inline std::string tokenization_name(Tokenization t) {
  switch (t) {
    case Tokenization::kConcat: return "concat";
    case Tokenization::kSeparate: return "separate";
    case Tokenization::kNoGoal: return "nogoal";
  }
  return "concat";
}

inline Tokenization tokenization_from_name(const std::string& s) {
  if (s == "concat") return Tokenization::kConcat;
  if (s == "separate") return Tokenization::kSeparate;
  if (s == "nogoal") return Tokenization::kNoGoal;
  throw ConfigError("unknown tokenization '" + s + "'");
}

struct ModelConfig {
  int obs_dim = 2;
  int goal_dim = 2;
  int action_count = 4;
  int d_model = 128;
  int blocks = 3;
  int heads = 4;
  int ssm_state = 16;
  int conv_kernel = 4;
  int context = 10;  // K timesteps
  double dropout = 0.1;
  BackboneKind backbone = BackboneKind::kHybrid;
  Tokenization tokenization = Tokenization::kConcat;
  // Fixed input standardization applied to observations and goals.
  std::vector<double> input_shift;
  std::vector<double> input_scale;

  int tokens_per_step() const { return tokenization == Tokenization::kSeparate ? 4 : 3; }
  int sg_offset() const { return tokens_per_step() - 3; }
  int q_offset() const { return tokens_per_step() - 2; }
  int a_offset() const { return tokens_per_step() - 1; }

  void validate() const {
    if (d_model < 1 || blocks < 1 || heads < 1 || ssm_state < 1 || conv_kernel < 1)
      throw ConfigError("model dims must be positive");
    if (context < 1) throw ConfigError("context length K must be >= 1");
    if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!input_shift.empty() && static_cast<int>(input_shift.size()) != obs_dim)
      throw ConfigError("input standardization must have obs_dim entries");
  }
};

// Model inputs for `batch` sequences of `steps` timesteps, rows b * steps + k.
// action < 0 or q_present == 0 marks an omitted slot (learned mask token);
// the first pad[b] timesteps of sequence b are padding.
struct SequenceBatch {
  int batch = 0;
  int steps = 0;
  Matrix obs;
  Matrix goals;
  Matrix q;
  std::vector<int> actions;
  std::vector<std::uint8_t> q_present;
  std::vector<int> pad;

  int rows() const { return batch * steps; }

  void resize(int b, int k, int obs_dim, int goal_dim) {
    batch = b;
    steps = k;
    obs = Matrix::Zero(b * k, obs_dim);
    goals = Matrix::Zero(b * k, goal_dim);
    q = Matrix::Zero(b * k, 1);
    actions.assign(static_cast<size_t>(b * k), -1);
    q_present.assign(static_cast<size_t>(b * k), 1);
    pad.assign(static_cast<size_t>(b), 0);
  }
};

// Per-block SSM internals captured during a forward pass.
struct ForwardTrace {
  std::vector<Matrix> delta;  // per block, token rows x channels
  std::vector<Matrix> A;      // per block, channels x state
  std::vector<Matrix> alpha;  // per block, token rows x 1
  SeqLayout layout;
};

struct ForwardOptions {
  bool train = false;
  Rng* rng = nullptr;  // dropout masks; required when train && dropout > 0
  ForwardTrace* trace = nullptr;
};

inline Var dropout(const Var& x, double p, const ForwardOptions& opt) {
  if (!opt.train || p <= 0.0) return x;
  if (!opt.rng) throw InvalidInput("dropout requires an rng in training mode");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*opt.rng) ? 1.0 / (1.0 - p) : 0.0;
  return ad::mul_const(x, mask);
}

struct AttentionBranch {
  Linear q, k, v, o;
  int heads = 1;

  AttentionBranch() = default;
  AttentionBranch(int d, int h, Rng& rng)
      : q(d, d, rng), k(d, d, rng), v(d, d, rng), o(d, d, rng), heads(h) {}

  Var operator()(const Var& x, const SeqLayout& layout) const {
    return o(causal_attention(q(x), k(x), v(x), heads, layout));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
  }
};

// in_proj -> causal depthwise conv -> SiLU gives x'; B, C and
// delta = softplus(.) are linear in x'; A = -exp(a_log) stays negative.
struct SsmBranch {
  Linear in_proj;
  Var conv_weight;  // k x d
  Var conv_bias;    // 1 x d
  Linear delta_proj;
  Linear b_proj;
  Linear c_proj;
  Var a_log;  // d x N
  Linear out_proj;

  SsmBranch() = default;
  SsmBranch(int d, int state, int kernel, Rng& rng)
      : in_proj(d, d, rng), delta_proj(d, d, rng), b_proj(d, state, rng), c_proj(d, state, rng),
        out_proj(d, d, rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(kernel));
    conv_weight = ad::parameter(uniform_matrix(kernel, d, bound, rng));
    conv_bias = ad::parameter(uniform_matrix(1, d, bound, rng));
    Matrix al(d, state);
    for (int i = 0; i < d; ++i)
      for (int n = 0; n < state; ++n) al(i, n) = std::log(static_cast<double>(n + 1));
    a_log = ad::parameter(std::move(al));
    // softplus(bias) = 0.5 at initialization, small weights around it.
    delta_proj.weight.mutable_value() *= 0.1;
    delta_proj.bias.mutable_value().setConstant(std::log(std::exp(0.5) - 1.0));
  }

  Matrix A() const { return -a_log.value().array().exp().matrix(); }

  Var operator()(const Var& x, const SeqLayout& layout, Matrix* delta_out = nullptr) const {
    Var u = in_proj(x);
    Var xp = ad::silu(causal_conv(u, conv_weight, conv_bias, layout));
    Var delta = ad::softplus(delta_proj(xp));
    Var A = ad::scale(ad::exp(a_log), -1.0);
    Var y = selective_scan(xp, delta, A, b_proj(xp), c_proj(xp), layout);
    if (delta_out) *delta_out = delta.value();
    return out_proj(y);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    in_proj.collect(prefix + ".in", out);
    out.push_back({prefix + ".conv.weight", conv_weight});
    out.push_back({prefix + ".conv.bias", conv_bias});
    delta_proj.collect(prefix + ".delta", out);
    b_proj.collect(prefix + ".b", out);
    c_proj.collect(prefix + ".c", out);
    out.push_back({prefix + ".a_log", a_log});
    out_proj.collect(prefix + ".out", out);
  }
};

struct BranchOutputs {
  Var attn;   // undefined for the mamba-only backbone
  Var ssm;    // undefined for the attention-only backbone
  Var alpha;  // rows x 1, hybrid only
  Matrix delta;
};

struct GatedHybridBlock {
  BackboneKind kind = BackboneKind::kHybrid;
  double dropout_rate = 0.0;
  LayerNorm norm1;
  LayerNorm norm2;
  AttentionBranch attn;
  SsmBranch ssm;
  Linear gate;  // d -> 1, zero-initialized
  Linear ff1;
  Linear ff2;

  GatedHybridBlock() = default;
  GatedHybridBlock(const ModelConfig& cfg, Rng& rng)
      : kind(cfg.backbone), dropout_rate(cfg.dropout), norm1(cfg.d_model), norm2(cfg.d_model) {
    if (kind != BackboneKind::kMamba) attn = AttentionBranch(cfg.d_model, cfg.heads, rng);
    if (kind != BackboneKind::kAttention) ssm = SsmBranch(cfg.d_model, cfg.ssm_state, cfg.conv_kernel, rng);
    if (kind == BackboneKind::kHybrid) {
      gate = Linear(cfg.d_model, 1, rng);
      gate.zero_init();
    }
    ff1 = Linear(cfg.d_model, 4 * cfg.d_model, rng);
    ff2 = Linear(4 * cfg.d_model, cfg.d_model, rng);
  }

  BranchOutputs branches(const Var& x, const SeqLayout& layout) const {
    BranchOutputs out;
    Var h = norm1(x);
    if (kind != BackboneKind::kMamba) out.attn = attn(h, layout);
    if (kind != BackboneKind::kAttention) out.ssm = ssm(h, layout, &out.delta);
    if (kind == BackboneKind::kHybrid) out.alpha = ad::sigmoid(gate(x));
    return out;
  }

  static Var fuse(const BranchOutputs& b) {
    if (!b.ssm.defined()) return b.attn;
    if (!b.attn.defined()) return b.ssm;
    return ad::add(ad::mul_col(b.attn, b.alpha), ad::mul_col(b.ssm, ad::one_minus(b.alpha)));
  }

  Var operator()(const Var& x, const SeqLayout& layout, const ForwardOptions& opt = {},
                 BranchOutputs* keep = nullptr) const {
    BranchOutputs b = branches(x, layout);
    Var y = ad::add(x, dropout(fuse(b), dropout_rate, opt));
    Var f = ff2(ad::silu(ff1(norm2(y))));
    y = ad::add(y, dropout(f, dropout_rate, opt));
    if (keep) *keep = std::move(b);
    return y;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    norm1.collect(prefix + ".norm1", out);
    norm2.collect(prefix + ".norm2", out);
    if (kind != BackboneKind::kMamba) attn.collect(prefix + ".attn", out);
    if (kind != BackboneKind::kAttention) ssm.collect(prefix + ".ssm", out);
    if (kind == BackboneKind::kHybrid) gate.collect(prefix + ".gate", out);
    ff1.collect(prefix + ".ff1", out);
    ff2.collect(prefix + ".ff2", out);
  }
};

struct ModelOutput {
  Var qhat;    // (batch * steps) x 1, read at sg positions
  Var logits;  // (batch * steps) x action_count, read at Q positions
};

class HybridSequenceModel {
 public:
  HybridSequenceModel() = default;
  HybridSequenceModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.d_model;
    switch (cfg_.tokenization) {
      case Tokenization::kConcat: state_embed_ = Linear(cfg_.obs_dim + cfg_.goal_dim, d, rng); break;
      case Tokenization::kSeparate:
        state_embed_ = Linear(cfg_.obs_dim, d, rng);
        goal_embed_ = Linear(cfg_.goal_dim, d, rng);
        break;
      case Tokenization::kNoGoal: state_embed_ = Linear(cfg_.obs_dim, d, rng); break;
    }
    q_embed_ = Linear(1, d, rng);
    action_embed_ = Linear(cfg_.action_count, d, rng);
    time_embed_ = ad::parameter(normal_matrix(cfg_.context, d, 0.02, rng));
    mask_token_ = ad::parameter(normal_matrix(1, d, 0.02, rng));
    for (int l = 0; l < cfg_.blocks; ++l) blocks_.emplace_back(cfg_, rng);
    final_norm_ = LayerNorm(d);
    q_head_ = Linear(d, 1, rng);
    action_head_ = Linear(d, cfg_.action_count, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<GatedHybridBlock>& blocks() { return blocks_; }
  const std::vector<GatedHybridBlock>& blocks() const { return blocks_; }
  const Var& mask_token() const { return mask_token_; }

  SeqLayout layout_for(const SequenceBatch& in) const {
    SeqLayout layout;
    layout.batch = in.batch;
    layout.length = in.steps * cfg_.tokens_per_step();
    layout.valid_start.resize(static_cast<size_t>(in.batch));
    for (int b = 0; b < in.batch; ++b)
      layout.valid_start[static_cast<size_t>(b)] = in.pad[static_cast<size_t>(b)] * cfg_.tokens_per_step();
    return layout;
  }

  // Token matrix (batch * steps * tokens_per_step) x d_model. Each present
  // slot is its linear embedding plus the window-position embedding; omitted
  // and padded slots are exactly the mask token. `q_tokens` (rows x 1), when
  // defined, replaces in.q as a differentiable input.
  Var embed(const SequenceBatch& in, const Var& q_tokens = {}) const {
    check(in);
    const int P = cfg_.tokens_per_step();
    const int R = in.rows();
    Matrix obs = standardize(in.obs);
    Matrix goals = standardize(in.goals);
    std::vector<Var> sources;
    int offset = 0;
    int state_src = 0, goal_src = -1;
    switch (cfg_.tokenization) {
      case Tokenization::kConcat: {
        Matrix sg(R, cfg_.obs_dim + cfg_.goal_dim);
        sg << obs, goals;
        sources.push_back(state_embed_(ad::constant(std::move(sg))));
        break;
      }
      case Tokenization::kSeparate:
        sources.push_back(state_embed_(ad::constant(obs)));
        sources.push_back(goal_embed_(ad::constant(goals)));
        goal_src = R;
        break;
      case Tokenization::kNoGoal: sources.push_back(state_embed_(ad::constant(obs))); break;
    }
    offset = static_cast<int>(sources.size()) * R;
    const int q_src = offset;
    sources.push_back(q_embed_(q_tokens.defined() ? q_tokens : ad::constant(in.q)));
    const int a_src = q_src + R;
    Matrix onehot = Matrix::Zero(R, cfg_.action_count);
    for (int r = 0; r < R; ++r) {
      const int a = in.actions[static_cast<size_t>(r)];
      if (a >= cfg_.action_count) throw InvalidInput("embed: action out of range");
      if (a >= 0) onehot(r, a) = 1.0;
    }
    sources.push_back(action_embed_(ad::constant(std::move(onehot))));
    const int mask_src = a_src + R;
    sources.push_back(mask_token_);
    const int zero_time = cfg_.context;
    Var time_table = ad::vcat({time_embed_, ad::constant(Matrix::Zero(1, cfg_.d_model))});

    std::vector<int> src(static_cast<size_t>(R * P)), tidx(static_cast<size_t>(R * P));
    for (int b = 0; b < in.batch; ++b) {
      for (int k = 0; k < in.steps; ++k) {
        const int r = b * in.steps + k;
        const bool padded = k < in.pad[static_cast<size_t>(b)];
        std::vector<int> slot(static_cast<size_t>(P));
        int j = 0;
        slot[static_cast<size_t>(j++)] = state_src + r;
        if (goal_src >= 0) slot[static_cast<size_t>(j++)] = goal_src + r;
        slot[static_cast<size_t>(j++)] = in.q_present[static_cast<size_t>(r)] ? q_src + r : -1;
        slot[static_cast<size_t>(j++)] = in.actions[static_cast<size_t>(r)] >= 0 ? a_src + r : -1;
        for (int p = 0; p < P; ++p) {
          const size_t row = static_cast<size_t>(r * P + p);
          const bool masked = padded || slot[static_cast<size_t>(p)] < 0;
          src[row] = masked ? mask_src : slot[static_cast<size_t>(p)];
          tidx[row] = masked ? zero_time : k;
        }
      }
    }
    return ad::add(ad::gather_rows(ad::vcat(sources), std::move(src)),
                   ad::gather_rows(time_table, std::move(tidx)));
  }

  ModelOutput forward(const SequenceBatch& in, const ForwardOptions& opt = {},
                      const Var& q_tokens = {}) const {
    const SeqLayout layout = layout_for(in);
    Var x = dropout(embed(in, q_tokens), cfg_.dropout, opt);
    if (opt.trace) {
      *opt.trace = ForwardTrace{};
      opt.trace->layout = layout;
    }
    for (const auto& block : blocks_) {
      BranchOutputs keep;
      x = block(x, layout, opt, opt.trace ? &keep : nullptr);
      if (opt.trace) {
        if (block.kind != BackboneKind::kAttention) {
          opt.trace->delta.push_back(keep.delta);
          opt.trace->A.push_back(block.ssm.A());
        }
        if (keep.alpha.defined()) opt.trace->alpha.push_back(keep.alpha.value());
      }
    }
    x = final_norm_(x);
    const int P = cfg_.tokens_per_step();
    std::vector<int> sg_rows(static_cast<size_t>(in.rows())), q_rows(static_cast<size_t>(in.rows()));
    for (int r = 0; r < in.rows(); ++r) {
      sg_rows[static_cast<size_t>(r)] = r * P + cfg_.sg_offset();
      q_rows[static_cast<size_t>(r)] = r * P + cfg_.q_offset();
    }
    ModelOutput out;
    out.qhat = q_head_(ad::gather_rows(x, std::move(sg_rows)));
    out.logits = action_head_(ad::gather_rows(x, std::move(q_rows)));
    return out;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    state_embed_.collect(prefix + ".embed.state", out);
    if (cfg_.tokenization == Tokenization::kSeparate) goal_embed_.collect(prefix + ".embed.goal", out);
    q_embed_.collect(prefix + ".embed.q", out);
    action_embed_.collect(prefix + ".embed.action", out);
    out.push_back({prefix + ".embed.time", time_embed_});
    out.push_back({prefix + ".embed.mask", mask_token_});
    for (size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect(prefix + ".block" + std::to_string(l), out);
    final_norm_.collect(prefix + ".final_norm", out);
    q_head_.collect(prefix + ".q_head", out);
    action_head_.collect(prefix + ".action_head", out);
  }

  ParamList parameters() const {
    ParamList out;
    collect("policy", out);
    return out;
  }

 private:
  void check(const SequenceBatch& in) const {
    if (in.steps < 1 || in.batch < 1) throw InvalidInput("embed: empty batch");
    if (in.steps > cfg_.context) throw InvalidInput("embed: context length K exceeded");
    const auto R = static_cast<Eigen::Index>(in.rows());
    if (in.obs.rows() != R || in.obs.cols() != cfg_.obs_dim || in.goals.rows() != R ||
        in.goals.cols() != cfg_.goal_dim || in.q.rows() != R ||
        static_cast<Eigen::Index>(in.actions.size()) != R ||
        static_cast<Eigen::Index>(in.q_present.size()) != R ||
        static_cast<int>(in.pad.size()) != in.batch)
      throw InvalidInput("embed: inconsistent sequence lengths");
    for (int p : in.pad)
      if (p < 0 || p >= in.steps) throw InvalidInput("embed: padding must leave >= 1 timestep");
  }

  Matrix standardize(const Matrix& x) const {
    if (cfg_.input_shift.empty()) return x;
    Matrix out = x;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const double sc = cfg_.input_scale.empty() ? 1.0 : cfg_.input_scale[static_cast<size_t>(i)];
      out.col(i) = (x.col(i).array() - cfg_.input_shift[static_cast<size_t>(i)]) / sc;
    }
    return out;
  }

  ModelConfig cfg_;
  Linear state_embed_;
  Linear goal_embed_;
  Linear q_embed_;
  Linear action_embed_;
  Var time_embed_;
  Var mask_token_;
  std::vector<GatedHybridBlock> blocks_;
  LayerNorm final_norm_;
  Linear q_head_;
  Linear action_head_;
};

// Largest k <= decay.size() with prod of the last k entries > 0.5.
inline int effective_memory(const std::vector<double>& decay) {
  double prod = 1.0;
  int k = 0;
  for (auto it = decay.rbegin(); it != decay.rend(); ++it) {
    prod *= *it;
    if (!(prod > 0.5)) break;
    ++k;
  }
  return k;
}

struct DeltaStats {
  double mean_delta = 0.0;
  double std_delta = 0.0;
  double mean_abar = 0.0;
  double effective_memory = 0.0;
  double mean_alpha = std::numeric_limits<double>::quiet_NaN();
  long tokens = 0;
};

// Accumulates SSM statistics over valid (non-pad) token positions of one or
// more forward traces. Effective memory is taken per (channel, state) decay
// sequence, then averaged over positions, channels and blocks.
class DeltaAccumulator {
 public:
  void add(const ForwardTrace& tr) {
    const SeqLayout& L = tr.layout;
    for (size_t blk = 0; blk < tr.delta.size(); ++blk) {
      const Matrix& dl = tr.delta[blk];
      const Matrix& A = tr.A[blk];
      const Eigen::Index D = dl.cols(), N = A.cols();
      for (int b = 0; b < L.batch; ++b) {
        const int s0 = L.start(b);
        for (int t = s0; t < L.length; ++t) {
          const int r = b * L.length + t;
          for (Eigen::Index d = 0; d < D; ++d) {
            const double v = dl(r, d);
            sum_ += v;
            sq_ += v * v;
            ++n_delta_;
            for (Eigen::Index n = 0; n < N; ++n) abar_ += std::exp(v * A(d, n));
          }
          n_abar_ += D * N;
          // walk back from t while the decay product stays above 0.5
          for (Eigen::Index d = 0; d < D; ++d) {
            for (Eigen::Index n = 0; n < N; ++n) {
              double log_prod = 0.0;
              int k = 0;
              for (int j = t; j >= s0; --j) {
                log_prod += dl(b * L.length + j, d) * A(d, n);
                if (!(log_prod > std::log(0.5))) break;
                ++k;
              }
              mem_ += k;
              ++n_mem_;
            }
          }
        }
      }
    }
    for (const auto& a : tr.alpha) {
      for (int b = 0; b < L.batch; ++b)
        for (int t = L.start(b); t < L.length; ++t) {
          alpha_ += a(b * L.length + t, 0);
          ++n_alpha_;
        }
    }
    for (int b = 0; b < L.batch; ++b) tokens_ += L.length - L.start(b);
  }

  DeltaStats stats() const {
    DeltaStats s;
    if (n_delta_ > 0) {
      s.mean_delta = sum_ / static_cast<double>(n_delta_);
      s.std_delta = std::sqrt(std::max(0.0, sq_ / static_cast<double>(n_delta_) - s.mean_delta * s.mean_delta));
      s.mean_abar = abar_ / static_cast<double>(n_abar_);
      s.effective_memory = mem_ / static_cast<double>(n_mem_);
    } else {
      s.mean_delta = s.std_delta = s.mean_abar = s.effective_memory =
          std::numeric_limits<double>::quiet_NaN();
    }
    if (n_alpha_ > 0) s.mean_alpha = alpha_ / static_cast<double>(n_alpha_);
    s.tokens = tokens_;
    return s;
  }

 private:
  double sum_ = 0, sq_ = 0, abar_ = 0, mem_ = 0, alpha_ = 0;
  long n_delta_ = 0, n_abar_ = 0, n_mem_ = 0, n_alpha_ = 0, tokens_ = 0;
};

inline DeltaStats delta_diagnostics(const HybridSequenceModel& model, const SequenceBatch& batch) {
  ForwardTrace tr;
  ForwardOptions opt;
  opt.trace = &tr;
  model.forward(batch, opt);
  DeltaAccumulator acc;
  acc.add(tr);
  return acc.stats();
}

}  // namespace stitchgrid

#endif  // STITCHGRID_BACKBONE_HPP_
