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

#ifndef STITCHGRID_NN_HPP_
#define STITCHGRID_NN_HPP_

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stitchgrid/autodiff.hpp"
#include "stitchgrid/error.hpp"

namespace stitchgrid {

using Rng = std::mt19937_64;
using ad::Matrix;
using ad::Var;

struct NamedParam {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedParam>;

inline std::vector<Var> vars_of(const ParamList& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound,
                             Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev,
                            Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// y = x W + b with W stored (in x out).
struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = ad::parameter(uniform_matrix(in, out, bound, rng));
    bias = ad::parameter(uniform_matrix(1, out, bound, rng));
  }

  int in_features() const { return static_cast<int>(weight.rows()); }
  int out_features() const { return static_cast<int>(weight.cols()); }

  Var operator()(const Var& x) const {
    return ad::add_row(ad::matmul(x, weight), bias);
  }

  void zero_init() {
    weight.mutable_value().setZero();
    bias.mutable_value().setZero();
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

// Dense MLP with SiLU between layers and a linear head.
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(int in, const std::vector<int>& hidden, int out, Rng& rng) {
    int prev = in;
    for (int h : hidden) {
      layers.emplace_back(prev, h, rng);
      prev = h;
    }
    layers.emplace_back(prev, out, rng);
  }

  Var operator()(Var x) const {
    for (size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = ad::silu(x);
    }
    return x;
  }

  Linear& head() { return layers.back(); }

  void collect(const std::string& prefix, ParamList& out) const {
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(prefix + "." + std::to_string(i), out);
  }
};

struct LayerNorm {
  Var gain;
  Var bias;

  LayerNorm() = default;
  explicit LayerNorm(int dim)
      : gain(ad::parameter(Matrix::Ones(1, dim))),
        bias(ad::parameter(Matrix::Zero(1, dim))) {}

  Var operator()(const Var& x) const { return ad::layer_norm(x, gain, bias); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gain", gain});
    out.push_back({prefix + ".bias", bias});
  }
};

inline Matrix one_hot(const std::vector<int>& idx, int classes) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(idx.size()), classes);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= classes) throw InvalidInput("one_hot: index out of range");
    m(static_cast<Eigen::Index>(i), idx[i]) = 1.0;
  }
  return m;
}

// Linear warmup to the peak rate, then optional cosine decay to zero.
struct LrSchedule {
  double peak = 3e-4;
  long warmup_steps = 0;
  long total_steps = 1;
  bool cosine = false;

  double at(long step) const {
    if (warmup_steps > 0 && step < warmup_steps) {
      return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (!cosine) return peak;
    const long span = std::max<long>(1, total_steps - warmup_steps);
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
    return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW() = default;
  AdamW(ParamList params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Var& p = params_[i].var;
      if (!p.has_grad()) continue;
      const Matrix& g = p.grad();
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
      Matrix& w = p.mutable_value();
      if (opts_.weight_decay > 0.0) w *= (1.0 - lr * opts_.weight_decay);
      w.array() -= lr * (m_[i].array() / bc1) /
                   ((v_[i].array() / bc2).sqrt() + opts_.eps);
    }
  }

  const ParamList& params() const { return params_; }
  long steps_taken() const { return t_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_steps_taken(long t) { t_ = t; }

 private:
  ParamList params_;
  Options opts_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace stitchgrid

#endif  // STITCHGRID_NN_HPP_
