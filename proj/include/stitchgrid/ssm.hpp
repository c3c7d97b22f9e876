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

#ifndef STITCHGRID_SSM_HPP_
#define STITCHGRID_SSM_HPP_

// Sequence mixers over batches of equal-length sequences stacked row-wise
// (row = b * length + position). Positions before a sequence's valid_start
// are padding: they neither read nor contribute state.

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "stitchgrid/autodiff.hpp"
#include "stitchgrid/error.hpp"
#include "stitchgrid/nn.hpp"

namespace stitchgrid {

struct SeqLayout {
  int batch = 1;
  int length = 1;
  std::vector<int> valid_start;  // one per sequence; empty means all zero

  int rows() const { return batch * length; }
  int start(int b) const { return valid_start.empty() ? 0 : valid_start[static_cast<size_t>(b)]; }

  void check(Eigen::Index r) const {
    if (r != rows()) throw InvalidInput("sequence layout does not match row count");
    if (!valid_start.empty() && static_cast<int>(valid_start.size()) != batch)
      throw InvalidInput("valid_start must have one entry per sequence");
  }
};

// h_t = exp(delta_t A) h_{t-1} + (delta_t B_t) x_t,  y_t = C_t h_t,  h_0 = 0.
// x, delta: R x D; A: D x N; B, C: R x N. `states`, when given, receives
// h_t flattened (d-major) per row.
inline Matrix selective_scan(const Matrix& x, const Matrix& delta, const Matrix& A,
                             const Matrix& B, const Matrix& C, const SeqLayout& layout,
                             Matrix* states = nullptr) {
  layout.check(x.rows());
  const Eigen::Index D = x.cols(), N = A.cols();
  if (delta.rows() != x.rows() || delta.cols() != D || A.rows() != D || B.cols() != N ||
      C.cols() != N || B.rows() != x.rows() || C.rows() != x.rows())
    throw InvalidInput("selective_scan: shape mismatch");
  Matrix y = Matrix::Zero(x.rows(), D);
  if (states) *states = Matrix::Zero(x.rows(), D * N);
  Matrix h(D, N);
  for (int b = 0; b < layout.batch; ++b) {
    h.setZero();
    for (int t = layout.start(b); t < layout.length; ++t) {
      const int r = b * layout.length + t;
      for (Eigen::Index d = 0; d < D; ++d) {
        const double dt = delta(r, d);
        const double u = dt * x(r, d);
        double acc = 0.0;
        for (Eigen::Index n = 0; n < N; ++n) {
          const double hv = std::exp(dt * A(d, n)) * h(d, n) + u * B(r, n);
          h(d, n) = hv;
          acc += C(r, n) * hv;
        }
        y(r, d) = acc;
      }
      if (states) {
        for (Eigen::Index d = 0; d < D; ++d) states->row(r).segment(d * N, N) = h.row(d);
      }
    }
  }
  return y;
}

// Direct evaluation of the unrolled recurrence
// y_t = sum_{i<=t} C_t (prod_{j=i+1}^{t} Abar_j) Bbar_i x_i. O(T^2) per sequence.
inline Matrix selective_scan_reference(const Matrix& x, const Matrix& delta, const Matrix& A,
                                       const Matrix& B, const Matrix& C,
                                       const SeqLayout& layout) {
  layout.check(x.rows());
  const Eigen::Index D = x.cols(), N = A.cols();
  Matrix y = Matrix::Zero(x.rows(), D);
  for (int b = 0; b < layout.batch; ++b) {
    const int base = b * layout.length;
    for (int t = layout.start(b); t < layout.length; ++t) {
      for (Eigen::Index d = 0; d < D; ++d) {
        double acc = 0.0;
        for (Eigen::Index n = 0; n < N; ++n) {
          for (int i = layout.start(b); i <= t; ++i) {
            double decay = 1.0;
            for (int j = i + 1; j <= t; ++j) decay *= std::exp(delta(base + j, d) * A(d, n));
            acc += C(base + t, n) * decay * delta(base + i, d) * B(base + i, n) * x(base + i, d);
          }
        }
        y(base + t, d) = acc;
      }
    }
  }
  return y;
}

// Differentiable selective scan over (x, delta, A, B, C).
inline Var selective_scan(const Var& x, const Var& delta, const Var& A, const Var& B,
                          const Var& C, const SeqLayout& layout) {
  auto states = std::make_shared<Matrix>();
  Matrix y = selective_scan(x.value(), delta.value(), A.value(), B.value(), C.value(), layout,
                            states.get());
  return ad::detail::make(std::move(y), {x, delta, A, B, C}, [layout, states](ad::Node& nd) {
    const Matrix& xv = nd.parents[0]->value;
    const Matrix& dv = nd.parents[1]->value;
    const Matrix& Av = nd.parents[2]->value;
    const Matrix& Bv = nd.parents[3]->value;
    const Matrix& Cv = nd.parents[4]->value;
    const Eigen::Index D = xv.cols(), N = Av.cols();
    Matrix gx = Matrix::Zero(xv.rows(), D);
    Matrix gd = Matrix::Zero(xv.rows(), D);
    Matrix gA = Matrix::Zero(D, N);
    Matrix gB = Matrix::Zero(xv.rows(), N);
    Matrix gC = Matrix::Zero(xv.rows(), N);
    Matrix gh(D, N);
    for (int b = 0; b < layout.batch; ++b) {
      gh.setZero();
      const int s0 = layout.start(b);
      for (int t = layout.length - 1; t >= s0; --t) {
        const int r = b * layout.length + t;
        for (Eigen::Index d = 0; d < D; ++d) {
          const double gy = nd.grad(r, d);
          const double dt = dv(r, d);
          const double xt = xv(r, d);
          double gdt = 0.0, gxt = 0.0;
          for (Eigen::Index n = 0; n < N; ++n) {
            const double h_t = (*states)(r, d * N + n);
            const double h_prev = t > s0 ? (*states)(r - 1, d * N + n) : 0.0;
            gC(r, n) += gy * h_t;
            const double g = gh(d, n) + gy * Cv(r, n);
            const double abar = std::exp(dt * Av(d, n));
            const double g_abar = g * h_prev * abar;
            gdt += g_abar * Av(d, n) + g * Bv(r, n) * xt;
            gA(d, n) += g_abar * dt;
            gB(r, n) += g * dt * xt;
            gxt += g * dt * Bv(r, n);
            gh(d, n) = g * abar;
          }
          gd(r, d) += gdt;
          gx(r, d) += gxt;
        }
      }
    }
    auto push = [&](int i, const Matrix& g) {
      if (nd.parents[static_cast<size_t>(i)]->requires_grad) nd.parents[static_cast<size_t>(i)]->ensure_grad() += g;
    };
    push(0, gx);
    push(1, gd);
    push(2, gA);
    push(3, gB);
    push(4, gC);
  });
}

// Depthwise causal convolution y_t = bias + sum_{j<k} w_j * x_{t-j}.
// weight: k x D, bias: 1 x D.
inline Var causal_conv(const Var& x, const Var& weight, const Var& bias, const SeqLayout& layout) {
  layout.check(x.rows());
  const Eigen::Index D = x.cols();
  const int k = static_cast<int>(weight.rows());
  if (weight.cols() != D || bias.cols() != D) throw InvalidInput("causal_conv: shape mismatch");
  Matrix y = Matrix::Zero(x.rows(), D);
  for (int b = 0; b < layout.batch; ++b) {
    for (int t = layout.start(b); t < layout.length; ++t) {
      const int r = b * layout.length + t;
      y.row(r) = bias.value().row(0);
      for (int j = 0; j < k && t - j >= layout.start(b); ++j)
        y.row(r) += weight.value().row(j).cwiseProduct(x.value().row(r - j));
    }
  }
  return ad::detail::make(std::move(y), {x, weight, bias}, [layout, k](ad::Node& nd) {
    auto& px = nd.parents[0];
    auto& pw = nd.parents[1];
    auto& pb = nd.parents[2];
    Matrix gx = Matrix::Zero(px->value.rows(), px->value.cols());
    Matrix gw = Matrix::Zero(pw->value.rows(), pw->value.cols());
    Matrix gb = Matrix::Zero(1, px->value.cols());
    for (int b = 0; b < layout.batch; ++b) {
      for (int t = layout.start(b); t < layout.length; ++t) {
        const int r = b * layout.length + t;
        gb += nd.grad.row(r);
        for (int j = 0; j < k && t - j >= layout.start(b); ++j) {
          gw.row(j) += nd.grad.row(r).cwiseProduct(px->value.row(r - j));
          gx.row(r - j) += nd.grad.row(r).cwiseProduct(pw->value.row(j));
        }
      }
    }
    if (px->requires_grad) px->ensure_grad() += gx;
    if (pw->requires_grad) pw->ensure_grad() += gw;
    if (pb->requires_grad) pb->ensure_grad() += gb;
  });
}

// Multi-head causal softmax attention on pre-projected q, k, v (R x d_model).
// Keys before valid_start are masked; padded queries produce zeros.
inline Var causal_attention(const Var& q, const Var& k, const Var& v, int heads,
                            const SeqLayout& layout) {
  layout.check(q.rows());
  const Eigen::Index dm = q.cols();
  if (heads < 1 || dm % heads != 0) throw InvalidInput("attention: d_model % heads != 0");
  if (k.rows() != q.rows() || v.rows() != q.rows() || k.cols() != dm || v.cols() != dm)
    throw InvalidInput("attention: shape mismatch");
  const Eigen::Index dh = dm / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const int L = layout.length;
  // probs[(b * heads + h)] is L x L.
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<size_t>(layout.batch * heads));
  Matrix out = Matrix::Zero(q.rows(), dm);
  for (int b = 0; b < layout.batch; ++b) {
    const int s0 = layout.start(b);
    const Eigen::Index base = static_cast<Eigen::Index>(b) * L;
    for (int h = 0; h < heads; ++h) {
      auto Qh = q.value().block(base, h * dh, L, dh);
      auto Kh = k.value().block(base, h * dh, L, dh);
      auto Vh = v.value().block(base, h * dh, L, dh);
      Matrix P = Matrix::Zero(L, L);
      for (int i = s0; i < L; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = s0; j <= i; ++j) {
          P(i, j) = Qh.row(i).dot(Kh.row(j)) * inv_sqrt;
          mx = std::max(mx, P(i, j));
        }
        double z = 0.0;
        for (int j = s0; j <= i; ++j) {
          P(i, j) = std::exp(P(i, j) - mx);
          z += P(i, j);
        }
        for (int j = s0; j <= i; ++j) P(i, j) /= z;
        for (int j = s0; j <= i; ++j) out.block(base + i, h * dh, 1, dh) += P(i, j) * Vh.row(j);
      }
      (*probs)[static_cast<size_t>(b * heads + h)] = std::move(P);
    }
  }
  return ad::detail::make(std::move(out), {q, k, v}, [layout, heads, dh, inv_sqrt, probs](ad::Node& nd) {
    const Matrix& qv = nd.parents[0]->value;
    const Matrix& kv = nd.parents[1]->value;
    const Matrix& vv = nd.parents[2]->value;
    const Eigen::Index dm = qv.cols();
    const int L = layout.length;
    Matrix gq = Matrix::Zero(qv.rows(), dm);
    Matrix gk = Matrix::Zero(qv.rows(), dm);
    Matrix gv = Matrix::Zero(qv.rows(), dm);
    for (int b = 0; b < layout.batch; ++b) {
      const int s0 = layout.start(b);
      const Eigen::Index base = static_cast<Eigen::Index>(b) * L;
      for (int h = 0; h < heads; ++h) {
        const Matrix& P = (*probs)[static_cast<size_t>(b * heads + h)];
        for (int i = s0; i < L; ++i) {
          auto gout = nd.grad.block(base + i, h * dh, 1, dh);
          // dP_ij = gout . v_j ; dS = P (dP - sum_j P dP)
          double dot = 0.0;
          std::vector<double> dP(static_cast<size_t>(i + 1), 0.0);
          for (int j = s0; j <= i; ++j) {
            dP[static_cast<size_t>(j)] = gout.cwiseProduct(vv.block(base + j, h * dh, 1, dh)).sum();
            dot += P(i, j) * dP[static_cast<size_t>(j)];
            gv.block(base + j, h * dh, 1, dh) += P(i, j) * gout;
          }
          for (int j = s0; j <= i; ++j) {
            const double dS = P(i, j) * (dP[static_cast<size_t>(j)] - dot) * inv_sqrt;
            gq.block(base + i, h * dh, 1, dh) += dS * kv.block(base + j, h * dh, 1, dh);
            gk.block(base + j, h * dh, 1, dh) += dS * qv.block(base + i, h * dh, 1, dh);
          }
        }
      }
    }
    if (nd.parents[0]->requires_grad) nd.parents[0]->ensure_grad() += gq;
    if (nd.parents[1]->requires_grad) nd.parents[1]->ensure_grad() += gk;
    if (nd.parents[2]->requires_grad) nd.parents[2]->ensure_grad() += gv;
  });
}

}  // namespace stitchgrid

#endif  // STITCHGRID_SSM_HPP_
