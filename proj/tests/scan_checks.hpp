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


#ifndef STITCHGRID_TESTS_SCAN_CHECKS_HPP_
#define STITCHGRID_TESTS_SCAN_CHECKS_HPP_

#include <algorithm>
#include <random>

#include "stitchgrid/env.hpp"
#include "stitchgrid/ssm.hpp"

namespace stitchgrid::testing {

struct ScanInstance {
  Matrix x, delta, A, B, C;
  SeqLayout layout;
};

// Random scan parameters: delta = softplus(normal), A < 0, lengths 1..max_len.
inline ScanInstance random_scan(Rng& rng, int max_len = 48) {
  std::uniform_int_distribution<int> len(1, max_len), dim(1, 4), batch(1, 3);
  ScanInstance s;
  s.layout.batch = batch(rng);
  s.layout.length = len(rng);
  std::uniform_int_distribution<int> start(0, s.layout.length - 1);
  for (int b = 0; b < s.layout.batch; ++b) s.layout.valid_start.push_back(b == 0 ? 0 : start(rng));
  const int R = s.layout.rows(), D = dim(rng), N = dim(rng);
  s.x = normal_matrix(R, D, 1.0, rng);
  s.delta = normal_matrix(R, D, 1.0, rng).unaryExpr([](double v) { return ad::detail::softplus(v); });
  s.A = -uniform_matrix(D, N, 1.0, rng).cwiseAbs() - Matrix::Constant(D, N, 0.05);
  s.B = normal_matrix(R, N, 1.0, rng);
  s.C = normal_matrix(R, N, 1.0, rng);
  return s;
}

inline double scan_max_error(int instances, std::uint64_t seed, int max_len = 48) {
  Rng rng = derive_rng(seed, 0x5CA);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    ScanInstance s = random_scan(rng, max_len);
    const Matrix y = selective_scan(s.x, s.delta, s.A, s.B, s.C, s.layout);
    const Matrix r = selective_scan_reference(s.x, s.delta, s.A, s.B, s.C, s.layout);
    worst = std::max(worst, (y - r).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace stitchgrid::testing

#endif  // STITCHGRID_TESTS_SCAN_CHECKS_HPP_
