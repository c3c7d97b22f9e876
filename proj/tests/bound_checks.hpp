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


#ifndef STITCHGRID_TESTS_BOUND_CHECKS_HPP_
#define STITCHGRID_TESTS_BOUND_CHECKS_HPP_

#include <cmath>
#include <random>
#include <vector>

#include "stitchgrid/env.hpp"
#include "stitchgrid/objectives.hpp"

namespace stitchgrid::testing {

struct BoundSweep {
  long checked = 0;
  long violations = 0;
  double worst_slack = 0.0;  // min of bound - gap
};

// Random sample sets of size K in [20, 200] where at least ceil(c K) entries
// equal qstar and the rest lie in [qmin, qstar].
inline BoundSweep bias_bound_sweep(int sets, const std::vector<double>& taus, std::uint64_t seed) {
  Rng rng = derive_rng(seed, 0xB0);
  std::uniform_int_distribution<int> size(20, 200);
  std::uniform_real_distribution<double> cov(0.02, 1.0), u(0.0, 1.0), val(-2.0, 2.0);
  BoundSweep out;
  out.worst_slack = INFINITY;
  for (int s = 0; s < sets; ++s) {
    const int K = size(rng);
    const double c = cov(rng);
    const double qstar = val(rng), qmin = qstar - 3.0 * u(rng);
    const int at_max = static_cast<int>(std::ceil(c * K));
    std::vector<double> x(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k) x[static_cast<size_t>(k)] = k < at_max ? qstar : qmin + (qstar - qmin) * u(rng);
    for (double tau : taus) {
      const double gap = std::abs(qstar - scalar_expectile(x, tau));
      const double eps = expectile_bias_bound(tau, c, qstar, qmin);
      ++out.checked;
      if (gap > eps + 1e-9) ++out.violations;
      out.worst_slack = std::min(out.worst_slack, eps - gap);
    }
  }
  return out;
}

}  // namespace stitchgrid::testing

#endif  // STITCHGRID_TESTS_BOUND_CHECKS_HPP_
