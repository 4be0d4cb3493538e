// Copyright 2026 The seg4d Authors
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

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d {

struct ValueAndGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the analytic gradient of `f` at `x` with central differences of
/// step `eps`. Per coordinate the error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult grad_check(const std::function<ValueAndGradient(const std::vector<double>&)>& f,
                                  const std::vector<double>& x, double eps = 1e-6, double floor = 1e-8) {
  const auto base = f(x);
  if (!std::isfinite(base.value)) throw Error("grad_check: non-finite value at the base point");
  if (base.gradient.size() != x.size()) throw ContractError("grad_check: gradient length differs from input");
  GradCheckResult out;
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe).value;
    probe[i] = x[i] - eps;
    const double down = f(probe).value;
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) throw Error("grad_check: non-finite value while probing");
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = base.gradient[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double err = std::abs(analytic - numeric) / denom;
    if (i == 0 || err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst_index = i;
      out.analytic = analytic;
      out.numeric = numeric;
    }
  }
  return out;
}

}  // namespace seg4d
