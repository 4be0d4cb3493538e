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

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "seg4d/matrix_io.hpp"
#include "seg4d/types.hpp"

namespace seg4d {

/// alpha_i = 1 / sqrt(f_i). Frequencies may be fractions or raw counts; counts
/// only rescale every alpha by the same factor.
inline std::vector<double> class_weights_from_frequencies(const std::vector<double>& freqs) {
  std::vector<double> alpha(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    if (!(freqs[i] > 0.0) || !std::isfinite(freqs[i])) {
      throw ContractError("class frequency " + std::to_string(i) + " must be positive");
    }
    alpha[i] = 1.0 / std::sqrt(freqs[i]);
  }
  return alpha;
}

/// Fraction of labelled points per class; classes that never occur get
/// `floor` so that their weight stays finite.
inline std::vector<double> class_frequencies(const std::vector<std::uint16_t>& labels, std::size_t classes,
                                             double floor = 1e-6) {
  std::vector<double> f(classes, 0.0);
  for (auto l : labels) {
    if (l >= classes) throw ContractError("class_frequencies: label out of range");
    f[l] += 1.0;
  }
  const double total = labels.empty() ? 1.0 : static_cast<double>(labels.size());
  for (auto& v : f) v = std::max(v / total, floor);
  return f;
}

template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  RowMatrix<Scalar> gradient;  // d value / d logits
};

/// Mean over points of -alpha_{y} log softmax(z)_{y}. Targets equal to
/// `ignore` (when set) contribute nothing and are left out of the mean.
template <typename Scalar>
LossValue<Scalar> weighted_ce(const RowMatrix<Scalar>& logits, const std::vector<std::uint16_t>& targets,
                              const std::vector<double>& alpha, int ignore = -1) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) throw ContractError("weighted_ce: row count mismatch");
  if (alpha.size() != static_cast<std::size_t>(logits.cols())) throw ContractError("weighted_ce: weight count mismatch");
  if (!logits.allFinite()) throw ContractError("weighted_ce: non-finite logits");
  LossValue<Scalar> out;
  out.gradient = RowMatrix<Scalar>::Zero(logits.rows(), logits.cols());
  std::size_t counted = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y == ignore) continue;
    if (y >= logits.cols()) throw ContractError("weighted_ce: target out of range");
    ++counted;
    const Scalar mx = logits.row(r).maxCoeff();
    Scalar sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += std::exp(logits(r, c) - mx);
    const Scalar log_z = mx + std::log(sum);
    const Scalar a = static_cast<Scalar>(alpha[static_cast<std::size_t>(y)]);
    out.value += a * (log_z - logits(r, y));
    for (Eigen::Index c = 0; c < logits.cols(); ++c) out.gradient(r, c) = a * std::exp(logits(r, c) - log_z);
    out.gradient(r, y) -= a;
  }
  if (counted > 0) {
    out.value /= static_cast<Scalar>(counted);
    out.gradient /= static_cast<Scalar>(counted);
  }
  return out;
}

struct MultitaskLoss {
  double total = 0.0;
  std::vector<double> d_sigma;
  std::vector<double> d_loss;
};

/// sum_i L_i / (2 sigma_i^2) + ln(1 + sigma_i^2) over whichever tasks are given.
inline MultitaskLoss multitask_loss(const std::vector<double>& losses, const std::vector<double>& sigmas) {
  if (losses.size() != sigmas.size()) throw ContractError("multitask_loss: one sigma per task required");
  MultitaskLoss out;
  out.d_sigma.resize(sigmas.size());
  out.d_loss.resize(sigmas.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const double s = sigmas[i];
    if (!(s > 0.0)) throw ContractError("multitask_loss: sigma must be positive");
    if (!std::isfinite(losses[i])) throw ContractError("multitask_loss: non-finite task loss");
    const double s2 = s * s;
    out.total += losses[i] / (2.0 * s2) + std::log1p(s2);
    out.d_sigma[i] = -losses[i] / (s2 * s) + 2.0 * s / (1.0 + s2);
    out.d_loss[i] = 1.0 / (2.0 * s2);
  }
  return out;
}

}  // namespace seg4d
