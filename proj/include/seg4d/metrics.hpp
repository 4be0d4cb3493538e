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

#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d {

/// K x K counts, rows ground truth, columns prediction. Points whose ground
/// truth equals the ignore id are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes, std::optional<std::uint16_t> ignore = std::nullopt)
      : k_(classes), ignore_(ignore), counts_(classes * classes, 0) {}

  std::size_t classes() const { return k_; }
  std::optional<std::uint16_t> ignore_id() const { return ignore_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_.at(truth * k_ + pred); }

  template <typename TruthT, typename PredT>
  void accumulate(const std::vector<TruthT>& truth, const std::vector<PredT>& pred) {
    if (truth.size() != pred.size()) throw ContractError("confusion: truth and prediction lengths differ");
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (static_cast<std::size_t>(truth[i]) >= k_ || static_cast<std::size_t>(pred[i]) >= k_) {
        throw ContractError("confusion: class id out of range at index " + std::to_string(i));
      }
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (ignore_ && static_cast<std::uint16_t>(truth[i]) == *ignore_) continue;
      ++counts_[static_cast<std::size_t>(truth[i]) * k_ + static_cast<std::size_t>(pred[i])];
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw ContractError("confusion: cannot merge matrices of different size");
    for (std::size_t c = 0; c < counts_.size(); ++c) counts_[c] += other.counts_[c];
    return *this;
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  std::uint64_t true_positives(std::size_t k) const { return at(k, k); }

  std::uint64_t false_positives(std::size_t k) const {
    std::uint64_t col = 0;
    for (std::size_t t = 0; t < k_; ++t) col += at(t, k);
    return col - at(k, k);
  }

  std::uint64_t false_negatives(std::size_t k) const {
    std::uint64_t row = 0;
    for (std::size_t p = 0; p < k_; ++p) row += at(k, p);
    return row - at(k, k);
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::optional<std::uint16_t> ignore_;
  std::vector<std::uint64_t> counts_;
};

/// TP / (TP + FP + FN); 0 when the class never occurs in truth or prediction.
inline double iou(const ConfusionMatrix& m, std::size_t k) {
  if (k >= m.classes()) throw ContractError("iou: class id out of range");
  const auto tp = m.true_positives(k);
  const auto denom = tp + m.false_positives(k) + m.false_negatives(k);
  return denom == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

/// Mean IoU over `classes`; classes with an empty denominator count as 0.
inline double miou(const ConfusionMatrix& m, const std::vector<std::size_t>& classes) {
  if (classes.empty()) throw ContractError("miou: empty class set");
  double sum = 0.0;
  for (auto k : classes) sum += iou(m, k);
  return sum / static_cast<double>(classes.size());
}

/// All ids except the ignore id.
inline std::vector<std::size_t> evaluated_classes(const ConfusionMatrix& m) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < m.classes(); ++k) {
    if (!m.ignore_id() || k != *m.ignore_id()) out.push_back(k);
  }
  return out;
}

enum class ReportFormat { kText, kKeyValue };

/// Per-class IoU table followed by the mean. `prefix` namespaces the keys in
/// key-value mode ("<prefix>.iou.<name>=<value>").
inline void write_metrics_report(std::ostream& out, const ConfusionMatrix& m, const std::vector<std::string>& names,
                                 const std::string& prefix, ReportFormat format) {
  const auto classes = evaluated_classes(m);
  auto name_of = [&](std::size_t k) { return k < names.size() ? names[k] : "class" + std::to_string(k); };
  std::ostringstream ss;
  if (format == ReportFormat::kKeyValue) {
    ss << std::setprecision(6) << std::fixed;
    for (auto k : classes) ss << prefix << ".iou." << name_of(k) << '=' << iou(m, k) << '\n';
    ss << prefix << ".miou=" << miou(m, classes) << '\n';
    ss << prefix << ".points=" << m.total() << '\n';
  } else {
    ss << prefix << " (" << m.total() << " points)\n";
    ss << "  " << std::left << std::setw(24) << "class" << std::right << std::setw(10) << "IoU [%]" << '\n';
    ss << std::fixed << std::setprecision(2);
    for (auto k : classes) {
      ss << "  " << std::left << std::setw(24) << name_of(k) << std::right << std::setw(10) << 100.0 * iou(m, k)
         << '\n';
    }
    ss << "  " << std::left << std::setw(24) << "mIoU" << std::right << std::setw(10) << 100.0 * miou(m, classes)
       << '\n';
  }
  out << ss.str();
}

}  // namespace seg4d
