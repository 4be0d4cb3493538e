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
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "seg4d/instance_labels.hpp"
#include "seg4d/matrix_io.hpp"
#include "seg4d/motion_encoding.hpp"
#include "seg4d/types.hpp"

namespace seg4d {

/// Output of the two prediction heads: M x 3 motion scores over
/// {unlabeled, static, moving} and M x C static semantic scores.
struct PredictorOutput {
  RowMatrix<double> motion;
  RowMatrix<double> semantic;
  std::optional<InstanceSet> instances;
};

/// Shape and finiteness contract every predictor must meet.
inline void check_predictor_output(const PredictorOutput& out, std::size_t rows, std::size_t semantic_classes) {
  const auto m = static_cast<Eigen::Index>(rows);
  if (out.motion.rows() != m || out.motion.cols() != kMotionClasses) {
    throw ContractError("predictor: motion logits must be " + std::to_string(rows) + "x3, got " +
                        std::to_string(out.motion.rows()) + "x" + std::to_string(out.motion.cols()));
  }
  if (out.semantic.rows() != m || out.semantic.cols() != static_cast<Eigen::Index>(semantic_classes)) {
    throw ContractError("predictor: semantic logits must be " + std::to_string(rows) + "x" +
                        std::to_string(semantic_classes) + ", got " + std::to_string(out.semantic.rows()) + "x" +
                        std::to_string(out.semantic.cols()));
  }
  if (!out.motion.allFinite() || !out.semantic.allFinite()) throw ContractError("predictor: non-finite logits");
}

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual PredictorOutput predict(const AugmentedFeatures& features, const InstanceSet& instances) const = 0;
};

/// Row-wise argmax; ties go to the lowest class index.
template <typename Derived>
std::vector<std::uint16_t> logits_to_labels(const Eigen::MatrixBase<Derived>& logits) {
  std::vector<std::uint16_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<std::uint16_t>(best);
  }
  return out;
}

template <typename Derived>
MotionLabels motion_labels_from_logits(const Eigen::MatrixBase<Derived>& logits) {
  const auto wide = logits_to_labels(logits);
  return MotionLabels(wide.begin(), wide.end());
}

/// Row-wise numerically stable softmax.
template <typename Scalar>
RowMatrix<Scalar> softmax_rows(const RowMatrix<Scalar>& logits) {
  RowMatrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

inline PointCloud cloud_from_features(const AugmentedFeatures& f) {
  PointCloud cloud;
  cloud.points.resize(f.size());
  for (Eigen::Index r = 0; r < f.values.rows(); ++r) {
    cloud.points[static_cast<std::size_t>(r)] = {f.values(r, 0), f.values(r, 1), f.values(r, 2), f.values(r, 3)};
  }
  return cloud;
}

/// 1 where a point lies inside any box.
inline std::vector<std::uint8_t> instance_union_mask(const PointCloud& cloud, const InstanceSet& instances) {
  std::vector<std::uint8_t> any(cloud.size(), 0);
  for (const auto& box : instances.boxes) {
    const auto mask = points_in_box(cloud, box);
    for (std::size_t i = 0; i < any.size(); ++i) any[i] |= mask[i];
  }
  return any;
}

inline RowMatrix<double> one_hot_logits(const std::vector<std::uint16_t>& labels, std::size_t classes) {
  RowMatrix<double> out = RowMatrix<double>::Zero(static_cast<Eigen::Index>(labels.size()),
                                                  static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ContractError("label " + std::to_string(labels[i]) + " outside logit width");
    out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return out;
}

/// Rule-based stand-in for the learned backbone: a point is moving when its
/// largest |residual| reaches `threshold` and it sits inside an instance box.
/// Semantic scores are one-hot from `semantic_source` when given, else uniform.
inline PredictorOutput heuristic_predict(const AugmentedFeatures& features, const InstanceSet& instances,
                                         double threshold, std::size_t semantic_classes,
                                         const ClassLabels* semantic_source = nullptr) {
  if (!(threshold > 0.0)) throw ContractError("heuristic_predict: residual threshold must be positive");
  const auto m = static_cast<Eigen::Index>(features.size());
  const auto cloud = cloud_from_features(features);
  const auto in_box = instance_union_mask(cloud, instances);
  const auto channels = static_cast<Eigen::Index>(features.residual_channels());

  PredictorOutput out;
  out.motion.resize(m, kMotionClasses);
  for (Eigen::Index r = 0; r < m; ++r) {
    double score = 0.0;
    for (Eigen::Index j = 0; j < channels; ++j) score = std::max(score, std::abs(static_cast<double>(features.values(r, 4 + j))));
    const bool moving = score >= threshold && in_box[static_cast<std::size_t>(r)];
    out.motion.row(r) << -1.0, moving ? -1.0 : 1.0, moving ? 1.0 : -1.0;
  }
  if (semantic_source) {
    if (semantic_source->size() != features.size()) throw ContractError("heuristic_predict: semantic source length mismatch");
    out.semantic = one_hot_logits(*semantic_source, semantic_classes);
  } else {
    out.semantic = RowMatrix<double>::Zero(m, static_cast<Eigen::Index>(semantic_classes));
  }
  return out;
}

class HeuristicPredictor : public Predictor {
 public:
  HeuristicPredictor(double threshold, std::size_t semantic_classes, std::optional<ClassLabels> semantic_source = {})
      : threshold_(threshold), classes_(semantic_classes), source_(std::move(semantic_source)) {}

  PredictorOutput predict(const AugmentedFeatures& features, const InstanceSet& instances) const override {
    return heuristic_predict(features, instances, threshold_, classes_, source_ ? &*source_ : nullptr);
  }

 private:
  double threshold_;
  std::size_t classes_;
  std::optional<ClassLabels> source_;
};

/// Replays ground truth as one-hot logits, including the unlabeled motion class.
class OraclePredictor : public Predictor {
 public:
  OraclePredictor(MotionLabels motion, ClassLabels semantic, std::size_t semantic_classes)
      : motion_(std::move(motion)), semantic_(std::move(semantic)), classes_(semantic_classes) {}

  PredictorOutput predict(const AugmentedFeatures& features, const InstanceSet&) const override {
    if (motion_.size() != features.size() || semantic_.size() != features.size()) {
      throw ContractError("oracle predictor: ground truth length differs from feature rows");
    }
    PredictorOutput out;
    out.motion = one_hot_logits(std::vector<std::uint16_t>(motion_.begin(), motion_.end()), kMotionClasses);
    out.semantic = one_hot_logits(semantic_, classes_);
    return out;
  }

 private:
  MotionLabels motion_;
  ClassLabels semantic_;
  std::size_t classes_;
};

/// Seeded random logits; a stand-in for an untrained network.
class RandomPredictor : public Predictor {
 public:
  RandomPredictor(std::uint64_t seed, std::size_t semantic_classes) : seed_(seed), classes_(semantic_classes) {}

  PredictorOutput predict(const AugmentedFeatures& features, const InstanceSet&) const override {
    std::mt19937_64 rng(seed_);
    std::normal_distribution<double> n01(0.0, 1.0);
    const auto m = static_cast<Eigen::Index>(features.size());
    PredictorOutput out;
    out.motion.resize(m, kMotionClasses);
    out.semantic.resize(m, static_cast<Eigen::Index>(classes_));
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index c = 0; c < out.motion.cols(); ++c) out.motion(r, c) = n01(rng);
      for (Eigen::Index c = 0; c < out.semantic.cols(); ++c) out.semantic(r, c) = n01(rng);
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  std::size_t classes_;
};

/// Logits file layout: columns [m_unlabeled, m_static, m_moving, s_0 .. s_{C-1}].
inline std::vector<std::string> logits_column_names(std::size_t semantic_classes) {
  std::vector<std::string> names = {"m_unlabeled", "m_static", "m_moving"};
  for (std::size_t c = 0; c < semantic_classes; ++c) names.push_back("s_" + std::to_string(c));
  return names;
}

inline void write_logits(const std::string& path, const PredictorOutput& out) {
  RowMatrix<double> joined(out.motion.rows(), out.motion.cols() + out.semantic.cols());
  joined << out.motion, out.semantic;
  write_matrix(path, joined, logits_column_names(static_cast<std::size_t>(out.semantic.cols())),
               MatrixDtype::kFloat64);
}

inline PredictorOutput read_logits(const std::string& path) {
  auto m = read_matrix(path);
  if (m.values.cols() < kMotionClasses) throw ParseError(path + ": logits need at least 3 columns");
  PredictorOutput out;
  out.motion = m.values.leftCols(kMotionClasses);
  out.semantic = m.values.rightCols(m.values.cols() - kMotionClasses);
  return out;
}

/// Runs an external program per frame. `command` may contain {features} and
/// {logits}; they are replaced with the paths of the F_sp matrix written for
/// the program and the logits matrix it must produce.
class ExternalPredictor : public Predictor {
 public:
  ExternalPredictor(std::string command, std::filesystem::path scratch, std::size_t semantic_classes)
      : command_(std::move(command)), scratch_(std::move(scratch)), classes_(semantic_classes) {}

  PredictorOutput predict(const AugmentedFeatures& features, const InstanceSet&) const override {
    std::filesystem::create_directories(scratch_);
    const auto in_path = (scratch_ / "features.mat").string();
    const auto out_path = (scratch_ / "logits.mat").string();
    std::filesystem::remove(out_path);
    export_features(features, in_path);
    std::string cmd = command_;
    replace_all(cmd, "{features}", in_path);
    replace_all(cmd, "{logits}", out_path);
    if (std::system(cmd.c_str()) != 0) throw Error("external predictor failed: " + cmd);
    auto out = read_logits(out_path);
    check_predictor_output(out, features.size(), classes_);
    return out;
  }

 private:
  static void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
      s.replace(pos, from.size(), to);
    }
  }

  std::string command_;
  std::filesystem::path scratch_;
  std::size_t classes_;
};

}  // namespace seg4d
