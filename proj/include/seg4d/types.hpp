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
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace seg4d {

/// Base exception for every recoverable failure in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a shape or range precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

struct Point {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float intensity = 0.0f;

  friend bool operator==(const Point&, const Point&) = default;
};

/// One LiDAR scan. Storage mirrors the on-disk float32 record layout.
struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Point& operator[](std::size_t i) const { return points[i]; }
  Point& operator[](std::size_t i) { return points[i]; }

  bool all_finite() const {
    for (const auto& p : points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
          !std::isfinite(p.intensity)) {
        return false;
      }
    }
    return true;
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

/// Rigid transform p -> R p + t.
class Pose {
 public:
  Pose() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}
  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose identity() { return {}; }

  static Pose from_matrix(const Eigen::Matrix4d& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  static Pose from_yaw(double yaw, const Eigen::Vector3d& translation = Eigen::Vector3d::Zero()) {
    return {Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix(), translation};
  }

  static Pose from_translation(double x, double y, double z) {
    return {Eigen::Matrix3d::Identity(), Eigen::Vector3d(x, y, z)};
  }

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  Pose inverse() const {
    const Eigen::Matrix3d rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

  /// True when R is orthonormal with determinant +1 within `tol`.
  bool is_valid(double tol = 1e-6) const {
    if (!rotation_.allFinite() || !translation_.allFinite()) return false;
    const Eigen::Matrix3d rtr = rotation_.transpose() * rotation_;
    if ((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation_.determinant() - 1.0) <= tol;
  }

  bool is_near(const Pose& other, double tol) const {
    return (rotation_ - other.rotation_).cwiseAbs().maxCoeff() <= tol &&
           (translation_ - other.translation_).cwiseAbs().maxCoeff() <= tol;
  }

  friend Pose operator*(const Pose& a, const Pose& b) {
    return {a.rotation_ * b.rotation_, a.rotation_ * b.translation_ + a.translation_};
  }

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

/// Per-point raw label records split into semantic (low 16 bits) and instance (high 16 bits).
struct LabelSet {
  std::vector<std::uint16_t> semantic;
  std::vector<std::uint16_t> instance;

  std::size_t size() const { return semantic.size(); }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

/// Motion classes emitted by the motion head.
enum class MotionState : std::uint8_t { kUnlabeled = 0, kStatic = 1, kMoving = 2 };

inline constexpr int kMotionClasses = 3;

using MotionLabels = std::vector<std::uint8_t>;
using ClassLabels = std::vector<std::uint16_t>;

inline constexpr std::uint8_t to_id(MotionState s) { return static_cast<std::uint8_t>(s); }

}  // namespace seg4d
