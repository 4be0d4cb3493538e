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
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "seg4d/class_table.hpp"
#include "seg4d/types.hpp"

namespace seg4d {

/// Maps any angle onto [-pi/2, pi/2); a box yaw is only defined modulo pi.
inline double canonical_yaw(double yaw) {
  constexpr double pi = std::numbers::pi;
  double y = std::fmod(yaw + pi / 2.0, pi);
  if (y < 0) y += pi;
  y -= pi / 2.0;
  return y >= pi / 2.0 ? y - pi : y;
}

/// Smallest |a - b| modulo pi.
inline double yaw_distance(double a, double b) {
  constexpr double pi = std::numbers::pi;
  double d = std::fmod(std::abs(a - b), pi);
  return std::min(d, pi - d);
}

struct Cluster {
  std::vector<std::size_t> indices;  // ascending, into the source cloud
  std::uint16_t class_id = 0;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
};

struct OrientedBox {
  std::uint32_t id = 0;
  std::uint16_t class_id = 0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d dims = Eigen::Vector3d::Ones();  // length (along yaw), width, height
  double yaw = 0.0;
  double confidence = 1.0;
};

struct InstanceSet {
  std::size_t frame = 0;
  std::vector<OrientedBox> boxes;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
};

struct InstanceConfig {
  double radius = 0.5;
  std::size_t min_points_vehicle = 10;
  std::size_t min_points_small = 5;  // person-scale classes
  double min_extent = 0.05;          // floor for every box dimension
  double degenerate_ratio = 1.2;
  double lshape_step_deg = 1.0;
};

/// Connected components of the radius graph over `points[eligible]`;
/// components smaller than `min_points` are dropped.
inline std::vector<Cluster> euclidean_cluster(const std::vector<Eigen::Vector3d>& points,
                                              const std::vector<std::size_t>& eligible, double radius,
                                              std::size_t min_points) {
  if (!(radius > 0.0)) throw ContractError("euclidean_cluster: radius must be positive");
  if (min_points < 1) throw ContractError("euclidean_cluster: min_points must be at least 1");

  auto key_of = [radius](const Eigen::Vector3d& p) {
    return Eigen::Vector3i(static_cast<int>(std::floor(p.x() / radius)), static_cast<int>(std::floor(p.y() / radius)),
                           static_cast<int>(std::floor(p.z() / radius)));
  };
  auto hash = [](const Eigen::Vector3i& k) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.x())) * 73856093ull) ^
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.y())) * 19349663ull) ^
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.z())) * 83492791ull);
  };
  struct Bucket {
    Eigen::Vector3i key;
    std::vector<std::size_t> members;  // positions in `eligible`
  };
  std::unordered_map<std::uint64_t, std::vector<Bucket>> grid;
  std::vector<Eigen::Vector3i> keys(eligible.size());
  for (std::size_t e = 0; e < eligible.size(); ++e) {
    keys[e] = key_of(points[eligible[e]]);
    auto& chain = grid[hash(keys[e])];
    auto it = std::find_if(chain.begin(), chain.end(), [&](const Bucket& b) { return b.key == keys[e]; });
    if (it == chain.end()) {
      chain.push_back({keys[e], {}});
      it = std::prev(chain.end());
    }
    it->members.push_back(e);
  }
  auto bucket = [&](const Eigen::Vector3i& k) -> const std::vector<std::size_t>* {
    auto it = grid.find(hash(k));
    if (it == grid.end()) return nullptr;
    for (const auto& b : it->second) {
      if (b.key == k) return &b.members;
    }
    return nullptr;
  };

  const double r2 = radius * radius;
  std::vector<std::uint8_t> visited(eligible.size(), 0);
  std::vector<Cluster> clusters;
  std::vector<std::size_t> frontier;
  for (std::size_t seed = 0; seed < eligible.size(); ++seed) {
    if (visited[seed]) continue;
    visited[seed] = 1;
    frontier.assign(1, seed);
    std::vector<std::size_t> members;
    while (!frontier.empty()) {
      const std::size_t e = frontier.back();
      frontier.pop_back();
      members.push_back(e);
      const Eigen::Vector3d& p = points[eligible[e]];
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dz = -1; dz <= 1; ++dz) {
            const auto* cell = bucket(keys[e] + Eigen::Vector3i(dx, dy, dz));
            if (!cell) continue;
            for (std::size_t n : *cell) {
              if (visited[n]) continue;
              if ((points[eligible[n]] - p).squaredNorm() <= r2) {
                visited[n] = 1;
                frontier.push_back(n);
              }
            }
          }
        }
      }
    }
    if (members.size() < min_points) continue;
    Cluster c;
    c.indices.reserve(members.size());
    for (std::size_t e : members) c.indices.push_back(eligible[e]);
    std::sort(c.indices.begin(), c.indices.end());
    for (std::size_t i : c.indices) c.centroid += points[i];
    c.centroid /= static_cast<double>(c.indices.size());
    clusters.push_back(std::move(c));
  }
  return clusters;
}

inline std::vector<Eigen::Vector3d> to_vectors(const PointCloud& cloud) {
  std::vector<Eigen::Vector3d> out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) out[i] = {cloud[i].x, cloud[i].y, cloud[i].z};
  return out;
}

struct YawEstimate {
  double yaw = 0.0;
  bool degenerate = true;
};

/// Orientation of the dominant principal axis of the xy footprint.
inline YawEstimate pca_yaw(const std::vector<Eigen::Vector2d>& xy, double degenerate_ratio = 1.2) {
  if (xy.size() < 2) return {};
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : xy) mean += p;
  mean /= static_cast<double>(xy.size());
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& p : xy) {
    const Eigen::Vector2d d = p - mean;
    sxx += d.x() * d.x();
    syy += d.y() * d.y();
    sxy += d.x() * d.y();
  }
  const double n = static_cast<double>(xy.size());
  sxx /= n;
  syy /= n;
  sxy /= n;
  const double mid = 0.5 * (sxx + syy);
  const double rad = std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
  const double major = mid + rad;
  const double minor = mid - rad;
  YawEstimate est;
  est.yaw = canonical_yaw(0.5 * std::atan2(2.0 * sxy, sxx - syy));
  // major/minor < ratio, written without dividing by a zero minor eigenvalue.
  est.degenerate = !(major > 0.0) || major < degenerate_ratio * minor;
  if (est.degenerate) est.yaw = 0.0;
  return est;
}

/// Tightest box at `yaw` around the points: xy rectangle in the rotated frame
/// plus the full z range. Dimensions are floored at `min_extent`.
inline OrientedBox fit_box(const std::vector<Eigen::Vector3d>& pts, double yaw, double min_extent = 0.05) {
  OrientedBox box;
  box.yaw = canonical_yaw(yaw);
  if (pts.empty()) {
    box.dims.setConstant(min_extent);
    return box;
  }
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& p : pts) {
    const Eigen::Vector3d q(c * p.x() + s * p.y(), -s * p.x() + c * p.y(), p.z());
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  const Eigen::Vector3d mid = 0.5 * (lo + hi);
  box.center = {c * mid.x() - s * mid.y(), s * mid.x() + c * mid.y(), mid.z()};
  box.dims = (hi - lo).cwiseMax(min_extent);
  return box;
}

namespace detail {

inline double closeness_score(const std::vector<Eigen::Vector2d>& xy, double theta) {
  constexpr double kMinDistance = 0.01;
  const double c = std::cos(theta), s = std::sin(theta);
  double min1 = std::numeric_limits<double>::infinity(), max1 = -min1, min2 = min1, max2 = -min1;
  for (const auto& p : xy) {
    const double a = c * p.x() + s * p.y();
    const double b = -s * p.x() + c * p.y();
    min1 = std::min(min1, a);
    max1 = std::max(max1, a);
    min2 = std::min(min2, b);
    max2 = std::max(max2, b);
  }
  double score = 0.0;
  for (const auto& p : xy) {
    const double a = c * p.x() + s * p.y();
    const double b = -s * p.x() + c * p.y();
    const double d1 = std::min(max1 - a, a - min1);
    const double d2 = std::min(max2 - b, b - min2);
    score += 1.0 / std::max(std::min(d1, d2), kMinDistance);
  }
  return score;
}

}  // namespace detail

/// Yaw of the best closeness-criterion rectangle over an exhaustive sweep of
/// [-pi/2, pi/2). The first maximum wins.
inline double lshape_search(const std::vector<Eigen::Vector2d>& xy, double step_deg = 1.0) {
  constexpr double pi = std::numbers::pi;
  const int steps = static_cast<int>(std::lround(180.0 / step_deg));
  double best_theta = -pi / 2.0;
  double best = -1.0;
  for (int k = 0; k < steps; ++k) {
    const double theta = -pi / 2.0 + k * step_deg * pi / 180.0;
    const double score = detail::closeness_score(xy, theta);
    if (score > best) {
      best = score;
      best_theta = theta;
    }
  }
  return best_theta;
}

/// Replaces the yaw of `initial` by the L-shape estimate and refits. Clusters of
/// fewer than five points are returned unchanged. Yaw ends up along the longer side.
inline OrientedBox lshape_refine(const std::vector<Eigen::Vector3d>& pts, const OrientedBox& initial,
                                 const InstanceConfig& config = {}) {
  if (pts.size() < 5) return initial;
  std::vector<Eigen::Vector2d> xy(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) xy[i] = pts[i].head<2>();
  double yaw = lshape_search(xy, config.lshape_step_deg);
  OrientedBox box = fit_box(pts, yaw, config.min_extent);
  if (box.dims.y() > box.dims.x()) {
    box = fit_box(pts, yaw + std::numbers::pi / 2.0, config.min_extent);
  }
  box.id = initial.id;
  box.class_id = initial.class_id;
  box.confidence = initial.confidence;
  return box;
}

inline std::size_t min_points_for(const ClassTable& table, std::uint16_t class_id, const InstanceConfig& config) {
  return table.is_vehicle(class_id) ? config.min_points_vehicle : config.min_points_small;
}

/// Boxes for every movable class: cluster, PCA yaw, min box, L-shape refinement.
inline InstanceSet generate_instances(const PointCloud& cloud, const ClassLabels& semantic, const ClassTable& table,
                                      const InstanceConfig& config = {}, std::size_t frame = 0) {
  if (semantic.size() != cloud.size()) throw ContractError("generate_instances: labels not aligned with cloud");
  const auto points = to_vectors(cloud);
  InstanceSet out;
  out.frame = frame;
  std::uint32_t next_id = 1;
  for (std::uint16_t cls : table.movable_classes()) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < semantic.size(); ++i) {
      if (semantic[i] == cls) eligible.push_back(i);
    }
    if (eligible.empty()) continue;
    auto clusters = euclidean_cluster(points, eligible, config.radius, min_points_for(table, cls, config));
    for (auto& cluster : clusters) {
      cluster.class_id = cls;
      std::vector<Eigen::Vector3d> pts;
      std::vector<Eigen::Vector2d> xy;
      pts.reserve(cluster.indices.size());
      for (std::size_t i : cluster.indices) {
        pts.push_back(points[i]);
        xy.push_back(points[i].head<2>());
      }
      const auto yaw = pca_yaw(xy, config.degenerate_ratio);
      OrientedBox box = fit_box(pts, yaw.degenerate ? 0.0 : yaw.yaw, config.min_extent);
      box.id = next_id++;
      box.class_id = cls;
      box.confidence = 1.0;
      out.boxes.push_back(lshape_refine(pts, box, config));
    }
  }
  return out;
}

inline InstanceSet generate_instances(const PointCloud& cloud, const LabelSet& labels, const ClassTable& table,
                                      const InstanceConfig& config = {}, std::size_t frame = 0) {
  ClassLabels semantic(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) semantic[i] = table.decode(labels.semantic[i]).class_id;
  return generate_instances(cloud, semantic, table, config, frame);
}

inline bool point_in_box(const Eigen::Vector3d& p, const OrientedBox& box, double margin = 0.0) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Eigen::Vector3d d = p - box.center;
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  const Eigen::Vector3d half = 0.5 * box.dims + Eigen::Vector3d::Constant(margin);
  return std::abs(lx) <= half.x() && std::abs(ly) <= half.y() && std::abs(d.z()) <= half.z();
}

/// Instance feature mask: 1 where the point lies inside the box grown by `margin`.
inline std::vector<std::uint8_t> points_in_box(const PointCloud& cloud, const OrientedBox& box, double margin = 0.0) {
  if (margin < 0.0) throw ContractError("points_in_box: margin must be non-negative");
  std::vector<std::uint8_t> mask(cloud.size(), 0);
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Eigen::Vector3d half = 0.5 * box.dims + Eigen::Vector3d::Constant(margin);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double dx = cloud[i].x - box.center.x();
    const double dy = cloud[i].y - box.center.y();
    const double dz = cloud[i].z - box.center.z();
    if (std::abs(dz) > half.z()) continue;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    mask[i] = std::abs(lx) <= half.x() && std::abs(ly) <= half.y();
  }
  return mask;
}

/// Indices of the points inside the box grown by `margin`, ascending. Same
/// predicate as points_in_box.
inline std::vector<std::size_t> box_members(const PointCloud& cloud, const OrientedBox& box, double margin = 0.0) {
  if (margin < 0.0) throw ContractError("box_members: margin must be non-negative");
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Eigen::Vector3d half = 0.5 * box.dims + Eigen::Vector3d::Constant(margin);
  const double reach = half.head<2>().norm() + 1e-6;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double dx = cloud[i].x - box.center.x();
    const double dy = cloud[i].y - box.center.y();
    if (std::abs(dx) > reach || std::abs(dy) > reach) continue;
    const double dz = cloud[i].z - box.center.z();
    if (std::abs(dz) > half.z()) continue;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    if (std::abs(lx) <= half.x() && std::abs(ly) <= half.y()) out.push_back(i);
  }
  return out;
}

// Line-oriented text: "frame id class cx cy cz l w h yaw confidence".

inline void write_instances(std::ostream& out, const InstanceSet& set) {
  out.precision(9);
  for (const auto& b : set.boxes) {
    out << set.frame << ' ' << b.id << ' ' << b.class_id << ' ' << b.center.x() << ' ' << b.center.y() << ' '
        << b.center.z() << ' ' << b.dims.x() << ' ' << b.dims.y() << ' ' << b.dims.z() << ' ' << b.yaw << ' '
        << b.confidence << '\n';
  }
}

/// All frames of an instance file, keyed by frame.
inline std::map<std::size_t, InstanceSet> read_instances(std::istream& in) {
  std::map<std::size_t, InstanceSet> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::size_t frame = 0;
    OrientedBox b;
    if (!(ss >> frame >> b.id >> b.class_id >> b.center.x() >> b.center.y() >> b.center.z() >> b.dims.x() >>
          b.dims.y() >> b.dims.z() >> b.yaw >> b.confidence)) {
      throw ParseError("instance line " + std::to_string(lineno) + ": expected 11 fields");
    }
    if ((b.dims.array() <= 0).any()) throw ParseError("instance line " + std::to_string(lineno) + ": dims must be positive");
    if (b.confidence < 0.0 || b.confidence > 1.0) {
      throw ParseError("instance line " + std::to_string(lineno) + ": confidence outside [0, 1]");
    }
    auto& set = out[frame];
    set.frame = frame;
    for (const auto& other : set.boxes) {
      if (other.id == b.id) {
        throw ParseError("instance line " + std::to_string(lineno) + ": duplicate id " + std::to_string(b.id) +
                         " in frame " + std::to_string(frame));
      }
    }
    set.boxes.push_back(b);
  }
  return out;
}

}  // namespace seg4d
