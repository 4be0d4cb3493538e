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
#include <optional>
#include <string>
#include <vector>

#include "seg4d/dataset_io.hpp"
#include "seg4d/matrix_io.hpp"
#include "seg4d/types.hpp"

namespace seg4d {

/// BEV window and resolution. H counts cells along x (index u), W along y (index v).
struct EncoderParams {
  double x_min = -60.0, x_max = 60.0;
  double y_min = -50.0, y_max = 50.0;
  double z_min = -4.0, z_max = 2.0;
  double resolution = 0.1;  // g, meters per cell
  std::size_t window = 3;   // N

  std::size_t height() const { return cells(x_max - x_min); }
  std::size_t width() const { return cells(y_max - y_min); }
  double z_span() const { return z_max - z_min; }

  void validate() const {
    if (!(x_max > x_min) || !(y_max > y_min) || !(z_max > z_min)) {
      throw ContractError("encoder range must have max > min on every axis");
    }
    if (!(resolution > 0.0)) throw ContractError("grid resolution must be positive");
    if (window < 2) throw ContractError("motion encoding needs a window of at least 2 scans");
  }

 private:
  std::size_t cells(double extent) const {
    // Tolerate representation error so that 120 / 0.1 yields 1200, not 1201.
    return static_cast<std::size_t>(std::ceil(extent / resolution - 1e-9));
  }
};

struct PillarIndex {
  std::size_t u = 0;
  std::size_t v = 0;

  friend bool operator==(const PillarIndex&, const PillarIndex&) = default;
};

/// Pillar of (x, y, z), or nullopt when the point lies outside the window.
inline std::optional<PillarIndex> pillar_index(double x, double y, double z, const EncoderParams& params) {
  if (!(x >= params.x_min && x <= params.x_max && y >= params.y_min && y <= params.y_max && z >= params.z_min &&
        z <= params.z_max)) {
    return std::nullopt;
  }
  const auto h = params.height();
  const auto w = params.width();
  // x == x_max falls on the closing edge of the last cell.
  const auto u = std::min(static_cast<std::size_t>(std::floor((x - params.x_min) / params.resolution)), h - 1);
  const auto v = std::min(static_cast<std::size_t>(std::floor((y - params.y_min) / params.resolution)), w - 1);
  return PillarIndex{u, v};
}

/// Single-channel height-difference image. Unoccupied cells hold 0.
struct BevGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> occupancy;

  float at(std::size_t u, std::size_t v) const { return values[u * width + v]; }
  bool occupied(std::size_t u, std::size_t v) const { return occupancy[u * width + v] != 0; }
};

/// Per-cell max z - min z over the points inside the window.
inline BevGrid project_bev(const PointCloud& cloud, const EncoderParams& params) {
  BevGrid grid;
  grid.height = params.height();
  grid.width = params.width();
  const std::size_t cells = grid.height * grid.width;
  grid.values.assign(cells, 0.0f);
  grid.occupancy.assign(cells, 0);
  // Reuse `values` as the running minimum and a side buffer for the maximum.
  std::vector<float> zmax(cells);
  std::vector<std::size_t> touched;
  touched.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const auto idx = pillar_index(p.x, p.y, p.z, params);
    if (!idx) continue;
    const std::size_t c = idx->u * grid.width + idx->v;
    if (!grid.occupancy[c]) {
      grid.occupancy[c] = 1;
      grid.values[c] = p.z;
      zmax[c] = p.z;
      touched.push_back(c);
    } else {
      grid.values[c] = std::min(grid.values[c], p.z);
      zmax[c] = std::max(zmax[c], p.z);
    }
  }
  for (std::size_t c : touched) grid.values[c] = zmax[c] - grid.values[c];
  return grid;
}

/// H x W x (N-1) signed residuals stored cell-major: value(u, v, j) at
/// ((u * W + v) * depth + j), with j = 0 holding B_0 - B_1.
struct ResidualStack {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t depth = 0;
  std::vector<float> values;

  float at(std::size_t u, std::size_t v, std::size_t j) const { return values[(u * width + v) * depth + j]; }

  std::vector<float> slice(std::size_t j) const {
    std::vector<float> out(height * width);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = values[c * depth + j];
    return out;
  }
};

/// R_j = B_0 - B_j for every past grid.
inline ResidualStack compute_residuals(const BevGrid& current, const std::vector<BevGrid>& past) {
  ResidualStack stack;
  stack.height = current.height;
  stack.width = current.width;
  stack.depth = past.size();
  for (const auto& b : past) {
    if (b.height != current.height || b.width != current.width) {
      throw ContractError("compute_residuals: BEV grids differ in size");
    }
  }
  const std::size_t cells = current.height * current.width;
  stack.values.resize(cells * stack.depth);
  std::vector<const float*> past_values;
  for (const auto& b : past) past_values.push_back(b.values.data());
  float* dst = stack.values.data();
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t j = 0; j < stack.depth; ++j) *dst++ = current.values[c] - past_values[j][c];
  }
  return stack;
}

/// Per-point residual rows, M x (N-1), plus an in-window flag per point.
struct MotionFeatures {
  RowMatrix<float> values;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
};

/// Columns [x, y, z, intensity, r_1 .. r_{N-1}].
struct AugmentedFeatures {
  RowMatrix<float> values;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t residual_channels() const { return values.cols() >= 4 ? static_cast<std::size_t>(values.cols() - 4) : 0; }

  std::vector<std::string> column_names() const {
    std::vector<std::string> out = {"x", "y", "z", "intensity"};
    for (std::size_t j = 1; j <= residual_channels(); ++j) out.push_back("r" + std::to_string(j));
    return out;
  }
};

inline MotionFeatures back_project(const ResidualStack& stack, const PointCloud& current,
                                   const EncoderParams& params) {
  if (stack.height != params.height() || stack.width != params.width()) {
    throw ContractError("back_project: residual stack was built with different parameters");
  }
  MotionFeatures out;
  out.values = RowMatrix<float>::Zero(static_cast<Eigen::Index>(current.size()), static_cast<Eigen::Index>(stack.depth));
  out.valid.assign(current.size(), 0);
  for (std::size_t i = 0; i < current.size(); ++i) {
    const auto& p = current.points[i];
    const auto idx = pillar_index(p.x, p.y, p.z, params);
    if (!idx) continue;
    out.valid[i] = 1;
    const float* src = &stack.values[(idx->u * stack.width + idx->v) * stack.depth];
    for (std::size_t j = 0; j < stack.depth; ++j) out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = src[j];
  }
  return out;
}

/// p -> R p + t in double precision; intensity and order are preserved.
inline PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
  if (!pose.is_valid()) throw ContractError("transform_cloud: pose rotation is not orthonormal");
  PointCloud out;
  out.points.resize(cloud.size());
  const Eigen::Matrix3d& r = pose.rotation();
  const Eigen::Vector3d& t = pose.translation();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const Eigen::Vector3d q = r * Eigen::Vector3d(p.x, p.y, p.z) + t;
    out.points[i] = {static_cast<float>(q.x()), static_cast<float>(q.y()), static_cast<float>(q.z()), p.intensity};
  }
  return out;
}

inline AugmentedFeatures assemble_features(const PointCloud& current, const MotionFeatures& motion) {
  if (motion.size() != current.size()) throw ContractError("assemble_features: row count mismatch");
  AugmentedFeatures f;
  const auto depth = motion.values.cols();
  f.values.resize(static_cast<Eigen::Index>(current.size()), 4 + depth);
  for (std::size_t i = 0; i < current.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto& p = current.points[i];
    f.values(r, 0) = p.x;
    f.values(r, 1) = p.y;
    f.values(r, 2) = p.z;
    f.values(r, 3) = p.intensity;
  }
  if (depth > 0) f.values.rightCols(depth) = motion.values;
  return f;
}

struct EncodedScan {
  MotionFeatures motion;
  AugmentedFeatures features;
  std::vector<BevGrid> bev;  // B_0 .. B_{N-1}
  ResidualStack residuals;
};

/// Aligns every past scan into the current frame, projects all scans to BEV,
/// takes residuals against the current image and back-projects them.
inline EncodedScan encode_motion_full(const ScanSequence& seq, const EncoderParams& params) {
  params.validate();
  seq.validate();
  if (seq.window() < 2) throw ContractError("encode_motion: need at least 2 scans, got " + std::to_string(seq.window()));
  EncodedScan out;
  out.bev.reserve(seq.window());
  out.bev.push_back(project_bev(seq.scans[0], params));
  Pose to_current;
  for (std::size_t j = 1; j < seq.window(); ++j) {
    to_current = to_current * seq.relatives[j - 1];
    out.bev.push_back(project_bev(transform_cloud(seq.scans[j], to_current), params));
  }
  std::vector<BevGrid> past(std::make_move_iterator(out.bev.begin() + 1), std::make_move_iterator(out.bev.end()));
  out.residuals = compute_residuals(out.bev[0], past);
  std::move(past.begin(), past.end(), out.bev.begin() + 1);
  out.motion = back_project(out.residuals, seq.scans[0], params);
  out.features = assemble_features(seq.scans[0], out.motion);
  return out;
}

inline std::pair<MotionFeatures, AugmentedFeatures> encode_motion(const ScanSequence& seq,
                                                                  const EncoderParams& params) {
  auto full = encode_motion_full(seq, params);
  return {std::move(full.motion), std::move(full.features)};
}

// Debug exports. BEV images map [0, z_span] to [0, 255]; residual images map
// [-z_span, z_span] to [0, 255] with 0 m at 127.5 (rounded).

inline void write_pgm(const std::string& path, std::size_t height, std::size_t width,
                      const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  // Rows are u (x), columns are v (y).
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

inline void export_bev_pgm(const BevGrid& grid, const EncoderParams& params, const std::string& path) {
  std::vector<std::uint8_t> px(grid.values.size());
  for (std::size_t c = 0; c < px.size(); ++c) {
    const double s = std::clamp(grid.values[c] / params.z_span(), 0.0, 1.0);
    px[c] = static_cast<std::uint8_t>(std::lround(s * 255.0));
  }
  write_pgm(path, grid.height, grid.width, px);
}

inline void export_residual_pgm(const ResidualStack& stack, std::size_t j, const EncoderParams& params,
                                const std::string& path) {
  const auto slice = stack.slice(j);
  std::vector<std::uint8_t> px(slice.size());
  for (std::size_t c = 0; c < px.size(); ++c) {
    const double s = std::clamp((slice[c] / params.z_span() + 1.0) / 2.0, 0.0, 1.0);
    px[c] = static_cast<std::uint8_t>(std::lround(s * 255.0));
  }
  write_pgm(path, stack.height, stack.width, px);
}

inline void export_features(const AugmentedFeatures& features, const std::string& path) {
  write_matrix(path, features.values, features.column_names());
}

}  // namespace seg4d
