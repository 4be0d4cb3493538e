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
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "seg4d/types.hpp"

namespace seg4d {

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t load_le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void store_le32(std::uint32_t v, unsigned char* p) {
  p[0] = static_cast<unsigned char>(v & 0xff);
  p[1] = static_cast<unsigned char>((v >> 8) & 0xff);
  p[2] = static_cast<unsigned char>((v >> 16) & 0xff);
  p[3] = static_cast<unsigned char>((v >> 24) & 0xff);
}

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

/// Nearest rotation in the Frobenius sense; rejects matrices far from SO(3).
inline Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m, double tol, const std::string& what) {
  if (std::abs(m.determinant()) < 1e-9) throw ParseError(what + ": rotation block is singular");
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) throw ParseError(what + ": rotation block is a reflection");
  if ((r - m).cwiseAbs().maxCoeff() > tol) throw ParseError(what + ": rotation block is not orthonormal");
  return r;
}

inline Pose parse_pose_row(std::istream& in, const std::string& what) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (!(in >> m(r, c))) throw ParseError(what + ": expected 12 numbers");
    }
  }
  std::string extra;
  if (in >> extra) throw ParseError(what + ": more than 12 numbers");
  return {project_to_rotation(m.topLeftCorner<3, 3>(), 1e-3, what), m.topRightCorner<3, 1>()};
}

}  // namespace detail

inline constexpr std::size_t kPointRecordBytes = 16;
inline constexpr std::size_t kLabelRecordBytes = 4;

/// KITTI velodyne scan: consecutive little-endian float32 (x, y, z, intensity).
inline PointCloud read_point_cloud(const std::string& path) {
  const auto bytes = detail::read_bytes(path);
  if (bytes.size() % kPointRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kPointRecordBytes;
    throw ParseError(path + ": truncated record at byte offset " + std::to_string(offset));
  }
  PointCloud cloud;
  cloud.points.resize(bytes.size() / kPointRecordBytes);
  const unsigned char* p = bytes.data();
  for (auto& pt : cloud.points) {
    pt.x = std::bit_cast<float>(detail::load_le32(p));
    pt.y = std::bit_cast<float>(detail::load_le32(p + 4));
    pt.z = std::bit_cast<float>(detail::load_le32(p + 8));
    pt.intensity = std::bit_cast<float>(detail::load_le32(p + 12));
    p += kPointRecordBytes;
  }
  return cloud;
}

inline void write_point_cloud(const PointCloud& cloud, const std::string& path) {
  std::vector<unsigned char> bytes(cloud.size() * kPointRecordBytes);
  unsigned char* p = bytes.data();
  for (const auto& pt : cloud.points) {
    detail::store_le32(std::bit_cast<std::uint32_t>(pt.x), p);
    detail::store_le32(std::bit_cast<std::uint32_t>(pt.y), p + 4);
    detail::store_le32(std::bit_cast<std::uint32_t>(pt.z), p + 8);
    detail::store_le32(std::bit_cast<std::uint32_t>(pt.intensity), p + 12);
    p += kPointRecordBytes;
  }
  detail::write_bytes(path, bytes);
}

/// Raw 32-bit little-endian records, one per point.
inline std::vector<std::uint32_t> read_label_records(const std::string& path) {
  const auto bytes = detail::read_bytes(path);
  if (bytes.size() % kLabelRecordBytes != 0) {
    throw ParseError(path + ": truncated label record at byte offset " +
                     std::to_string(bytes.size() - bytes.size() % kLabelRecordBytes));
  }
  std::vector<std::uint32_t> out(bytes.size() / kLabelRecordBytes);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::load_le32(bytes.data() + i * 4);
  return out;
}

inline void write_label_records(const std::vector<std::uint32_t>& records, const std::string& path) {
  std::vector<unsigned char> bytes(records.size() * kLabelRecordBytes);
  for (std::size_t i = 0; i < records.size(); ++i) detail::store_le32(records[i], bytes.data() + i * 4);
  detail::write_bytes(path, bytes);
}

inline LabelSet decode_labels(const std::vector<std::uint32_t>& records) {
  LabelSet labels;
  labels.semantic.resize(records.size());
  labels.instance.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    labels.semantic[i] = static_cast<std::uint16_t>(records[i] & 0xFFFFu);
    labels.instance[i] = static_cast<std::uint16_t>(records[i] >> 16);
  }
  return labels;
}

inline LabelSet read_labels(const std::string& path, std::size_t expected_count) {
  auto records = read_label_records(path);
  if (records.size() != expected_count) {
    throw ParseError(path + ": label count " + std::to_string(records.size()) + " does not match " +
                     std::to_string(expected_count) + " points");
  }
  return decode_labels(records);
}

inline void write_labels(const LabelSet& labels, const std::string& path) {
  if (labels.instance.size() != labels.semantic.size()) throw ContractError("label arrays differ in length");
  std::vector<std::uint32_t> records(labels.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i] = static_cast<std::uint32_t>(labels.semantic[i]) |
                 (static_cast<std::uint32_t>(labels.instance[i]) << 16);
  }
  write_label_records(records, path);
}

/// Which frame the rows of a pose file are expressed in.
enum class PoseConvention {
  kCameraFrame,  // KITTI odometry: rows are camera poses, calibration maps LiDAR -> camera
  kLidarFrame,   // rows already describe the LiDAR; calibration ignored
};

/// Reads the "Tr:" line of a KITTI calib.txt.
inline Pose read_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open calibration " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Tr:", 0) == 0) {
      std::istringstream ss(line.substr(3));
      return detail::parse_pose_row(ss, path + " Tr");
    }
  }
  throw ParseError(path + ": no 'Tr:' line");
}

inline std::vector<Pose> read_pose_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open poses " + path);
  std::vector<Pose> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    rows.push_back(detail::parse_pose_row(ss, path + ":" + std::to_string(lineno)));
  }
  return rows;
}

inline void write_pose_rows(const std::vector<Pose>& poses, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  for (const auto& p : poses) {
    const Eigen::Matrix4d m = p.matrix();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) out << m(r, c) << ((r == 2 && c == 3) ? '\n' : ' ');
    }
  }
}

/// World poses of the LiDAR for every scan. With the camera convention each row
/// is conjugated as Tr^-1 * row * Tr.
inline std::vector<Pose> load_poses(const std::string& pose_path, const std::string& calib_path,
                                    PoseConvention convention = PoseConvention::kCameraFrame) {
  auto rows = read_pose_rows(pose_path);
  if (convention == PoseConvention::kLidarFrame || calib_path.empty()) return rows;
  const Pose calib = read_calibration(calib_path);
  const Pose calib_inv = calib.inverse();
  for (auto& r : rows) r = calib_inv * r * calib;
  return rows;
}

/// T_j^0 = pose_0^-1 * pose_j for a window-ordered pose list (current scan first).
inline Pose relative_transform(const std::vector<Pose>& world_poses, std::size_t j) {
  if (j >= world_poses.size()) {
    throw ContractError("relative_transform: index " + std::to_string(j) + " out of range");
  }
  return world_poses[0].inverse() * world_poses[j];
}

/// Stepwise relatives T_j^{j-1} = pose_{j-1}^-1 * pose_j for j = 1..N-1.
inline std::vector<Pose> stepwise_relatives(const std::vector<Pose>& world_poses) {
  std::vector<Pose> out;
  for (std::size_t j = 1; j < world_poses.size(); ++j) out.push_back(world_poses[j - 1].inverse() * world_poses[j]);
  return out;
}

/// Composes T_1^0 * T_2^1 * ... * T_j^{j-1}; `steps[k]` holds T_{k+1}^k.
inline Pose chain_relatives(const std::vector<Pose>& steps, std::size_t j) {
  if (j > steps.size()) throw ContractError("chain_relatives: index out of range");
  Pose out;
  for (std::size_t k = 0; k < j; ++k) out = out * steps[k];
  return out;
}

/// Scans of one temporal window, current scan first.
struct ScanSequence {
  std::vector<PointCloud> scans;
  std::vector<Pose> relatives;  // relatives[k] = T_{k+1}^{k}
  std::vector<LabelSet> labels;  // empty or one per scan

  std::size_t window() const { return scans.size(); }

  void validate() const {
    if (scans.empty()) throw ContractError("scan sequence is empty");
    if (relatives.size() + 1 != scans.size()) {
      throw ContractError("scan sequence needs " + std::to_string(scans.size() - 1) + " relative poses, has " +
                          std::to_string(relatives.size()));
    }
    if (!labels.empty() && labels.size() != scans.size()) throw ContractError("label count differs from scan count");
  }
};

/// A KITTI-layout sequence directory:
///   velodyne/NNNNNN.bin, labels/NNNNNN.label, poses.txt, calib.txt
class SequenceDir {
 public:
  explicit SequenceDir(std::filesystem::path root, PoseConvention convention = PoseConvention::kCameraFrame)
      : root_(std::move(root)) {
    namespace fs = std::filesystem;
    const auto velo = root_ / "velodyne";
    if (!fs::is_directory(velo)) throw Error(root_.string() + ": missing velodyne/ directory");
    for (const auto& e : fs::directory_iterator(velo)) {
      if (e.path().extension() == ".bin") frames_.push_back(e.path().stem().string());
    }
    std::sort(frames_.begin(), frames_.end());

    const auto pose_path = root_ / "poses.txt";
    if (fs::exists(pose_path)) {
      const auto calib_path = root_ / "calib.txt";
      poses_ = load_poses(pose_path.string(), fs::exists(calib_path) ? calib_path.string() : std::string(),
                          convention);
      if (poses_.size() < frames_.size()) {
        throw ParseError(pose_path.string() + ": " + std::to_string(poses_.size()) + " poses for " +
                         std::to_string(frames_.size()) + " scans");
      }
    } else {
      static bool warned = false;
      if (!warned) {
        std::cerr << "seg4d: " << root_.string() << " has no poses.txt; assuming a stationary sensor\n";
        warned = true;
      }
      poses_.assign(frames_.size(), Pose::identity());
    }
  }

  std::size_t size() const { return frames_.size(); }
  const std::string& frame_name(std::size_t i) const { return frames_.at(i); }
  const std::vector<Pose>& world_poses() const { return poses_; }
  const std::filesystem::path& root() const { return root_; }

  PointCloud scan(std::size_t i) const {
    return read_point_cloud((root_ / "velodyne" / (frames_.at(i) + ".bin")).string());
  }

  bool has_labels(std::size_t i) const {
    return std::filesystem::exists(root_ / "labels" / (frames_.at(i) + ".label"));
  }

  LabelSet labels(std::size_t i, std::size_t count) const {
    return read_labels((root_ / "labels" / (frames_.at(i) + ".label")).string(), count);
  }

  /// Window ending at frame t; frames before the start of the sequence repeat frame 0.
  ScanSequence window(std::size_t t, std::size_t n, bool with_labels) const {
    if (n == 0) throw ContractError("window length must be positive");
    ScanSequence seq;
    std::vector<Pose> world;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t f = t >= j ? t - j : 0;
      seq.scans.push_back(scan(f));
      world.push_back(poses_.at(f));
      if (with_labels && has_labels(f)) seq.labels.push_back(labels(f, seq.scans.back().size()));
    }
    if (seq.labels.size() != seq.scans.size()) seq.labels.clear();
    seq.relatives = stepwise_relatives(world);
    return seq;
  }

 private:
  std::filesystem::path root_;
  std::vector<std::string> frames_;
  std::vector<Pose> poses_;
};

inline std::string frame_filename(std::size_t i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return std::string(buf) + ext;
}

}  // namespace seg4d
