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

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "seg4d/class_table.hpp"
#include "seg4d/dataset_io.hpp"
#include "seg4d/types.hpp"

namespace seg4d {

/// Flat rectangle of static points on a regular lattice.
struct SynthPlane {
  std::uint16_t class_id = 9;
  double x_min = -10, x_max = 10, y_min = -10, y_max = 10;
  double z = -1.7;
  double spacing = 0.2;
  float intensity = 0.3f;
};

/// Rigid box moving with constant per-frame velocity.
struct SynthBox {
  std::uint16_t class_id = 1;
  Eigen::Vector3d center{0, 0, 0};  // frame-0 center, world frame
  Eigen::Vector3d size{4.5, 1.8, 1.5};  // length (along yaw), width, height
  double yaw = 0.0;
  Eigen::Vector3d velocity{0, 0, 0};  // meters per frame
  double yaw_rate = 0.0;               // radians per frame
  double spacing = 0.1;
  bool solid = false;  // full lattice volume instead of side and top faces
  float intensity = 0.6f;

  bool moving() const { return velocity.norm() > 0.0 || yaw_rate != 0.0; }
};

/// Scene description. Schema (JSON):
///   { "seed": int, "frames": int, "jitter": m,
///     "ego": {"velocity": [x,y,z], "yaw_rate": rad},
///     "planes": [{"class": name, "x": [min,max], "y": [min,max], "z": m, "spacing": m}],
///     "boxes":  [{"class": name, "center": [x,y,z], "size": [l,w,h], "yaw": rad,
///                 "velocity": [x,y,z], "yaw_rate": rad, "spacing": m, "solid": bool}] }
struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t frames = 10;
  double jitter = 0.0;  // uniform lattice jitter half-width, meters
  Eigen::Vector3d ego_velocity{0, 0, 0};
  double ego_yaw_rate = 0.0;
  std::vector<SynthPlane> planes;
  std::vector<SynthBox> boxes;

  bool empty() const { return planes.empty() && boxes.empty(); }
};

struct SynthFrame {
  PointCloud cloud;
  LabelSet labels;     // raw ids, encoded through the class table
  MotionLabels motion;  // ground-truth motion state per point
  ClassLabels semantic;  // static class id per point
  Pose pose;            // LiDAR-to-world
};

namespace detail {

inline Eigen::Vector3d json_vec3(const nlohmann::json& j, const char* key, const Eigen::Vector3d& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw ParseError(std::string("synth spec: '") + key + "' must be [x,y,z]");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

inline std::uint16_t json_class(const nlohmann::json& j, const ClassTable& table) {
  const auto name = j.at("class").get<std::string>();
  for (std::uint16_t i = 0; i < table.semantic_count(); ++i) {
    if (table.info(i).name == name) return i;
  }
  throw ParseError("synth spec: unknown class '" + name + "'");
}

/// Lattice offsets covering [-half, half] with the given spacing, centered on 0.
inline std::vector<double> lattice(double half, double spacing) {
  const int n = std::max(1, static_cast<int>(std::floor(2.0 * half / spacing + 1e-9)) + 1);
  const double span = (n - 1) * spacing;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = -span / 2.0 + i * spacing;
  return out;
}

/// Box-frame sample points; identical for every frame so the object stays rigid.
inline std::vector<Eigen::Vector3d> sample_box(const SynthBox& box, double jitter, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jit(-jitter, jitter);
  const Eigen::Vector3d half = box.size / 2.0;
  const auto xs = lattice(half.x(), box.spacing);
  const auto ys = lattice(half.y(), box.spacing);
  const auto zs = lattice(half.z(), box.spacing);
  std::vector<Eigen::Vector3d> out;
  auto push = [&](double x, double y, double z) {
    if (jitter > 0.0) {
      x = std::clamp(x + jit(rng), -half.x(), half.x());
      y = std::clamp(y + jit(rng), -half.y(), half.y());
    }
    out.emplace_back(x, y, z);
  };
  if (box.solid) {
    for (double x : xs) {
      for (double y : ys) {
        for (double z : zs) push(x, y, z);
      }
    }
    return out;
  }
  // Side faces at the exact half-extents, top face inside them.
  for (double z : zs) {
    for (double x : xs) {
      push(x, -half.y(), z);
      push(x, half.y(), z);
    }
    for (double y : ys) {
      push(-half.x(), y, z);
      push(half.x(), y, z);
    }
  }
  for (double x : xs) {
    for (double y : ys) push(x, y, zs.back());
  }
  return out;
}

}  // namespace detail

inline SynthSpec parse_synth_spec(const nlohmann::json& j, const ClassTable& table) {
  SynthSpec spec;
  try {
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.frames = j.value("frames", std::size_t{10});
    spec.jitter = j.value("jitter", 0.0);
    if (j.contains("ego")) {
      spec.ego_velocity = detail::json_vec3(j["ego"], "velocity", spec.ego_velocity);
      spec.ego_yaw_rate = j["ego"].value("yaw_rate", 0.0);
    }
    for (const auto& p : j.value("planes", nlohmann::json::array())) {
      SynthPlane plane;
      plane.class_id = detail::json_class(p, table);
      plane.x_min = p.at("x")[0].get<double>();
      plane.x_max = p.at("x")[1].get<double>();
      plane.y_min = p.at("y")[0].get<double>();
      plane.y_max = p.at("y")[1].get<double>();
      plane.z = p.value("z", plane.z);
      plane.spacing = p.value("spacing", plane.spacing);
      plane.intensity = p.value("intensity", plane.intensity);
      spec.planes.push_back(plane);
    }
    for (const auto& b : j.value("boxes", nlohmann::json::array())) {
      SynthBox box;
      box.class_id = detail::json_class(b, table);
      box.center = detail::json_vec3(b, "center", box.center);
      box.size = detail::json_vec3(b, "size", box.size);
      box.yaw = b.value("yaw", 0.0);
      box.velocity = detail::json_vec3(b, "velocity", box.velocity);
      box.yaw_rate = b.value("yaw_rate", 0.0);
      box.spacing = b.value("spacing", box.spacing);
      box.solid = b.value("solid", false);
      box.intensity = b.value("intensity", box.intensity);
      spec.boxes.push_back(box);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synth spec: ") + e.what());
  }
  for (const auto& p : spec.planes) {
    if (!(p.spacing > 0) || p.x_max < p.x_min || p.y_max < p.y_min) throw ParseError("synth spec: bad plane");
  }
  for (const auto& b : spec.boxes) {
    if (!(b.spacing > 0) || (b.size.array() <= 0).any()) throw ParseError("synth spec: bad box");
  }
  return spec;
}

inline SynthSpec load_synth_spec(const std::string& path, const ClassTable& table) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open synth spec " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return parse_synth_spec(j, table);
}

/// LiDAR-to-world pose of the synthetic sensor at a frame.
inline Pose synth_ego_pose(const SynthSpec& spec, std::size_t frame) {
  const double f = static_cast<double>(frame);
  return Pose::from_yaw(spec.ego_yaw_rate * f, spec.ego_velocity * f);
}

/// World pose of box `b` at a frame.
inline Pose synth_box_pose(const SynthBox& box, std::size_t frame) {
  const double f = static_cast<double>(frame);
  return Pose::from_yaw(box.yaw + box.yaw_rate * f, box.center + box.velocity * f);
}

/// Scan at `frame_index` with exact labels. Pure in (spec, frame_index): the
/// generator is re-seeded from spec.seed on every call.
inline SynthFrame synth_scene(const SynthSpec& spec, std::size_t frame_index, const ClassTable& table) {
  if (spec.empty()) throw ContractError("synth_scene: spec has no planes and no boxes");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> jit(-spec.jitter, spec.jitter);

  SynthFrame out;
  out.pose = synth_ego_pose(spec, frame_index);
  const Pose world_to_lidar = out.pose.inverse();

  auto emit = [&](const Eigen::Vector3d& world, float intensity, std::uint16_t cls, MotionState motion,
                  std::uint16_t instance) {
    const Eigen::Vector3d p = world_to_lidar.apply(world);
    out.cloud.points.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()),
                                intensity});
    out.labels.semantic.push_back(table.encode(cls, motion));
    out.labels.instance.push_back(instance);
    out.motion.push_back(to_id(motion));
    out.semantic.push_back(cls);
  };

  // Ground under a box footprint is hidden from the sensor.
  std::vector<Pose> box_poses;
  for (const auto& box : spec.boxes) box_poses.push_back(synth_box_pose(box, frame_index));
  auto occluded = [&](double x, double y, double z) {
    for (std::size_t b = 0; b < spec.boxes.size(); ++b) {
      const Eigen::Vector3d half = spec.boxes[b].size / 2.0;
      const Eigen::Vector3d q = box_poses[b].inverse().apply({x, y, z});
      if (q.z() <= half.z() && std::abs(q.x()) <= half.x() && std::abs(q.y()) <= half.y()) return true;
    }
    return false;
  };

  for (const auto& plane : spec.planes) {
    const double cx = 0.5 * (plane.x_min + plane.x_max);
    const double cy = 0.5 * (plane.y_min + plane.y_max);
    const auto xs = detail::lattice(0.5 * (plane.x_max - plane.x_min), plane.spacing);
    const auto ys = detail::lattice(0.5 * (plane.y_max - plane.y_min), plane.spacing);
    for (double x : xs) {
      for (double y : ys) {
        double px = cx + x, py = cy + y;
        if (spec.jitter > 0.0) {
          px += jit(rng);
          py += jit(rng);
        }
        if (occluded(px, py, plane.z)) continue;
        emit({px, py, plane.z}, plane.intensity, plane.class_id, MotionState::kStatic, 0);
      }
    }
  }
  for (std::size_t b = 0; b < spec.boxes.size(); ++b) {
    const auto& box = spec.boxes[b];
    const auto local = detail::sample_box(box, spec.jitter, rng);
    const Pose box_pose = synth_box_pose(box, frame_index);
    const MotionState motion = box.moving() ? MotionState::kMoving : MotionState::kStatic;
    for (const auto& q : local) {
      emit(box_pose.apply(q), box.intensity, box.class_id, motion, static_cast<std::uint16_t>(b + 1));
    }
  }
  return out;
}

/// Writes frames 0..spec.frames-1 as a KITTI-layout directory. Poses are
/// LiDAR poses and calib.txt holds the identity, so both conventions agree.
inline void write_synth_sequence(const SynthSpec& spec, const ClassTable& table, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "velodyne");
  fs::create_directories(dir / "labels");
  std::vector<Pose> poses;
  for (std::size_t f = 0; f < spec.frames; ++f) {
    const auto frame = synth_scene(spec, f, table);
    write_point_cloud(frame.cloud, (dir / "velodyne" / frame_filename(f, ".bin")).string());
    write_labels(frame.labels, (dir / "labels" / frame_filename(f, ".label")).string());
    poses.push_back(frame.pose);
  }
  write_pose_rows(poses, (dir / "poses.txt").string());
  std::ofstream calib(dir / "calib.txt");
  calib << "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
}

/// Window of synthetic scans ending at frame t (earlier frames clamp to 0).
inline ScanSequence synth_window(const SynthSpec& spec, const ClassTable& table, std::size_t t, std::size_t n) {
  ScanSequence seq;
  std::vector<Pose> world;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t f = t >= j ? t - j : 0;
    auto frame = synth_scene(spec, f, table);
    seq.scans.push_back(std::move(frame.cloud));
    seq.labels.push_back(std::move(frame.labels));
    world.push_back(frame.pose);
  }
  seq.relatives = stepwise_relatives(world);
  return seq;
}

}  // namespace seg4d
