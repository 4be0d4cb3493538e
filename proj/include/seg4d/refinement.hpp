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
#include <cstdint>
#include <deque>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "seg4d/class_table.hpp"
#include "seg4d/instance_labels.hpp"
#include "seg4d/types.hpp"

namespace seg4d {

struct RefinementParams {
  double vote_fraction = 0.5;     // tau_v
  double relaxed_fraction = 0.3;  // tau_v' for vehicles in a dynamic scene
  std::size_t dynamic_scene_min_vehicles = 4;
  std::size_t confirm_k = 2;
  std::size_t history_len = 3;
  bool symmetric_static = true;  // confirmed-static instances force their points static
  double association_radius = 2.0;  // meters, world frame

  void validate() const {
    if (!(relaxed_fraction > 0.0 && relaxed_fraction < vote_fraction && vote_fraction <= 1.0)) {
      throw ContractError("refinement: need 0 < relaxed_fraction < vote_fraction <= 1");
    }
    if (confirm_k == 0 || confirm_k > history_len) throw ContractError("refinement: need 1 <= confirm_k <= history_len");
    if (!(association_radius > 0.0)) throw ContractError("refinement: association radius must be positive");
  }
};

/// Temporal memory of one sequence. Owned by a single sequential consumer.
class SceneState {
 public:
  struct Track {
    std::deque<bool> votes;  // most recent last, at most history_len entries
    std::size_t last_seen = 0;
    std::uint16_t class_id = 0;
    Eigen::Vector3d world_centroid = Eigen::Vector3d::Zero();
    bool has_centroid = false;
  };

  std::size_t frame() const { return frame_; }
  const std::map<std::uint32_t, Track>& tracks() const { return tracks_; }

  /// Starts a new frame and forgets tracks unseen for more than history_len frames.
  void advance(const RefinementParams& params) {
    ++frame_;
    std::erase_if(tracks_, [&](const auto& kv) { return frame_ - kv.second.last_seen > params.history_len; });
  }

  Track& track(std::uint32_t id) { return tracks_[id]; }
  const Track* find(std::uint32_t id) const {
    auto it = tracks_.find(id);
    return it == tracks_.end() ? nullptr : &it->second;
  }

  std::uint32_t new_track_id() { return next_id_++; }

 private:
  std::size_t frame_ = 0;
  std::uint32_t next_id_ = 1;
  std::map<std::uint32_t, Track> tracks_;
};

/// Fraction of masked points labelled moving, compared inclusively.
inline double moving_fraction(const std::vector<std::uint8_t>& mask, const MotionLabels& motion) {
  if (mask.size() != motion.size()) throw ContractError("instance_vote: mask length differs from labels");
  std::size_t inside = 0, moving = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++inside;
    moving += motion[i] == to_id(MotionState::kMoving);
  }
  if (inside == 0) throw ContractError("instance_vote: empty instance mask");
  return static_cast<double>(moving) / static_cast<double>(inside);
}

inline bool instance_vote(const std::vector<std::uint8_t>& mask, const MotionLabels& motion, double threshold) {
  return moving_fraction(mask, motion) >= threshold;
}

inline std::size_t mask_count(const std::vector<std::uint8_t>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace detail {

inline double member_fraction(const std::vector<std::size_t>& members, const MotionLabels& motion) {
  std::size_t moving = 0;
  for (auto i : members) moving += motion[i] == to_id(MotionState::kMoving);
  return static_cast<double>(moving) / static_cast<double>(members.size());
}

inline bool dynamic_scene(const InstanceSet& instances, const std::vector<std::vector<std::size_t>>& members,
                          const MotionLabels& motion, const ClassTable& table, const RefinementParams& params) {
  std::size_t moving_vehicles = 0;
  for (std::size_t b = 0; b < instances.boxes.size(); ++b) {
    if (!table.is_vehicle(instances.boxes[b].class_id) || members[b].empty()) continue;
    moving_vehicles += member_fraction(members[b], motion) >= params.vote_fraction;
  }
  return moving_vehicles >= params.dynamic_scene_min_vehicles && params.dynamic_scene_min_vehicles > 0;
}

}  // namespace detail

/// True when at least `dynamic_scene_min_vehicles` vehicle instances vote moving at tau_v.
inline bool detect_dynamic_scene(const InstanceSet& instances, const std::vector<std::vector<std::uint8_t>>& masks,
                                 const MotionLabels& motion, const ClassTable& table, const RefinementParams& params) {
  std::size_t moving_vehicles = 0;
  for (std::size_t b = 0; b < instances.boxes.size(); ++b) {
    if (!table.is_vehicle(instances.boxes[b].class_id) || mask_count(masks[b]) == 0) continue;
    moving_vehicles += instance_vote(masks[b], motion, params.vote_fraction);
  }
  return moving_vehicles >= params.dynamic_scene_min_vehicles && params.dynamic_scene_min_vehicles > 0;
}

inline bool detect_dynamic_scene(const PointCloud& cloud, const InstanceSet& instances, const MotionLabels& motion,
                                 const ClassTable& table, const RefinementParams& params) {
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& b : instances.boxes) masks.push_back(points_in_box(cloud, b));
  return detect_dynamic_scene(instances, masks, motion, table, params);
}

/// Records `frame_vote` for the instance and reports whether at least
/// confirm_k of its last history_len votes were moving.
inline bool temporal_confirm(SceneState& state, std::uint32_t instance_id, bool frame_vote,
                             const RefinementParams& params) {
  auto& t = state.track(instance_id);
  t.votes.push_back(frame_vote);
  while (t.votes.size() > params.history_len) t.votes.pop_front();
  t.last_seen = state.frame();
  return static_cast<std::size_t>(std::count(t.votes.begin(), t.votes.end(), true)) >= params.confirm_k;
}

/// Gives every box the id of the nearest same-class track within the
/// association radius (greedy by distance), or a fresh id.
inline InstanceSet associate_instances(SceneState& state, const InstanceSet& instances, const Pose& lidar_to_world,
                                       const RefinementParams& params) {
  InstanceSet out = instances;
  struct Candidate {
    double distance;
    std::size_t box;
    std::uint32_t track;
  };
  std::vector<Eigen::Vector3d> world(instances.boxes.size());
  std::vector<Candidate> candidates;
  for (std::size_t b = 0; b < instances.boxes.size(); ++b) {
    world[b] = lidar_to_world.apply(instances.boxes[b].center);
    for (const auto& [id, t] : state.tracks()) {
      if (!t.has_centroid || t.class_id != instances.boxes[b].class_id) continue;
      const double d = (t.world_centroid - world[b]).norm();
      if (d <= params.association_radius) candidates.push_back({d, b, id});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.distance, a.box, a.track) < std::tie(b.distance, b.box, b.track);
  });
  std::vector<std::uint8_t> box_done(instances.boxes.size(), 0);
  std::map<std::uint32_t, bool> track_done;
  for (const auto& c : candidates) {
    if (box_done[c.box] || track_done[c.track]) continue;
    box_done[c.box] = 1;
    track_done[c.track] = true;
    out.boxes[c.box].id = c.track;
  }
  for (std::size_t b = 0; b < out.boxes.size(); ++b) {
    if (!box_done[b]) out.boxes[b].id = state.new_track_id();
    auto& t = state.track(out.boxes[b].id);
    t.class_id = out.boxes[b].class_id;
    t.world_centroid = world[b];
    t.has_centroid = true;
    t.last_seen = state.frame();
  }
  return out;
}

enum class Confirmation { kNone, kMoving, kStatic };

struct InstanceReport {
  std::uint32_t id = 0;
  std::uint16_t class_id = 0;
  std::size_t points = 0;
  double raw_fraction = 0.0;
  double threshold = 0.0;
  bool vote = false;
  Confirmation confirmed = Confirmation::kNone;
  std::size_t flipped = 0;
};

struct RefineResult {
  MotionLabels labels;
  bool dynamic_scene = false;
  std::vector<InstanceReport> instances;
};

/// Instance-level refinement of point-wise motion labels. Bottom-up: each
/// instance votes with its moving fraction (relaxed threshold for vehicles in
/// a dynamic scene) and the vote is confirmed over recent frames. Top-down:
/// confirmed instances impose one motion state on all of their points.
inline RefineResult refine(const PointCloud& cloud, const InstanceSet& instances, const MotionLabels& motion,
                           SceneState& state, const RefinementParams& params, const ClassTable& table) {
  params.validate();
  if (motion.size() != cloud.size()) throw ContractError("refine: motion labels must have one entry per point");
  state.advance(params);

  std::vector<std::vector<std::size_t>> members;
  members.reserve(instances.boxes.size());
  for (const auto& b : instances.boxes) members.push_back(box_members(cloud, b));

  RefineResult out;
  out.labels = motion;
  out.dynamic_scene = detail::dynamic_scene(instances, members, motion, table, params);

  for (std::size_t b = 0; b < instances.boxes.size(); ++b) {
    const auto& box = instances.boxes[b];
    InstanceReport rep;
    rep.id = box.id;
    rep.class_id = box.class_id;
    rep.points = members[b].size();
    if (rep.points == 0) {
      out.instances.push_back(rep);
      continue;
    }
    rep.threshold = (out.dynamic_scene && table.is_vehicle(box.class_id)) ? params.relaxed_fraction
                                                                           : params.vote_fraction;
    rep.raw_fraction = detail::member_fraction(members[b], motion);
    rep.vote = rep.raw_fraction >= rep.threshold;
    const bool moving_confirmed = temporal_confirm(state, box.id, rep.vote, params);
    const auto& votes = state.track(box.id).votes;
    const auto static_votes = static_cast<std::size_t>(std::count(votes.begin(), votes.end(), false));
    if (moving_confirmed) {
      rep.confirmed = Confirmation::kMoving;
    } else if (params.symmetric_static && static_votes >= params.confirm_k) {
      rep.confirmed = Confirmation::kStatic;
    }
    if (rep.confirmed != Confirmation::kNone) {
      const auto target = to_id(rep.confirmed == Confirmation::kMoving ? MotionState::kMoving : MotionState::kStatic);
      for (auto i : members[b]) {
        if (out.labels[i] != target) {
          out.labels[i] = target;
          ++rep.flipped;
        }
      }
    }
    out.instances.push_back(rep);
  }
  return out;
}

inline const char* to_string(Confirmation c) {
  switch (c) {
    case Confirmation::kMoving:
      return "moving";
    case Confirmation::kStatic:
      return "static";
    default:
      return "none";
  }
}

/// One line per instance: frame id class points raw_fraction threshold vote confirmed flipped.
inline void write_refinement_report(std::ostream& out, std::size_t frame, const RefineResult& r,
                                    const ClassTable& table) {
  out << "# frame " << frame << (r.dynamic_scene ? " dynamic" : " normal") << '\n';
  for (const auto& i : r.instances) {
    out << frame << ' ' << i.id << ' ' << table.info(i.class_id).name << ' ' << i.points << ' ' << i.raw_fraction
        << ' ' << i.threshold << ' ' << (i.vote ? "moving" : "static") << ' ' << to_string(i.confirmed) << ' '
        << i.flipped << '\n';
  }
}

}  // namespace seg4d
