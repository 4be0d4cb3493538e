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
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d {

struct ClassInfo {
  std::uint16_t id = 0;
  std::string name;
  bool movable = false;
  bool vehicle = false;
  std::optional<std::uint16_t> moving_id;  // multi-scan id of the moving variant
};

struct RawMapping {
  std::uint16_t class_id = 0;
  MotionState motion = MotionState::kUnlabeled;
};

/// Static semantic classes (ids 0..C-1, 0 ignored), the multi-scan class space
/// (static ids followed by moving variants, C' total) and the raw label-file map.
class ClassTable {
 public:
  static constexpr std::uint16_t kIgnore = 0;

  /// SemanticKITTI: 19 static classes plus unlabeled (C = 20), six moving
  /// variants (C' = 26).
  static ClassTable semantic_kitti() {
    ClassTable t;
    const char* names[] = {"unlabeled",  "car",          "bicycle",  "motorcycle", "truck",
                           "other-vehicle", "person",    "bicyclist", "motorcyclist", "road",
                           "parking",    "sidewalk",     "other-ground", "building", "fence",
                           "vegetation", "trunk",        "terrain",  "pole",       "traffic-sign"};
    for (std::uint16_t i = 0; i < 20; ++i) t.add_class(i, names[i]);
    for (std::uint16_t id : {1, 4, 5}) {
      t.classes_[id].movable = true;
      t.classes_[id].vehicle = true;
    }
    for (std::uint16_t id : {6, 7, 8}) t.classes_[id].movable = true;
    t.add_moving(20, "moving-car", 1);
    t.add_moving(21, "moving-truck", 4);
    t.add_moving(22, "moving-other-vehicle", 5);
    t.add_moving(23, "moving-person", 6);
    t.add_moving(24, "moving-bicyclist", 7);
    t.add_moving(25, "moving-motorcyclist", 8);

    const std::pair<std::uint16_t, std::uint16_t> statics[] = {
        {0, 0},   {1, 0},   {10, 1},  {11, 2},  {13, 5},  {15, 3},  {16, 5},  {18, 4},
        {20, 5},  {30, 6},  {31, 7},  {32, 8},  {40, 9},  {44, 10}, {48, 11}, {49, 12},
        {50, 13}, {51, 14}, {52, 0},  {60, 9},  {70, 15}, {71, 16}, {72, 17}, {80, 18},
        {81, 19}, {99, 0}};
    for (auto [raw, cls] : statics) {
      const auto motion = raw <= 1 ? MotionState::kUnlabeled : MotionState::kStatic;
      t.add_raw(raw, cls, motion);
    }
    const std::pair<std::uint16_t, std::uint16_t> moving[] = {
        {252, 1}, {253, 7}, {254, 6}, {255, 8}, {256, 5}, {257, 5}, {258, 4}, {259, 5}};
    for (auto [raw, cls] : moving) t.add_raw(raw, cls, MotionState::kMoving);
    return t;
  }

  /// Line format, '#' starts a comment:
  ///   class  <id> <name> [movable] [vehicle]
  ///   moving <multi_id> <name> <static_id>
  ///   raw    <raw_id> <class_id> <static|moving|unlabeled>
  static ClassTable parse(std::istream& in) {
    ClassTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::istringstream ss(line);
      std::string kind;
      if (!(ss >> kind)) continue;
      auto fail = [&](const std::string& why) {
        throw ParseError("class table line " + std::to_string(lineno) + ": " + why);
      };
      if (kind == "class") {
        int id = -1;
        std::string name;
        if (!(ss >> id >> name) || id < 0) fail("expected 'class <id> <name>'");
        t.add_class(static_cast<std::uint16_t>(id), name);
        std::string flag;
        while (ss >> flag) {
          if (flag == "movable") t.classes_.back().movable = true;
          else if (flag == "vehicle") t.classes_.back().vehicle = true;
          else fail("unknown flag '" + flag + "'");
        }
      } else if (kind == "moving") {
        int id = -1, base = -1;
        std::string name;
        if (!(ss >> id >> name >> base) || id < 0 || base < 0) fail("expected 'moving <id> <name> <static_id>'");
        if (static_cast<std::size_t>(base) >= t.classes_.size()) fail("unknown static class");
        t.add_moving(static_cast<std::uint16_t>(id), name, static_cast<std::uint16_t>(base));
      } else if (kind == "raw") {
        int raw = -1, cls = -1;
        std::string state;
        if (!(ss >> raw >> cls >> state) || raw < 0 || cls < 0) fail("expected 'raw <raw> <class> <state>'");
        MotionState m = MotionState::kStatic;
        if (state == "moving") m = MotionState::kMoving;
        else if (state == "unlabeled") m = MotionState::kUnlabeled;
        else if (state != "static") fail("bad motion state '" + state + "'");
        t.add_raw(static_cast<std::uint16_t>(raw), static_cast<std::uint16_t>(cls), m);
      } else {
        fail("unknown directive '" + kind + "'");
      }
    }
    t.validate();
    return t;
  }

  static ClassTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open class table " + path);
    return parse(in);
  }

  std::size_t semantic_count() const { return classes_.size(); }
  std::size_t multiscan_count() const { return classes_.size() + moving_names_.size(); }

  const ClassInfo& info(std::uint16_t id) const {
    if (id >= classes_.size()) throw ContractError("unknown class id " + std::to_string(id));
    return classes_[id];
  }
  bool is_movable(std::uint16_t id) const { return info(id).movable; }
  bool is_vehicle(std::uint16_t id) const { return info(id).vehicle; }

  std::string multiscan_name(std::uint16_t id) const {
    if (id < classes_.size()) return classes_[id].name;
    const std::size_t k = id - classes_.size();
    if (k >= moving_names_.size()) throw ContractError("unknown multi-scan id " + std::to_string(id));
    return moving_names_[k];
  }

  /// Static class behind a multi-scan id (identity on static ids).
  std::uint16_t multiscan_base(std::uint16_t id) const {
    if (id < classes_.size()) return id;
    const std::size_t k = id - classes_.size();
    if (k >= moving_bases_.size()) throw ContractError("unknown multi-scan id " + std::to_string(id));
    return moving_bases_[k];
  }

  std::optional<std::uint16_t> find_multiscan(const std::string& name) const {
    for (std::uint16_t i = 0; i < multiscan_count(); ++i) {
      if (multiscan_name(i) == name) return i;
    }
    return std::nullopt;
  }

  RawMapping decode(std::uint16_t raw) const {
    auto it = raw_.find(raw);
    if (it == raw_.end()) throw ContractError("raw label " + std::to_string(raw) + " not in class table");
    return it->second;
  }

  /// Canonical raw id for (class, motion); the smallest raw id that decodes to it.
  std::uint16_t encode(std::uint16_t class_id, MotionState motion) const {
    for (const auto& [raw, m] : raw_) {
      if (m.class_id == class_id && m.motion == motion) return raw;
    }
    // Moving state for a class with no moving raw id collapses to its static id.
    for (const auto& [raw, m] : raw_) {
      if (m.class_id == class_id && m.motion != MotionState::kUnlabeled) return raw;
    }
    throw ContractError("no raw id for class " + std::to_string(class_id));
  }

  std::vector<std::uint16_t> movable_classes() const {
    std::vector<std::uint16_t> out;
    for (const auto& c : classes_) {
      if (c.movable) out.push_back(c.id);
    }
    return out;
  }

  /// Multi-scan ids of the moving variants.
  std::vector<std::uint16_t> moving_multiscan_ids() const {
    std::vector<std::uint16_t> out;
    for (std::size_t k = 0; k < moving_names_.size(); ++k) {
      out.push_back(static_cast<std::uint16_t>(classes_.size() + k));
    }
    return out;
  }

  const std::map<std::uint16_t, RawMapping>& raw_map() const { return raw_; }

 private:
  void add_class(std::uint16_t id, const std::string& name) {
    if (id != classes_.size()) throw ParseError("class ids must be dense and ascending");
    classes_.push_back({id, name, false, false, std::nullopt});
  }

  void add_moving(std::uint16_t id, const std::string& name, std::uint16_t base) {
    if (id != multiscan_count()) throw ParseError("moving ids must follow the static ids densely");
    moving_names_.push_back(name);
    moving_bases_.push_back(base);
    classes_[base].moving_id = id;
  }

  void add_raw(std::uint16_t raw, std::uint16_t cls, MotionState m) {
    if (cls >= classes_.size()) throw ParseError("raw id maps to unknown class");
    raw_[raw] = {cls, m};
  }

  void validate() const {
    if (classes_.empty()) throw ParseError("class table has no classes");
    for (const auto& c : classes_) {
      if (c.movable && !c.moving_id) {
        throw ParseError("movable class '" + c.name + "' has no moving variant");
      }
    }
  }

  std::vector<ClassInfo> classes_;
  std::vector<std::string> moving_names_;
  std::vector<std::uint16_t> moving_bases_;
  std::map<std::uint16_t, RawMapping> raw_;
};

}  // namespace seg4d
