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
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d {

using Rgb = std::array<std::uint8_t, 3>;

/// Deterministic, well-spread colors for `n` labels (label 0 is gray).
inline std::vector<Rgb> default_palette(std::size_t n) {
  std::vector<Rgb> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (k == 0) {
      out[k] = {128, 128, 128};
      continue;
    }
    // Golden-angle hue walk at full saturation.
    const double h = std::fmod(static_cast<double>(k) * 137.508, 360.0) / 60.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
      case 0: r = 1, g = x; break;
      case 1: r = x, g = 1; break;
      case 2: g = 1, b = x; break;
      case 3: g = x, b = 1; break;
      case 4: r = x, b = 1; break;
      default: r = 1, b = x; break;
    }
    out[k] = {static_cast<std::uint8_t>(r * 255), static_cast<std::uint8_t>(g * 255), static_cast<std::uint8_t>(b * 255)};
  }
  return out;
}

/// ASCII PLY with one colored vertex per point.
template <typename Label>
void export_ply(const PointCloud& cloud, const std::vector<Label>& labels, const std::vector<Rgb>& palette,
                const std::string& path) {
  if (labels.size() != cloud.size()) throw ContractError("export_ply: one label per point required");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<std::size_t>(labels[i]) >= palette.size()) {
      throw ContractError("export_ply: label " + std::to_string(labels[i]) + " has no palette entry");
    }
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  out.precision(9);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& c = palette[static_cast<std::size_t>(labels[i])];
    out << cloud[i].x << ' ' << cloud[i].y << ' ' << cloud[i].z << ' ' << int(c[0]) << ' ' << int(c[1]) << ' '
        << int(c[2]) << '\n';
  }
}

}  // namespace seg4d
