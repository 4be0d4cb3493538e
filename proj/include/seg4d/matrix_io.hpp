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

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "seg4d/dataset_io.hpp"
#include "seg4d/types.hpp"

namespace seg4d {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense matrix exchanged with external processes. On disk:
///
///   SEG4D-MATRIX 1
///   rows <R>
///   cols <C>
///   dtype float32|float64
///   columns <name_0> ... <name_{C-1}>
///   end
///   <R*C little-endian values, row-major>
///
/// Header lines are '\n' terminated ASCII; the payload starts right after "end\n".
struct NamedMatrix {
  RowMatrix<double> values;
  std::vector<std::string> columns;
};

enum class MatrixDtype { kFloat32, kFloat64 };

template <typename Derived>
void write_matrix(const std::string& path, const Eigen::MatrixBase<Derived>& m,
                  const std::vector<std::string>& columns, MatrixDtype dtype = MatrixDtype::kFloat32) {
  if (!columns.empty() && columns.size() != static_cast<std::size_t>(m.cols())) {
    throw ContractError("write_matrix: column name count does not match matrix width");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << "SEG4D-MATRIX 1\n"
      << "rows " << m.rows() << "\n"
      << "cols " << m.cols() << "\n"
      << "dtype " << (dtype == MatrixDtype::kFloat32 ? "float32" : "float64") << "\n"
      << "columns";
  for (std::size_t c = 0; c < static_cast<std::size_t>(m.cols()); ++c) {
    out << ' ' << (columns.empty() ? "c" + std::to_string(c) : columns[c]);
  }
  out << "\nend\n";
  std::vector<unsigned char> payload;
  const std::size_t width = dtype == MatrixDtype::kFloat32 ? 4 : 8;
  payload.resize(static_cast<std::size_t>(m.rows() * m.cols()) * width);
  unsigned char* p = payload.data();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = static_cast<double>(m(r, c));
      if (dtype == MatrixDtype::kFloat32) {
        detail::store_le32(std::bit_cast<std::uint32_t>(static_cast<float>(v)), p);
        p += 4;
      } else {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        detail::store_le32(static_cast<std::uint32_t>(bits & 0xffffffffu), p);
        detail::store_le32(static_cast<std::uint32_t>(bits >> 32), p + 4);
        p += 8;
      }
    }
  }
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("short write to " + path);
}

inline NamedMatrix read_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  auto fail = [&](const std::string& why) -> void { throw ParseError(path + ": " + why); };

  std::string line;
  if (!std::getline(in, line) || line != "SEG4D-MATRIX 1") fail("bad magic line");
  long long rows = -1, cols = -1;
  std::string dtype;
  NamedMatrix out;
  while (std::getline(in, line) && line != "end") {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "rows") ss >> rows;
    else if (key == "cols") ss >> cols;
    else if (key == "dtype") ss >> dtype;
    else if (key == "columns") {
      std::string name;
      while (ss >> name) out.columns.push_back(name);
    } else {
      fail("unknown header key '" + key + "'");
    }
  }
  if (line != "end") fail("header not terminated by 'end'");
  if (rows < 0 || cols < 0) fail("missing rows/cols");
  if (dtype != "float32" && dtype != "float64") fail("unsupported dtype '" + dtype + "'");
  if (!out.columns.empty() && out.columns.size() != static_cast<std::size_t>(cols)) fail("column names do not match cols");

  const std::size_t width = dtype == "float32" ? 4 : 8;
  const std::size_t need = static_cast<std::size_t>(rows * cols) * width;
  std::vector<unsigned char> payload(need);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(need));
  if (static_cast<std::size_t>(in.gcount()) != need) fail("payload truncated");
  if (in.peek() != std::char_traits<char>::eof()) fail("trailing bytes after payload");

  out.values.resize(rows, cols);
  const unsigned char* p = payload.data();
  for (long long r = 0; r < rows; ++r) {
    for (long long c = 0; c < cols; ++c) {
      if (width == 4) {
        out.values(r, c) = std::bit_cast<float>(detail::load_le32(p));
      } else {
        const std::uint64_t bits =
            static_cast<std::uint64_t>(detail::load_le32(p)) | (static_cast<std::uint64_t>(detail::load_le32(p + 4)) << 32);
        out.values(r, c) = std::bit_cast<double>(bits);
      }
      p += width;
    }
  }
  return out;
}

}  // namespace seg4d
