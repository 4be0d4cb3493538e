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
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "seg4d/class_table.hpp"
#include "seg4d/dataset_io.hpp"
#include "seg4d/matrix_io.hpp"
#include "seg4d/predictor.hpp"
#include "seg4d/types.hpp"

namespace seg4d {

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Parameters of the motion-semantic fusion head. Every map is applied per
/// point as X * W + b (row-vector convention); a 1x1x1 sparse convolution on
/// per-point features is exactly such a map.
template <typename Scalar>
struct FusionWeights {
  RowMatrix<Scalar> lift;        // C x D, semantic logits -> feature channels
  RowVec<Scalar> lift_bias;      // D
  RowMatrix<Scalar> gate;        // 3 x D, motion logits -> spatial gate
  RowVec<Scalar> gate_bias;      // D
  RowMatrix<Scalar> channel;     // D x D, pooled features -> channel logits
  RowVec<Scalar> channel_bias;   // D
  RowMatrix<Scalar> classifier;  // D x C'
  RowVec<Scalar> classifier_bias;  // C'

  Eigen::Index channels() const { return lift.cols(); }
  Eigen::Index semantic_classes() const { return lift.rows(); }
  Eigen::Index multiscan_classes() const { return classifier.cols(); }

  static FusionWeights zeros(Eigen::Index c, Eigen::Index c_multi, Eigen::Index d) {
    FusionWeights w;
    w.lift = RowMatrix<Scalar>::Zero(c, d);
    w.lift_bias = RowVec<Scalar>::Zero(d);
    w.gate = RowMatrix<Scalar>::Zero(kMotionClasses, d);
    w.gate_bias = RowVec<Scalar>::Zero(d);
    w.channel = RowMatrix<Scalar>::Zero(d, d);
    w.channel_bias = RowVec<Scalar>::Zero(d);
    w.classifier = RowMatrix<Scalar>::Zero(d, c_multi);
    w.classifier_bias = RowVec<Scalar>::Zero(c_multi);
    return w;
  }

  /// Uniform in [-scale, scale] from a seeded generator, in parameter order.
  static FusionWeights random(std::uint64_t seed, Eigen::Index c, Eigen::Index c_multi, Eigen::Index d = 32,
                              double scale = 0.1) {
    FusionWeights w = zeros(c, c_multi, d);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    w.for_each([&](Scalar& x) { x = static_cast<Scalar>(u(rng)); });
    return w;
  }

  /// Visits every parameter in the fixed serialization order.
  template <typename F>
  void for_each(F&& f) {
    visit(lift, f);
    visit(lift_bias, f);
    visit(gate, f);
    visit(gate_bias, f);
    visit(channel, f);
    visit(channel_bias, f);
    visit(classifier, f);
    visit(classifier_bias, f);
  }

  std::vector<Scalar> flatten() const {
    std::vector<Scalar> out;
    const_cast<FusionWeights*>(this)->for_each([&](Scalar& x) { out.push_back(x); });
    return out;
  }

  void unflatten(const std::vector<Scalar>& flat) {
    std::size_t k = 0;
    for_each([&](Scalar& x) { x = flat.at(k++); });
    if (k != flat.size()) throw ContractError("fusion weights: flat vector has the wrong length");
  }

  bool all_finite() const {
    return lift.allFinite() && lift_bias.allFinite() && gate.allFinite() && gate_bias.allFinite() &&
           channel.allFinite() && channel_bias.allFinite() && classifier.allFinite() && classifier_bias.allFinite();
  }

  template <typename Other>
  FusionWeights<Other> cast() const {
    FusionWeights<Other> w;
    w.lift = lift.template cast<Other>();
    w.lift_bias = lift_bias.template cast<Other>();
    w.gate = gate.template cast<Other>();
    w.gate_bias = gate_bias.template cast<Other>();
    w.channel = channel.template cast<Other>();
    w.channel_bias = channel_bias.template cast<Other>();
    w.classifier = classifier.template cast<Other>();
    w.classifier_bias = classifier_bias.template cast<Other>();
    return w;
  }

 private:
  template <typename M, typename F>
  static void visit(M& m, F& f) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) f(m(r, c));
    }
  }
};

// Weight file: 8-byte magic "SEG4DFW1", then little-endian uint32 D, C, C',
// then every parameter as little-endian float64 in serialization order
// (lift C x D, lift bias D, gate 3 x D, gate bias D, channel D x D,
// channel bias D, classifier D x C', classifier bias C'), matrices row-major.

inline void save_fusion_weights(const FusionWeights<double>& w, const std::string& path) {
  std::vector<unsigned char> bytes = {'S', 'E', 'G', '4', 'D', 'F', 'W', '1'};
  auto put32 = [&](std::uint32_t v) {
    bytes.resize(bytes.size() + 4);
    detail::store_le32(v, bytes.data() + bytes.size() - 4);
  };
  put32(static_cast<std::uint32_t>(w.channels()));
  put32(static_cast<std::uint32_t>(w.semantic_classes()));
  put32(static_cast<std::uint32_t>(w.multiscan_classes()));
  for (double v : w.flatten()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    put32(static_cast<std::uint32_t>(bits & 0xffffffffu));
    put32(static_cast<std::uint32_t>(bits >> 32));
  }
  detail::write_bytes(path, bytes);
}

inline FusionWeights<double> load_fusion_weights(const std::string& path) {
  const auto bytes = detail::read_bytes(path);
  if (bytes.size() < 20 || std::string(bytes.begin(), bytes.begin() + 8) != "SEG4DFW1") {
    throw ParseError(path + ": not a fusion weight file");
  }
  const auto d = detail::load_le32(bytes.data() + 8);
  const auto c = detail::load_le32(bytes.data() + 12);
  const auto cm = detail::load_le32(bytes.data() + 16);
  auto w = FusionWeights<double>::zeros(c, cm, d);
  const std::size_t count = w.flatten().size();
  if (bytes.size() != 20 + count * 8) throw ParseError(path + ": payload size does not match header dims");
  std::vector<double> flat(count);
  for (std::size_t k = 0; k < count; ++k) {
    const unsigned char* p = bytes.data() + 20 + 8 * k;
    flat[k] = std::bit_cast<double>(static_cast<std::uint64_t>(detail::load_le32(p)) |
                                    (static_cast<std::uint64_t>(detail::load_le32(p + 4)) << 32));
  }
  w.unflatten(flat);
  if (!w.all_finite()) throw ParseError(path + ": non-finite weight");
  return w;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  // Split by sign so exp never overflows.
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
RowMatrix<Scalar> affine(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& w, const RowVec<Scalar>& b) {
  RowMatrix<Scalar> y = x * w;
  y.rowwise() += b;
  return y;
}

/// Semantic logits lifted into the D fusion channels.
template <typename Scalar>
RowMatrix<Scalar> lift_semantic(const RowMatrix<Scalar>& semantic, const FusionWeights<Scalar>& w) {
  if (semantic.cols() != w.semantic_classes()) throw ContractError("fusion: semantic logits width differs from weights");
  return affine(semantic, w.lift, w.lift_bias);
}

/// sigmoid(F_m' W_g + b_g). exp overflow saturates to 0 instead of NaN.
template <typename Scalar>
RowMatrix<Scalar> motion_gate(const RowMatrix<Scalar>& motion, const FusionWeights<Scalar>& w) {
  if (motion.cols() != kMotionClasses) throw ContractError("fusion: motion logits must have 3 columns");
  RowMatrix<Scalar> g = motion.lazyProduct(w.gate);
  g.rowwise() += w.gate_bias;
  g = ((-g.array()).exp() + Scalar(1)).inverse().matrix();
  return g;
}

/// F_sm' = lift(F_s') * sigmoid(gate(F_m')), elementwise.
template <typename Scalar>
RowMatrix<Scalar> spatial_attention(const RowMatrix<Scalar>& semantic, const RowMatrix<Scalar>& motion,
                                    const FusionWeights<Scalar>& w) {
  if (motion.rows() != semantic.rows()) throw ContractError("fusion: motion and semantic row counts differ");
  RowMatrix<Scalar> out = motion_gate(motion, w);
  out.array() *= lift_semantic(semantic, w).array();
  return out;
}

template <typename Scalar>
struct ChannelAttention {
  RowMatrix<Scalar> fused;   // F_sm''
  RowVec<Scalar> softmax;    // before scaling by D, sums to 1
  RowVec<Scalar> weights;    // softmax * D, mean 1
};

/// F_sm'' = F_sm' * (softmax(channel(avgpool(F_sm'))) * D) + lift(F_s').
/// The pool averages each channel over all points of the scan.
template <typename Scalar>
ChannelAttention<Scalar> channel_attention(const RowMatrix<Scalar>& salient, const FusionWeights<Scalar>& w,
                                           const RowMatrix<Scalar>& semantic) {
  if (salient.rows() == 0) throw ContractError("channel_attention: average pool over zero points");
  if (salient.cols() != w.channels()) throw ContractError("channel_attention: channel count differs from weights");
  if (semantic.rows() != salient.rows()) throw ContractError("channel_attention: row counts differ");
  const RowVec<Scalar> pooled = salient.colwise().mean();
  RowVec<Scalar> logits = pooled * w.channel + w.channel_bias;
  const Scalar mx = logits.maxCoeff();
  ChannelAttention<Scalar> out;
  out.softmax = (logits.array() - mx).exp().matrix();
  out.softmax /= out.softmax.sum();
  out.weights = out.softmax * static_cast<Scalar>(w.channels());
  out.fused = salient * out.weights.asDiagonal();
  out.fused += lift_semantic(semantic, w);
  return out;
}

/// Every intermediate of the forward pass, kept for the backward pass.
template <typename Scalar>
struct FusionTrace {
  RowMatrix<Scalar> lifted;   // lift(F_s')
  RowMatrix<Scalar> gate;     // sigmoid(gate(F_m'))
  RowMatrix<Scalar> salient;  // F_sm'
  RowVec<Scalar> pooled;
  RowVec<Scalar> softmax;
  RowVec<Scalar> weights;
  RowMatrix<Scalar> fused;    // F_sm''
  RowMatrix<Scalar> logits;   // F_s''
};

/// Full fusion forward pass. The refinement stack after channel attention is a
/// single linear classifier here.
template <typename Scalar>
FusionTrace<Scalar> msfm_trace(const RowMatrix<Scalar>& semantic, const RowMatrix<Scalar>& motion,
                               const FusionWeights<Scalar>& w) {
  if (motion.cols() != kMotionClasses) throw ContractError("fusion: motion logits must have 3 columns");
  if (motion.rows() != semantic.rows()) throw ContractError("fusion: motion and semantic row counts differ");
  if (semantic.rows() == 0) throw ContractError("fusion: empty scan");
  FusionTrace<Scalar> t;
  t.lifted = lift_semantic(semantic, w);
  t.gate = motion_gate(motion, w);
  t.salient = t.lifted.cwiseProduct(t.gate);
  t.pooled = t.salient.colwise().mean();
  RowVec<Scalar> logits = t.pooled * w.channel + w.channel_bias;
  const Scalar mx = logits.maxCoeff();
  t.softmax = (logits.array() - mx).exp().matrix();
  t.softmax /= t.softmax.sum();
  t.weights = t.softmax * static_cast<Scalar>(w.channels());
  t.fused = t.salient * t.weights.asDiagonal();
  t.fused += t.lifted;
  t.logits = affine(t.fused, w.classifier, w.classifier_bias);
  return t;
}

template <typename Scalar>
struct FusionOutput {
  RowMatrix<Scalar> logits;
  ClassLabels labels;
};

/// Same result as msfm_trace without keeping intermediates. Rows are
/// processed in cache-sized blocks; the lift is recomputed in the second pass.
template <typename Scalar>
FusionOutput<Scalar> msfm_forward(const RowMatrix<Scalar>& semantic, const RowMatrix<Scalar>& motion,
                                  const FusionWeights<Scalar>& w) {
  if (motion.cols() != kMotionClasses) throw ContractError("fusion: motion logits must have 3 columns");
  if (motion.rows() != semantic.rows()) throw ContractError("fusion: motion and semantic row counts differ");
  if (semantic.cols() != w.semantic_classes()) throw ContractError("fusion: semantic logits width differs from weights");
  if (semantic.rows() == 0) throw ContractError("fusion: empty scan");
  constexpr Eigen::Index kBlock = 1024;
  const Eigen::Index m = semantic.rows();
  const Eigen::Index d = w.channels();
  RowMatrix<Scalar> salient(m, d);
  RowMatrix<Scalar> lifted(std::min(kBlock, m), d);
  RowMatrix<Scalar> gate(std::min(kBlock, m), d);
  RowVec<Scalar> sum = RowVec<Scalar>::Zero(d);
  for (Eigen::Index b = 0; b < m; b += kBlock) {
    const Eigen::Index n = std::min(kBlock, m - b);
    auto l = lifted.topRows(n);
    auto g = gate.topRows(n);
    l.noalias() = semantic.middleRows(b, n) * w.lift;
    l.rowwise() += w.lift_bias;
    g.noalias() = motion.middleRows(b, n).lazyProduct(w.gate);
    g.rowwise() += w.gate_bias;
    auto s = salient.middleRows(b, n);
    s.array() = l.array() * ((-g.array()).exp() + Scalar(1)).inverse();
    sum += s.colwise().sum();
  }
  const RowVec<Scalar> channel_logits = (sum / static_cast<Scalar>(m)) * w.channel + w.channel_bias;
  RowVec<Scalar> weights = (channel_logits.array() - channel_logits.maxCoeff()).exp().matrix();
  weights *= static_cast<Scalar>(d) / weights.sum();

  FusionOutput<Scalar> out;
  out.logits.resize(m, w.multiscan_classes());
  for (Eigen::Index b = 0; b < m; b += kBlock) {
    const Eigen::Index n = std::min(kBlock, m - b);
    auto fused = lifted.topRows(n);
    fused.noalias() = semantic.middleRows(b, n) * w.lift;
    fused.rowwise() += w.lift_bias;
    fused.array() += salient.middleRows(b, n).array().rowwise() * weights.array();
    auto logits = out.logits.middleRows(b, n);
    logits.noalias() = fused * w.classifier;
    logits.rowwise() += w.classifier_bias;
  }
  out.labels = logits_to_labels(out.logits);
  return out;
}

template <typename Scalar>
struct FusionGradients {
  FusionWeights<Scalar> weights;
  RowMatrix<Scalar> semantic;
  RowMatrix<Scalar> motion;
};

/// Reverse-mode gradients of a scalar loss given dLoss/dLogits.
template <typename Scalar>
FusionGradients<Scalar> msfm_backward(const RowMatrix<Scalar>& semantic, const RowMatrix<Scalar>& motion,
                                      const FusionWeights<Scalar>& w, const FusionTrace<Scalar>& t,
                                      const RowMatrix<Scalar>& d_logits) {
  const auto m = static_cast<Scalar>(semantic.rows());
  const auto d = static_cast<Scalar>(w.channels());
  FusionGradients<Scalar> g;
  g.weights.classifier = t.fused.transpose() * d_logits;
  g.weights.classifier_bias = d_logits.colwise().sum();
  const RowMatrix<Scalar> d_fused = d_logits * w.classifier.transpose();

  // fused = salient * diag(weights) + lifted
  RowMatrix<Scalar> d_lifted = d_fused;
  RowMatrix<Scalar> d_salient = d_fused * t.weights.asDiagonal();
  const RowVec<Scalar> d_weights = d_fused.cwiseProduct(t.salient).colwise().sum();

  // weights = D * softmax(pooled * channel + channel_bias)
  const RowVec<Scalar> d_soft = d_weights * d;
  const Scalar inner = d_soft.dot(t.softmax);
  const RowVec<Scalar> d_chan_logits = t.softmax.cwiseProduct((d_soft.array() - inner).matrix());
  g.weights.channel = t.pooled.transpose() * d_chan_logits;
  g.weights.channel_bias = d_chan_logits;
  const RowVec<Scalar> d_pooled = d_chan_logits * w.channel.transpose();
  d_salient.rowwise() += d_pooled / m;

  // salient = lifted * gate
  d_lifted += d_salient.cwiseProduct(t.gate);
  const RowMatrix<Scalar> d_gate_pre =
      d_salient.cwiseProduct(t.lifted).cwiseProduct(t.gate.cwiseProduct((Scalar(1) - t.gate.array()).matrix()));
  g.weights.gate = motion.transpose() * d_gate_pre;
  g.weights.gate_bias = d_gate_pre.colwise().sum();
  g.motion = d_gate_pre * w.gate.transpose();
  g.weights.lift = semantic.transpose() * d_lifted;
  g.weights.lift_bias = d_lifted.colwise().sum();
  g.semantic = d_lifted * w.lift.transpose();
  return g;
}

/// (static class, motion state) -> multi-scan class. Moving points of a
/// movable class take its moving variant; everything else keeps its static id.
class ClassMergeTable {
 public:
  ClassMergeTable() = default;

  static ClassMergeTable from_class_table(const ClassTable& table) {
    ClassMergeTable t;
    t.moving_.assign(table.semantic_count(), std::nullopt);
    for (std::uint16_t c = 0; c < table.semantic_count(); ++c) {
      const auto& info = table.info(c);
      if (info.movable) t.moving_[c] = info.moving_id;
    }
    return t;
  }

  /// Lines "<static class name> <moving class name>"; only listed classes are movable.
  static ClassMergeTable parse(std::istream& in, const ClassTable& table) {
    ClassMergeTable t;
    t.moving_.assign(table.semantic_count(), std::nullopt);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::istringstream ss(line);
      std::string from, to;
      if (!(ss >> from)) continue;
      if (!(ss >> to)) throw ParseError("merge table line " + std::to_string(lineno) + ": expected two names");
      const auto src = table.find_multiscan(from);
      const auto dst = table.find_multiscan(to);
      if (!src || *src >= table.semantic_count()) {
        throw ParseError("merge table line " + std::to_string(lineno) + ": unknown static class '" + from + "'");
      }
      if (!dst) throw ParseError("merge table line " + std::to_string(lineno) + ": unknown class '" + to + "'");
      t.moving_[*src] = *dst;
    }
    return t;
  }

  std::size_t size() const { return moving_.size(); }
  bool is_movable(std::uint16_t c) const { return c < moving_.size() && moving_[c].has_value(); }

  std::uint16_t map(std::uint16_t class_id, MotionState motion) const {
    if (class_id >= moving_.size()) throw ContractError("manual_fuse: unknown class id " + std::to_string(class_id));
    if (motion == MotionState::kMoving && moving_[class_id]) return *moving_[class_id];
    return class_id;
  }

 private:
  std::vector<std::optional<std::uint16_t>> moving_;
};

/// Rule-based merge of single-scan semantics and motion states.
inline ClassLabels manual_fuse(const ClassLabels& semantic, const MotionLabels& motion, const ClassMergeTable& table) {
  if (semantic.size() != motion.size()) throw ContractError("manual_fuse: label arrays differ in length");
  ClassLabels out(semantic.size());
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    if (motion[i] > to_id(MotionState::kMoving)) throw ContractError("manual_fuse: bad motion id");
    out[i] = table.map(semantic[i], static_cast<MotionState>(motion[i]));
  }
  return out;
}

}  // namespace seg4d
