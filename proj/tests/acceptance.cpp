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

// Acceptance suite: one PASS/FAIL line per criterion. Criterion 10 is a
// throughput measurement and never affects the exit status.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "seg4d/fusion.hpp"
#include "seg4d/grad_check.hpp"
#include "seg4d/losses.hpp"
#include "seg4d/metrics.hpp"
#include "seg4d/pipeline.hpp"

namespace {

using namespace seg4d;
using Mat = RowMatrix<double>;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const ClassTable& table() {
  static const ClassTable t = ClassTable::semantic_kitti();
  return t;
}

Mat random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// 1. Static scene with exact poses: zero motion features, nothing predicted moving.
Outcome static_null() {
  const auto t0 = Clock::now();
  // Every lattice point sits at a pillar centre and the sensor moves by whole
  // cells each frame.
  const auto spec = parse_synth_spec(nlohmann::json::parse(R"({
    "seed": 1, "frames": 8, "ego": {"velocity": [0.3, 0.2, 0.0]},
    "planes": [{"class": "road", "x": [-29.95, 29.95], "y": [-19.95, 19.95], "z": -1.7, "spacing": 0.1}],
    "boxes": [
      {"class": "car", "center": [5.05, 3.05, -0.95], "size": [4.0, 1.8, 1.4], "spacing": 0.1},
      {"class": "person", "center": [-3.05, -6.95, -0.85], "size": [0.6, 0.6, 1.7], "spacing": 0.1},
      {"class": "building", "center": [0.05, 15.05, 1.0], "size": [20.0, 2.0, 5.0], "spacing": 0.2}]})"),
                                     table());
  PipelineConfig config;
  config.predictor = PredictorKind::kHeuristic;
  config.fusion = FusionMode::kManual;
  Pipeline pipeline(config);
  const SynthSource source(spec, table());
  float worst = 0.0f;
  std::size_t moving = 0, points = 0;
  for (std::size_t f = 0; f < source.size(); ++f) {
    const auto input = source.load(f, config.encoder.window);
    const auto enc = encode_motion_full(input.window, config.encoder);
    if (enc.motion.values.size() > 0) worst = std::max(worst, enc.motion.values.cwiseAbs().maxCoeff());
    points += enc.motion.size();
  }
  for (const auto& r : pipeline.run(source)) {
    moving += static_cast<std::size_t>(std::count(r.motion_raw.begin(), r.motion_raw.end(), to_id(MotionState::kMoving)));
  }
  const double ms = ms_since(t0);
  return {worst <= 1e-6f && moving == 0 && ms < 5000.0,
          std::to_string(points) + " points, max |F_m| = " + fmt("%.3g", worst) + ", moving = " +
              std::to_string(moving) + ", " + fmt("%.0f", ms) + " ms"};
}

// 2. A column of height h moving across pillars: residual +h where it entered, -h where it left.
Outcome moving_box_residuals() {
  struct Case {
    double h;
    Eigen::Vector3d velocity;
  };
  const Case cases[] = {{1.5, {0.3, 0.0, 0.0}}, {0.8, {0.0, -0.2, 0.0}}, {2.0, {0.4, 0.3, 0.0}}, {1.1, {-0.1, 0.1, 0.0}}};
  EncoderParams params;
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& c : cases) {
    SynthSpec spec;
    spec.frames = 3;
    SynthBox column;
    column.center = {10.05, -4.05, -1.0};
    column.size = {0.05, 0.05, c.h};
    column.spacing = 0.1;
    column.velocity = c.velocity;
    spec.boxes.push_back(column);
    const auto window = synth_window(spec, table(), 2, 3);
    const auto enc = encode_motion_full(window, params);
    auto cell_of = [&](std::size_t frame) {
      const Eigen::Vector3d p = column.center + column.velocity * static_cast<double>(frame);
      return *pillar_index(p.x(), p.y(), p.z(), params);
    };
    const auto now = cell_of(2);
    for (std::size_t j = 0; j < 2; ++j) {
      const auto then = cell_of(1 - j);
      worst = std::max(worst, std::abs(enc.residuals.at(now.u, now.v, j) - c.h));
      worst = std::max(worst, std::abs(enc.residuals.at(then.u, then.v, j) + c.h));
      checked += 2;
    }
    for (Eigen::Index i = 0; i < enc.motion.values.rows(); ++i) {
      for (Eigen::Index j = 0; j < 2; ++j) worst = std::max(worst, std::abs(enc.motion.values(i, j) - c.h));
    }
  }
  return {worst <= 1e-6, std::to_string(checked) + " pillar residuals, max error " + fmt("%.3g", worst) + " m"};
}

// 3. Pillar law on 1e5 random in-range points.
Outcome pillar_law() {
  EncoderParams params;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(params.x_min, params.x_max), uy(params.y_min, params.y_max),
      uz(params.z_min, params.z_max);
  // Half the points are packed into a few hundred pillars so that sharing is common.
  std::uniform_int_distribution<int> pick(0, 299);
  std::vector<Eigen::Vector2d> hot(300);
  for (auto& h : hot) h = {ux(rng), uy(rng)};
  std::uniform_real_distribution<double> in_cell(0.0, params.resolution);
  ScanSequence seq;
  for (int s = 0; s < 3; ++s) {
    PointCloud c;
    for (int i = 0; i < 100000; ++i) {
      double x = ux(rng), y = uy(rng);
      if (i % 2 == 0) {
        const auto& h = hot[static_cast<std::size_t>(pick(rng))];
        x = std::min(params.x_max, params.x_min + (std::floor((h.x() - params.x_min) / params.resolution)) *
                                                        params.resolution + in_cell(rng));
        y = std::min(params.y_max, params.y_min + (std::floor((h.y() - params.y_min) / params.resolution)) *
                                                        params.resolution + in_cell(rng));
      }
      c.points.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(uz(rng)), 0.0f});
    }
    seq.scans.push_back(std::move(c));
  }
  seq.relatives = {Pose::from_yaw(0.01, {0.5, 0.1, 0.0}), Pose::from_yaw(-0.02, {0.7, -0.2, 0.0})};
  const auto enc = encode_motion_full(seq, params);
  const auto& cloud = seq.scans[0];
  std::size_t out_of_bounds = 0, mismatched = 0, shared = 0;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> first;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto idx = pillar_index(cloud[i].x, cloud[i].y, cloud[i].z, params);
    if (!idx || idx->u >= params.height() || idx->v >= params.width() || !enc.motion.valid[i]) {
      ++out_of_bounds;
      continue;
    }
    auto [it, fresh] = first.try_emplace({idx->u, idx->v}, i);
    if (fresh) continue;
    ++shared;
    if (enc.motion.values.row(static_cast<Eigen::Index>(i)) != enc.motion.values.row(static_cast<Eigen::Index>(it->second))) {
      ++mismatched;
    }
  }
  return {out_of_bounds == 0 && mismatched == 0 && shared > 0,
          std::to_string(cloud.size()) + " points, " + std::to_string(shared) + " sharing a pillar, " +
              std::to_string(out_of_bounds) + " out of bounds, " + std::to_string(mismatched) + " row mismatches"};
}

// 4. Box generation on 50 random scenes.
Outcome box_generation() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> count(2, 6);
  std::uniform_real_distribution<double> yaw(0.0, 2.0 * M_PI), jitter(-2.0, 2.0), length(3.6, 5.0), width(1.6, 2.0),
      height(1.4, 1.8);
  std::size_t scenes_ok = 0, boxes = 0;
  double worst_yaw = 0.0, worst_contain = 1.0;
  std::string first_failure;
  for (int scene = 0; scene < 50; ++scene) {
    SynthSpec spec;
    spec.seed = static_cast<std::uint64_t>(scene);
    spec.frames = 1;
    const int n = count(rng);
    std::vector<int> slots(12);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    for (int b = 0; b < n; ++b) {
      SynthBox box;
      box.class_id = 1;
      const int s = slots[static_cast<std::size_t>(b)];
      box.center = {-30.0 + 12.0 * (s % 6) + jitter(rng), -12.0 + 12.0 * (s / 6) + jitter(rng), -0.9};
      box.size = {length(rng), width(rng), height(rng)};
      box.yaw = yaw(rng);
      box.spacing = 0.1;
      spec.boxes.push_back(box);
    }
    const auto frame = synth_scene(spec, 0, table());
    const auto got = generate_instances(frame.cloud, frame.semantic, table(), InstanceConfig{}, 0);
    bool ok = got.size() == spec.boxes.size();
    for (std::size_t b = 0; b < spec.boxes.size() && ok; ++b) {
      const auto& truth = spec.boxes[b];
      const auto nearest = std::min_element(got.boxes.begin(), got.boxes.end(), [&](const auto& a, const auto& c) {
        return (a.center - truth.center).squaredNorm() < (c.center - truth.center).squaredNorm();
      });
      const double dyaw = yaw_distance(nearest->yaw, truth.yaw) * 180.0 / M_PI;
      std::size_t inside = 0, total = 0;
      for (std::size_t i = 0; i < frame.cloud.size(); ++i) {
        if (frame.labels.instance[i] != b + 1) continue;
        ++total;
        inside += point_in_box({frame.cloud[i].x, frame.cloud[i].y, frame.cloud[i].z}, *nearest);
      }
      const double contain = total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
      worst_yaw = std::max(worst_yaw, dyaw);
      worst_contain = std::min(worst_contain, contain);
      ++boxes;
      if (dyaw > 3.0 || contain < 0.95) ok = false;
    }
    if (ok) {
      ++scenes_ok;
    } else if (first_failure.empty()) {
      first_failure = ", first failure in scene " + std::to_string(scene);
    }
  }
  return {scenes_ok == 50, std::to_string(scenes_ok) + "/50 scenes, " + std::to_string(boxes) + " boxes, worst yaw " +
                               fmt("%.2f", worst_yaw) + " deg, worst containment " + fmt("%.3f", worst_contain) +
                               first_failure};
}

// 5. Refinement completeness over three frames.
Outcome refinement_completeness() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> high(0.55, 0.95), low(0.0, 0.2999), pos(-1.0, 1.0);
  RefinementParams params;
  params.vote_fraction = 0.5;
  params.confirm_k = 2;
  params.history_len = 3;
  std::size_t instances = 0, wrong = 0, outside_changed = 0, not_idempotent = 0;
  for (int scene = 0; scene < 100; ++scene) {
    const int n = 2 + scene % 5;
    PointCloud cloud;
    InstanceSet set;
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n));
    std::vector<bool> seeded_moving(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
      OrientedBox box;
      box.id = static_cast<std::uint32_t>(b + 1);
      box.class_id = (b % 3 == 2) ? 6 : 1;
      box.center = {8.0 * b, 0.0, 0.0};
      box.dims = box.class_id == 1 ? Eigen::Vector3d(4.0, 1.8, 1.5) : Eigen::Vector3d(0.6, 0.6, 1.8);
      box.yaw = pos(rng);
      set.boxes.push_back(box);
      const int pts = 20 + static_cast<int>(rng() % 80);
      for (int k = 0; k < pts; ++k) {
        const Eigen::Vector3d local(0.45 * box.dims.x() * pos(rng), 0.45 * box.dims.y() * pos(rng),
                                    0.45 * box.dims.z() * pos(rng));
        const Eigen::Vector3d p = Pose::from_yaw(box.yaw, box.center).apply(local);
        members[static_cast<std::size_t>(b)].push_back(cloud.size());
        cloud.points.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()), 0.f});
      }
      seeded_moving[static_cast<std::size_t>(b)] = rng() % 2 == 0;
    }
    const std::size_t background_begin = cloud.size();
    for (int k = 0; k < 50; ++k) cloud.points.push_back({static_cast<float>(k), 40.0f, 0.0f, 0.0f});

    SceneState state;
    MotionLabels labels;
    RefineResult result;
    for (int frame = 0; frame < 3; ++frame) {
      labels.assign(cloud.size(), to_id(MotionState::kStatic));
      for (std::size_t k = background_begin; k < cloud.size(); ++k) labels[k] = static_cast<std::uint8_t>(1 + rng() % 2);
      for (int b = 0; b < n; ++b) {
        auto& idx = members[static_cast<std::size_t>(b)];
        std::shuffle(idx.begin(), idx.end(), rng);
        const double fraction = seeded_moving[static_cast<std::size_t>(b)] ? high(rng) : low(rng);
        const auto moving = static_cast<std::size_t>(fraction * static_cast<double>(idx.size()));
        for (std::size_t k = 0; k < moving; ++k) labels[idx[k]] = to_id(MotionState::kMoving);
      }
      if (frame == 2) {
        SceneState frozen = state;
        result = refine(cloud, set, labels, state, params, table());
        SceneState frozen_again = frozen;
        const auto again = refine(cloud, set, result.labels, frozen_again, params, table());
        if (again.labels != result.labels) ++not_idempotent;
      } else {
        result = refine(cloud, set, labels, state, params, table());
      }
    }
    for (int b = 0; b < n; ++b) {
      ++instances;
      const auto want = to_id(seeded_moving[static_cast<std::size_t>(b)] ? MotionState::kMoving : MotionState::kStatic);
      for (auto i : members[static_cast<std::size_t>(b)]) {
        if (result.labels[i] != want) {
          ++wrong;
          break;
        }
      }
    }
    for (std::size_t k = background_begin; k < cloud.size(); ++k) outside_changed += result.labels[k] != labels[k];
  }
  return {wrong == 0 && outside_changed == 0 && not_idempotent == 0,
          std::to_string(instances) + " instances, " + std::to_string(wrong) + " not uniform, " +
              std::to_string(outside_changed) + " outside points changed, " + std::to_string(not_idempotent) +
              " non-idempotent scenes"};
}

// 6. MSFM gating bound, channel-weight mean, gradient check.
Outcome msfm_math() {
  std::mt19937_64 rng(6);
  std::size_t violations = 0;
  double worst_mean = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = static_cast<Eigen::Index>(1 + rng() % 16);
    const auto w = FusionWeights<double>::random(rng(), 20, 26, 32, 1.0);
    const Mat s = random_matrix(m, 20, rng, 3.0);
    const Mat mo = random_matrix(m, 3, rng, 3.0);
    const auto t = msfm_trace(s, mo, w);
    violations += static_cast<std::size_t>((t.salient.cwiseAbs().array() > t.lifted.cwiseAbs().array()).count());
    worst_mean = std::max(worst_mean, std::abs(t.weights.mean() - 1.0));
  }
  const auto w0 = FusionWeights<double>::random(66, 20, 26, 32, 0.1);
  const Mat s = random_matrix(5, 20, rng, 1.0);
  const Mat mo = random_matrix(5, 3, rng, 1.0);
  const Mat g = random_matrix(5, 26, rng, 1.0);
  const auto n_weights = w0.flatten().size();
  auto f = [&](const std::vector<double>& x) {
    auto w = w0;
    w.unflatten(std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n_weights)));
    const Mat sx = Eigen::Map<const Mat>(x.data() + n_weights, 5, 20);
    const Mat mx = Eigen::Map<const Mat>(x.data() + n_weights + 100, 5, 3);
    const auto t = msfm_trace(sx, mx, w);
    const auto grads = msfm_backward(sx, mx, w, t, g);
    ValueAndGradient out;
    out.value = t.logits.cwiseProduct(g).sum();
    out.gradient = grads.weights.flatten();
    out.gradient.insert(out.gradient.end(), grads.semantic.data(), grads.semantic.data() + 100);
    out.gradient.insert(out.gradient.end(), grads.motion.data(), grads.motion.data() + 15);
    return out;
  };
  auto x = w0.flatten();
  x.insert(x.end(), s.data(), s.data() + 100);
  x.insert(x.end(), mo.data(), mo.data() + 15);
  const auto check = grad_check(f, x, 1e-4, 1e-6);
  return {violations == 0 && worst_mean <= 1e-9 && check.max_relative_error <= 1e-4,
          "1000 cases, " + std::to_string(violations) + " gating violations, max |mean(w) - 1| = " +
              fmt("%.2g", worst_mean) + ", grad check " + fmt("%.2g", check.max_relative_error) + " over " +
              std::to_string(x.size()) + " inputs"};
}

// 7. Loss oracles.
Outcome loss_oracles() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> freq(0.001, 1.0);
  double worst_ce = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto rows = static_cast<Eigen::Index>(1 + rng() % 20);
    const auto cols = static_cast<Eigen::Index>(2 + rng() % 25);
    const Mat z = random_matrix(rows, cols, rng, 2.0);
    std::vector<std::uint16_t> y(static_cast<std::size_t>(rows));
    for (auto& v : y) v = static_cast<std::uint16_t>(rng() % static_cast<std::uint64_t>(cols));
    std::vector<double> f(static_cast<std::size_t>(cols));
    for (auto& v : f) v = freq(rng);
    const auto alpha = class_weights_from_frequencies(f);
    double oracle = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      double denom = 0.0;
      for (Eigen::Index c = 0; c < cols; ++c) denom += std::exp(z(r, c));
      const auto target = y[static_cast<std::size_t>(r)];
      oracle -= (1.0 / std::sqrt(f[target])) * std::log(std::exp(z(r, target)) / denom);
    }
    oracle /= static_cast<double>(rows);
    worst_ce = std::max(worst_ce, std::abs(weighted_ce(z, y, alpha).value - oracle));
  }
  const auto spot = class_weights_from_frequencies({4.0, 0.01, 0.25});
  const bool alpha_ok = spot[0] == 0.5 && std::abs(spot[1] - 10.0) < 1e-12 && spot[2] == 2.0;
  const double mt_err = std::abs(multitask_loss({2.0}, {1.0}).total - (1.0 + std::log(2.0)));

  const std::vector<std::uint16_t> y = {0, 4, 2, 3, 1, 1};
  const std::vector<double> alpha = class_weights_from_frequencies({0.4, 0.3, 0.1, 0.15, 0.05});
  std::vector<double> x(30);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : x) v = n(rng);
  const auto ce_check = grad_check(
      [&](const std::vector<double>& p) {
        const auto l = weighted_ce(Mat(Eigen::Map<const Mat>(p.data(), 6, 5)), y, alpha);
        return ValueAndGradient{l.value, std::vector<double>(l.gradient.data(), l.gradient.data() + 30)};
      },
      x);
  const std::vector<double> losses = {0.7, 2.3, 1.1, 0.2};
  const auto mt_check = grad_check(
      [&](const std::vector<double>& s) {
        const auto r = multitask_loss(losses, s);
        return ValueAndGradient{r.total, r.d_sigma};
      },
      {0.5, 1.0, 1.7, 0.9});
  const double worst_grad = std::max(ce_check.max_relative_error, mt_check.max_relative_error);
  return {worst_ce <= 1e-9 && alpha_ok && mt_err <= 1e-12 && worst_grad <= 1e-6,
          "100 CE cases max error " + fmt("%.2g", worst_ce) + ", alpha spot check " + (alpha_ok ? "ok" : "wrong") +
              ", 1 + ln 2 error " + fmt("%.2g", mt_err) + ", grad checks " + fmt("%.2g", worst_grad)};
}

// 8. IoU and mIoU against a brute-force set computation.
Outcome metric_oracle() {
  std::mt19937_64 rng(8);
  constexpr std::size_t K = 26;
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 400;
    const std::size_t active = 1 + rng() % K;  // fewer active classes leave some absent
    std::vector<std::uint16_t> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<std::uint16_t>(rng() % active);
      pred[i] = static_cast<std::uint16_t>(rng() % 3 == 0 ? truth[i] : rng() % active);
    }
    ConfusionMatrix m(K);
    m.accumulate(truth, pred);
    double sum = 0.0;
    std::vector<std::size_t> classes(K);
    std::iota(classes.begin(), classes.end(), 0);
    for (std::size_t k = 0; k < K; ++k) {
      std::set<std::size_t> t, p, both, either;
      for (std::size_t i = 0; i < n; ++i) {
        if (truth[i] == k) t.insert(i);
        if (pred[i] == k) p.insert(i);
      }
      std::set_intersection(t.begin(), t.end(), p.begin(), p.end(), std::inserter(both, both.end()));
      std::set_union(t.begin(), t.end(), p.begin(), p.end(), std::inserter(either, either.end()));
      const double want = either.empty() ? 0.0 : static_cast<double>(both.size()) / static_cast<double>(either.size());
      mismatches += iou(m, k) != want;
      sum += want;
    }
    mismatches += miou(m, classes) != sum / static_cast<double>(K);
  }
  return {mismatches == 0, "1000 label pairs over 26 classes, " + std::to_string(mismatches) + " mismatches"};
}

// 9. Oracle predictor through the full pipeline. Bodies clear the ground by 10 cm.
Outcome end_to_end_oracle() {
  const auto spec = parse_synth_spec(nlohmann::json::parse(R"({
    "seed": 9, "frames": 20, "jitter": 0.02, "ego": {"velocity": [0.6, 0.05, 0.0], "yaw_rate": 0.004},
    "planes": [{"class": "road", "x": [-40, 40], "y": [-8, 8], "z": -1.7, "spacing": 0.3},
               {"class": "sidewalk", "x": [-40, 40], "y": [8, 12], "z": -1.5, "spacing": 0.3}],
    "boxes": [
      {"class": "car", "center": [8, -3, -0.85], "size": [4.5, 1.8, 1.5], "velocity": [1.1, 0, 0]},
      {"class": "car", "center": [-10, 3, -0.85], "size": [4.2, 1.7, 1.4], "yaw": 3.1, "velocity": [-0.8, 0, 0]},
      {"class": "car", "center": [-4, -4, -0.85], "size": [4.2, 1.7, 1.4], "yaw": 0.2},
      {"class": "truck", "center": [20, 4, -0.1], "size": [8.0, 2.5, 3.0], "velocity": [0.5, 0, 0], "spacing": 0.2},
      {"class": "person", "center": [3, 9.5, -0.5], "size": [0.6, 0.6, 1.8], "velocity": [0, -0.12, 0], "spacing": 0.08},
      {"class": "bicyclist", "center": [-15, 10, -0.55], "size": [1.8, 0.6, 1.7], "velocity": [0.3, 0, 0], "spacing": 0.08},
      {"class": "building", "center": [0, 16, 2], "size": [40, 4, 8], "spacing": 0.3}]})"),
                                     table());
  PipelineConfig config;
  config.predictor = PredictorKind::kOracle;
  Pipeline pipeline(config);
  const auto results = pipeline.run(SynthSource(spec, table()));
  const auto& m = pipeline.metrics().motion;
  const double moving_iou = iou(m, 2);
  std::size_t flipped = 0;
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.size(); ++i) flipped += r.motion[i] != r.motion_raw[i];
  }
  return {moving_iou == 1.0 && results.size() == 20,
          std::to_string(results.size()) + " frames, moving IoU " + fmt("%.6f", moving_iou) + " (TP " +
              std::to_string(m.true_positives(2)) + ", FP " + std::to_string(m.false_positives(2)) + ", FN " +
              std::to_string(m.false_negatives(2)) + "), refinement flipped " + std::to_string(flipped) + " labels"};
}

// 10. Throughput of encoding + fusion + refinement on a 120k-point scan.
Outcome throughput() {
  EncoderParams params;
  params.window = 3;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> ux(params.x_min, params.x_max), uy(params.y_min, params.y_max),
      uz(-2.0, 1.5);
  ScanSequence seq;
  for (int s = 0; s < 3; ++s) {
    PointCloud c;
    c.points.reserve(120000);
    for (int i = 0; i < 120000; ++i) {
      c.points.push_back({static_cast<float>(ux(rng)), static_cast<float>(uy(rng)), static_cast<float>(uz(rng)), 0.f});
    }
    seq.scans.push_back(std::move(c));
  }
  seq.relatives = {Pose::from_translation(0.8, 0.0, 0.0), Pose::from_translation(0.8, 0.0, 0.0)};
  const auto cm = static_cast<Eigen::Index>(table().multiscan_count());
  const auto c = static_cast<Eigen::Index>(table().semantic_count());
  const auto weights = FusionWeights<double>::random(10, c, cm, 32).cast<float>();
  const RowMatrix<float> semantic = random_matrix(120000, c, rng, 1.0).cast<float>();
  const RowMatrix<float> motion_logits = random_matrix(120000, 3, rng, 1.0).cast<float>();
  const auto motion = motion_labels_from_logits(motion_logits);
  InstanceSet instances;
  for (std::uint32_t b = 0; b < 30; ++b) {
    OrientedBox box;
    box.id = b + 1;
    box.class_id = 1;
    box.center = {ux(rng), uy(rng), -0.9};
    box.dims = {4.5, 1.8, 1.5};
    box.yaw = uz(rng);
    instances.boxes.push_back(box);
  }
  std::vector<double> encode_ms, fuse_ms, refine_ms, total_ms;
  for (int rep = 0; rep < 5; ++rep) {
    SceneState state;
    auto t0 = Clock::now();
    const auto enc = encode_motion_full(seq, params);
    encode_ms.push_back(ms_since(t0));
    t0 = Clock::now();
    const auto fused = msfm_forward(semantic, motion_logits, weights);
    fuse_ms.push_back(ms_since(t0));
    t0 = Clock::now();
    const auto refined = refine(seq.scans[0], instances, motion, state, RefinementParams{}, table());
    refine_ms.push_back(ms_since(t0));
    total_ms.push_back(encode_ms.back() + fuse_ms.back() + refine_ms.back());
    if (fused.labels.size() != 120000 || refined.labels.size() != 120000 || enc.motion.size() != 120000) {
      return {false, "unexpected output size"};
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double total = median(total_ms);
  return {total < 67.0, "median " + fmt("%.1f", total) + " ms (encode " + fmt("%.1f", median(encode_ms)) +
                            ", fusion " + fmt("%.1f", median(fuse_ms)) + ", refine " + fmt("%.1f", median(refine_ms)) +
                            ") vs 67 ms budget, reported only"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    bool gated;
  };
  const Criterion criteria[] = {
      {1, "static-scene null test", static_null, true},
      {2, "moving-box residual oracle", moving_box_residuals, true},
      {3, "pillar law", pillar_law, true},
      {4, "box-generation fidelity", box_generation, true},
      {5, "refinement completeness", refinement_completeness, true},
      {6, "MSFM math", msfm_math, true},
      {7, "loss oracles", loss_oracles, true},
      {8, "metric oracle", metric_oracle, true},
      {9, "end-to-end oracle pipeline", end_to_end_oracle, true},
      {10, "throughput", throughput, false},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.name << " - " << o.detail
              << std::endl;
    if (!o.pass && c.gated) ++failures;
  }
  std::cout << (failures == 0 ? "acceptance: all gated criteria passed" : "acceptance: gated criteria failed: " +
                                                                                 std::to_string(failures))
            << std::endl;
  return failures == 0 ? 0 : 1;
}
