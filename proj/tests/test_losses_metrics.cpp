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

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "seg4d/grad_check.hpp"
#include "seg4d/losses.hpp"
#include "seg4d/metrics.hpp"

namespace seg4d {
namespace {

using Mat = RowMatrix<double>;

TEST(ConfusionMatrix, CountsCells) {
  ConfusionMatrix m(3);
  m.accumulate(std::vector<int>{1, 1}, std::vector<int>{1, 2});
  EXPECT_EQ(m.at(1, 1), 1u);
  EXPECT_EQ(m.at(1, 2), 1u);
  EXPECT_EQ(m.total(), 2u);
  EXPECT_THROW(m.accumulate(std::vector<int>{1}, std::vector<int>{3}), ContractError);
  EXPECT_THROW(m.accumulate(std::vector<int>{1}, std::vector<int>{}), ContractError);
}

TEST(ConfusionMatrix, IgnoresIgnoreClassTruth) {
  ConfusionMatrix m(3, 0);
  const ConfusionMatrix before = m;
  m.accumulate(std::vector<int>{0, 0, 0}, std::vector<int>{1, 2, 0});
  EXPECT_EQ(m, before);
}

TEST(ConfusionMatrix, OrderIndependentAndMergeable) {
  std::mt19937 rng(1);
  std::vector<int> t(500), p(500);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<int>(rng() % 5);
    p[i] = static_cast<int>(rng() % 5);
  }
  ConfusionMatrix whole(5, 0);
  whole.accumulate(t, p);

  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> ts, ps;
  for (auto i : order) {
    ts.push_back(t[i]);
    ps.push_back(p[i]);
  }
  ConfusionMatrix shuffled(5, 0);
  shuffled.accumulate(ts, ps);
  EXPECT_EQ(shuffled, whole);

  ConfusionMatrix a(5, 0), b(5, 0);
  a.accumulate(std::vector<int>(t.begin(), t.begin() + 200), std::vector<int>(p.begin(), p.begin() + 200));
  b.accumulate(std::vector<int>(t.begin() + 200, t.end()), std::vector<int>(p.begin() + 200, p.end()));
  a += b;
  EXPECT_EQ(a, whole);
  EXPECT_THROW(a += ConfusionMatrix(4), ContractError);
}

TEST(Iou, HandComputedCases) {
  // Class 1: TP=3, FP=1, FN=1.
  ConfusionMatrix m(3);
  m.accumulate(std::vector<int>{1, 1, 1, 1, 0}, std::vector<int>{1, 1, 1, 0, 1});
  EXPECT_DOUBLE_EQ(iou(m, 1), 0.6);
  EXPECT_DOUBLE_EQ(iou(m, 2), 0.0);
  EXPECT_THROW(iou(m, 3), ContractError);

  ConfusionMatrix perfect(3);
  perfect.accumulate(std::vector<int>{0, 1, 2, 2}, std::vector<int>{0, 1, 2, 2});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(iou(perfect, k), 1.0);
}

TEST(Miou, MeanOfListedClasses) {
  ConfusionMatrix m(3);
  m.accumulate(std::vector<int>{1, 1, 1, 1, 0, 2}, std::vector<int>{1, 1, 1, 0, 1, 2});
  EXPECT_DOUBLE_EQ(miou(m, {1, 2}), 0.8);
  EXPECT_DOUBLE_EQ(miou(m, {2}), iou(m, 2));
  EXPECT_THROW(miou(m, {}), ContractError);
  EXPECT_EQ(evaluated_classes(ConfusionMatrix(4, 0)), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Miou, MatchesSetOracle) {
  std::mt19937 rng(2);
  constexpr std::size_t K = 26;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t(200), p(200);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<int>(rng() % K);
      p[i] = static_cast<int>(rng() % K);
    }
    ConfusionMatrix m(K);
    m.accumulate(t, p);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      std::set<std::size_t> truth, pred, both, either;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (static_cast<std::size_t>(t[i]) == k) truth.insert(i);
        if (static_cast<std::size_t>(p[i]) == k) pred.insert(i);
      }
      std::set_intersection(truth.begin(), truth.end(), pred.begin(), pred.end(), std::inserter(both, both.end()));
      std::set_union(truth.begin(), truth.end(), pred.begin(), pred.end(), std::inserter(either, either.end()));
      const double want = either.empty() ? 0.0 : static_cast<double>(both.size()) / static_cast<double>(either.size());
      EXPECT_EQ(iou(m, k), want);
      sum += want;
    }
    std::vector<std::size_t> all(K);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_NEAR(miou(m, all), sum / K, 1e-15);
  }
}

TEST(MetricsReport, KeyValueAndText) {
  ConfusionMatrix m(3, 0);
  m.accumulate(std::vector<int>{1, 1, 1, 1, 2, 0}, std::vector<int>{1, 1, 1, 2, 2, 1});
  std::ostringstream kv;
  write_metrics_report(kv, m, {"unlabeled", "static", "moving"}, "mos", ReportFormat::kKeyValue);
  EXPECT_EQ(kv.str(), "mos.iou.static=0.750000\nmos.iou.moving=0.500000\nmos.miou=0.625000\nmos.points=5\n");
  std::ostringstream text;
  write_metrics_report(text, m, {"unlabeled", "static"}, "mos", ReportFormat::kText);
  EXPECT_NE(text.str().find("class2"), std::string::npos);
  EXPECT_NE(text.str().find("62.50"), std::string::npos);
}

double scalar_weighted_ce(const Mat& z, const std::vector<std::uint16_t>& y, const std::vector<double>& alpha) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double denom = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) denom += std::exp(z(r, c));
    const double p = std::exp(z(r, y[static_cast<std::size_t>(r)])) / denom;
    total += -alpha[y[static_cast<std::size_t>(r)]] * std::log(p);
  }
  return total / static_cast<double>(z.rows());
}

TEST(WeightedCe, EqualLogitsGiveLnTwo) {
  const Mat z = Mat::Zero(3, 2);
  const auto l = weighted_ce(z, {0, 1, 1}, {1.0, 1.0});
  EXPECT_NEAR(l.value, std::log(2.0), 1e-15);
}

TEST(WeightedCe, AlphaFromFrequencies) {
  const auto alpha = class_weights_from_frequencies({4.0, 0.25});
  EXPECT_DOUBLE_EQ(alpha[0], 0.5);
  EXPECT_DOUBLE_EQ(alpha[1], 2.0);
  EXPECT_THROW(class_weights_from_frequencies({1.0, 0.0}), ContractError);
  const auto f = class_frequencies({0, 1, 1, 1}, 3);
  EXPECT_DOUBLE_EQ(f[1], 0.75);
  EXPECT_DOUBLE_EQ(f[2], 1e-6);
}

TEST(WeightedCe, MatchesScalarOracleAndIsNonNegative) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index rows = 1 + static_cast<Eigen::Index>(rng() % 8), cols = 2 + static_cast<Eigen::Index>(rng() % 6);
    Mat z(rows, cols);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
    std::vector<std::uint16_t> y(static_cast<std::size_t>(rows));
    for (auto& v : y) v = static_cast<std::uint16_t>(rng() % static_cast<unsigned>(cols));
    std::vector<double> alpha(static_cast<std::size_t>(cols));
    for (auto& a : alpha) a = u(rng);
    const auto l = weighted_ce(z, y, alpha);
    EXPECT_NEAR(l.value, scalar_weighted_ce(z, y, alpha), 1e-9);
    EXPECT_GE(l.value, 0.0);
    const auto unit = weighted_ce(z, y, std::vector<double>(alpha.size(), 1.0));
    EXPECT_NEAR(unit.value, scalar_weighted_ce(z, y, std::vector<double>(alpha.size(), 1.0)), 1e-12);
  }
}

TEST(WeightedCe, GradientMatchesFiniteDifferences) {
  std::mt19937 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::vector<std::uint16_t> y = {0, 3, 2, 2, 1};
  const std::vector<double> alpha = {0.5, 1.0, 2.0, 0.7};
  std::vector<double> x(20);
  for (auto& v : x) v = n(rng);
  auto f = [&](const std::vector<double>& flat) {
    const Mat z = Eigen::Map<const Mat>(flat.data(), 5, 4);
    const auto l = weighted_ce(z, y, alpha);
    ValueAndGradient out;
    out.value = l.value;
    out.gradient.assign(l.gradient.data(), l.gradient.data() + l.gradient.size());
    return out;
  };
  EXPECT_LE(grad_check(f, x).max_relative_error, 1e-6);
}

TEST(WeightedCe, IgnoreAndContracts) {
  const Mat z = Mat::Zero(2, 2);
  const auto l = weighted_ce(z, {0, 1}, {1.0, 1.0}, 0);
  EXPECT_NEAR(l.value, std::log(2.0), 1e-15);
  EXPECT_EQ(l.gradient.row(0).cwiseAbs().sum(), 0.0);
  EXPECT_THROW(weighted_ce(z, {0}, {1.0, 1.0}), ContractError);
  EXPECT_THROW(weighted_ce(z, {0, 2}, {1.0, 1.0}), ContractError);
  EXPECT_THROW(weighted_ce(z, {0, 1}, {1.0}), ContractError);
}

TEST(MultitaskLoss, HandComputedValues) {
  const auto one = multitask_loss({2.0}, {1.0});
  EXPECT_NEAR(one.total, 1.0 + std::log(2.0), 1e-12);
  const auto zero = multitask_loss({0.0, 0.0}, {0.5, 2.0});
  EXPECT_NEAR(zero.total, std::log(1.25) + std::log(5.0), 1e-12);
  EXPECT_TRUE(multitask_loss({}, {}).total == 0.0);
  EXPECT_THROW(multitask_loss({1.0}, {0.0}), ContractError);
  EXPECT_THROW(multitask_loss({1.0}, {-1.0}), ContractError);
  EXPECT_THROW(multitask_loss({1.0, 2.0}, {1.0}), ContractError);
}

TEST(MultitaskLoss, SigmaGradientAndLowerBound) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  const std::vector<double> losses = {u(rng), u(rng), u(rng), u(rng)};
  std::vector<double> sigmas = {u(rng), u(rng), u(rng), u(rng)};
  auto f = [&](const std::vector<double>& s) {
    const auto r = multitask_loss(losses, s);
    return ValueAndGradient{r.total, r.d_sigma};
  };
  EXPECT_LE(grad_check(f, sigmas).max_relative_error, 1e-6);
  double bound = 0.0;
  for (double s : sigmas) bound += std::log(1.0 + s * s);
  EXPECT_GE(multitask_loss(losses, sigmas).total, bound);
}

TEST(GradCheck, ExactForLinearAndRejectsNonFinite) {
  const std::vector<double> a = {1.5, -2.0, 0.25};
  auto linear = [&](const std::vector<double>& x) {
    return ValueAndGradient{a[0] * x[0] + a[1] * x[1] + a[2] * x[2], a};
  };
  EXPECT_LE(grad_check(linear, {0.3, -0.7, 2.0}, 1e-3).max_relative_error, 1e-10);
  auto bad = [](const std::vector<double>&) {
    return ValueAndGradient{std::numeric_limits<double>::quiet_NaN(), {0.0}};
  };
  EXPECT_THROW(grad_check(bad, {1.0}), Error);
  auto wrong_size = [](const std::vector<double>&) { return ValueAndGradient{1.0, {}}; };
  EXPECT_THROW(grad_check(wrong_size, {1.0}), ContractError);
}

}  // namespace
}  // namespace seg4d
