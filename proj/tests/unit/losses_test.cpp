// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "msq/errors.hpp"
#include "msq/graph.hpp"
#include "msq/losses.hpp"
#include "oracles.hpp"
#include "random_maps.hpp"

namespace msq {
namespace {

using testing::random_probs;
using testing::random_tensor;
using testing::uniform_size;

ProbMap one_row(double a, double b) { return ProbMap(1, 2, {a, b}); }
ProbMap uniform(std::size_t n, std::size_t c) {
  return ProbMap(n, c, std::vector<double>(n * c, 1.0 / static_cast<double>(c)));
}

TEST(CrossEntropy, Examples) {
  EXPECT_EQ(cross_entropy(ProbMap(2, 2, {1, 0, 0, 1}), LabelMap({0, 1})).value, 0.0);
  EXPECT_NEAR(cross_entropy(uniform(3, 2), LabelMap({0, 1, 1})).value, oracle::kLn2, 1e-12);
  EXPECT_NEAR(cross_entropy(one_row(0.9, 0.1), LabelMap({0})).value, oracle::kNegLog09, 1e-12);
}

TEST(CrossEntropy, AbstainExcludedFromNormalizer) {
  const ProbMap p(3, 2, {0.9, 0.1, 0.2, 0.8, 0.5, 0.5});
  const LossResult r = cross_entropy(p, LabelMap({0, kAbstain, kAbstain}));
  EXPECT_NEAR(r.value, oracle::kNegLog09, 1e-12);
  EXPECT_EQ(r.grad_wrt_probs.at(1, 1), 0.0);
  EXPECT_EQ(r.grad_wrt_probs.at(2, 0), 0.0);
}

TEST(CrossEntropy, AllAbstainIsZeroWithWarning) {
  const LossResult r = cross_entropy(uniform(4, 3), LabelMap::abstaining(4));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.warning);
}

TEST(CrossEntropy, LengthMismatch) {
  EXPECT_THROW(cross_entropy(uniform(2, 2), LabelMap({0})), ShapeError);
}

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy_loss(ProbMap(2, 3, {1, 0, 0, 0, 0, 1})).value, 0.0);
  EXPECT_NEAR(entropy_loss(uniform(5, 2)).value, oracle::kLn2, 1e-12);
  EXPECT_NEAR(entropy_loss(one_row(0.9, 0.1)).value, oracle::kEntropy09, 1e-12);
}

TEST(BinaryEntropyGrad, Examples) {
  EXPECT_EQ(binary_entropy_grad(0.5), 0.0);
  EXPECT_NEAR(binary_entropy_grad(0.75), oracle::kLn3, 1e-12);
  EXPECT_NEAR(binary_entropy_grad(0.9), oracle::kLn9, 1e-12);
  EXPECT_THROW(binary_entropy_grad(0.0), DomainError);
  EXPECT_THROW(binary_entropy_grad(1.0), DomainError);
}

TEST(BinaryEntropyGrad, MatchesFiniteDifferenceOfBinaryEntropy) {
  const auto h = [](double p) { return -(p * std::log(p) + (1 - p) * std::log(1 - p)); };
  for (double p : {0.6, 0.75, 0.9}) {
    const double eps = 1e-6;
    const double fd = std::abs((h(p + eps) - h(p - eps)) / (2 * eps));
    EXPECT_NEAR(binary_entropy_grad(p), fd, 1e-9) << p;
  }
}

TEST(ScaledEntropy, Examples) {
  EXPECT_NEAR(scaled_entropy_loss(uniform(3, 2), 0.1).value, oracle::kLn2, 1e-12);
  EXPECT_NEAR(scaled_entropy_loss(uniform(3, 2), 0.4).value, oracle::kLn2, 1e-12);
  const ProbMap p(2, 3, {0.7, 0.2, 0.1, 0.3, 0.3, 0.4});
  EXPECT_NEAR(scaled_entropy_loss(p, 1e-9).value, entropy_loss(p).value, 1e-7);
  EXPECT_THROW(scaled_entropy_loss(p, 0.0), DomainError);
  EXPECT_THROW(scaled_entropy_loss(p, 0.5), DomainError);
}

TEST(ScaledEntropy, BinaryGradientBound) {
  double sup = 0.0;
  for (int i = 0; i <= 10000; ++i) sup = std::max(sup, binary_scaled_entropy_grad(i / 10000.0, 0.1));
  EXPECT_LE(sup, oracle::kScaledBound + 1e-9);
  EXPECT_NEAR(binary_scaled_entropy_grad(0.9, 0.1), oracle::kScaledGrad09, 1e-12);
}

TEST(MaxSquares, Examples) {
  EXPECT_EQ(max_squares_loss(one_row(1.0, 0.0)).value, -0.5);
  EXPECT_EQ(max_squares_loss(one_row(0.5, 0.5)).value, -0.25);
  EXPECT_NEAR(max_squares_loss(one_row(0.9, 0.1)).value, -0.41, 1e-15);
}

TEST(BinaryMaxSquareGrad, Examples) {
  EXPECT_EQ(binary_maxsquare_grad(0.5), 0.0);
  EXPECT_EQ(binary_maxsquare_grad(0.9), 4.0 * 0.9 - 2.0);
  EXPECT_NEAR(binary_maxsquare_grad(0.9), 1.6, 1e-15);
  EXPECT_EQ(binary_maxsquare_grad(1.0), 2.0);
  EXPECT_THROW(binary_maxsquare_grad(1.5), DomainError);
}

TEST(BinaryGrads, EntropyDominatesWithGrowingRatio) {
  double prev_ratio = 0.0;
  for (int k = 1; k <= 99; ++k) {
    const double p = 0.5 + 0.005 * k;
    const double e = binary_entropy_grad(p), m = binary_maxsquare_grad(p);
    EXPECT_GE(e, m) << p;
    EXPECT_GT(e / m, prev_ratio) << p;
    prev_ratio = e / m;
  }
}

TEST(PearsonChi2, Examples) {
  EXPECT_NEAR(pearson_chi2_uniform(uniform(1, 5))[0], 0.0, 1e-15);
  EXPECT_EQ(pearson_chi2_uniform(ProbMap(1, 4, {0, 0, 1, 0}))[0], 3.0);
  EXPECT_NEAR(pearson_chi2_uniform(one_row(0.9, 0.1))[0], 0.64, 1e-15);
}

TEST(PearsonChi2, IdentityWithMaxSquares) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = uniform_size(1, 16, rng), c = uniform_size(2, 8, rng);
    const ProbMap p = random_probs(n, c, rng);
    const auto d = pearson_chi2_uniform(p);
    const double mean_d = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    EXPECT_NEAR(max_squares_loss(p).value, -(mean_d + 1.0) / (2.0 * static_cast<double>(c)), 1e-12);
  }
}

TEST(Bounds, PerPixelRanges) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 200; ++t) {
    const std::size_t c = uniform_size(2, 8, rng);
    const ProbMap p = random_probs(1, c, rng, 4.0);
    const double cd = static_cast<double>(c);
    const double ms = -max_squares_loss(p).value;
    EXPECT_GE(ms, 1.0 / (2.0 * cd) - 1e-15);
    EXPECT_LE(ms, 0.5);
    const double h = entropy_loss(p).value;
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(cd) + 1e-12);
    const double d = pearson_chi2_uniform(p)[0];
    EXPECT_GE(d, -1e-12);
    EXPECT_LE(d, cd - 1.0 + 1e-12);
  }
}

TEST(ClassCounts, Examples) {
  EXPECT_EQ(class_counts(ProbMap(3, 2, {0.9, 0.1, 0.6, 0.4, 0.2, 0.8})).counts, (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(class_counts(one_row(0.5, 0.5)).counts, (std::vector<std::size_t>{1, 0}));
  const ClassCounts all = class_counts(ProbMap(3, 3, {0.5, 0.3, 0.2, 0.6, 0.2, 0.2, 0.9, 0.05, 0.05}));
  EXPECT_EQ(all.counts, (std::vector<std::size_t>{3, 0, 0}));
  EXPECT_EQ(all.total, 3u);
}

TEST(IwMaxSquares, HandExpansion) {
  const ProbMap p(4, 2, {1, 0, 1, 0, 1, 0, 0, 1});
  EXPECT_EQ(iw_max_squares_loss(p, 1.0).value, -1.0);
  EXPECT_EQ(iw_max_squares_loss(p, 0.0).value, -0.5);
  EXPECT_THROW(iw_max_squares_loss(p, -0.1), DomainError);
  EXPECT_THROW(iw_max_squares_loss(p, 1.1), DomainError);
}

TEST(IwMaxSquares, AlphaZeroIsBitwiseMaxSquares) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 100; ++t) {
    const ProbMap p = random_probs(uniform_size(1, 16, rng), uniform_size(2, 8, rng), rng);
    const LossResult a = iw_max_squares_loss(p, 0.0), b = max_squares_loss(p);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.grad_wrt_probs, b.grad_wrt_probs);
  }
}

TEST(IwMaxSquares, AbsentClassesUseClampedCount) {
  // counts (2, 0, 0): classes 1 and 2 contribute with a denominator of 1
  const ProbMap p(2, 3, {0.8, 0.1, 0.1, 0.6, 0.3, 0.1});
  const double alpha = 0.5, n = 2.0;
  const double expected = -((0.64 + 0.36) / (2 * std::pow(2.0, alpha) * std::pow(n, 1 - alpha)) +
                            (0.01 + 0.09) / (2 * std::pow(n, 1 - alpha)) + (0.01 + 0.01) / (2 * std::pow(n, 1 - alpha)));
  EXPECT_NEAR(iw_max_squares_loss(p, alpha).value, expected, 1e-15);
}

TEST(Losses, PermutationInvariance) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = uniform_size(2, 16, rng), c = uniform_size(2, 6, rng);
    const ProbMap p = random_probs(n, c, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> shuffled;
    std::vector<std::int32_t> y, y_shuffled;
    for (std::size_t i = 0; i < n; ++i) y.push_back(static_cast<std::int32_t>(i % c));
    for (std::size_t i : perm) {
      for (double v : p.row(i)) shuffled.push_back(v);
      y_shuffled.push_back(y[i]);
    }
    const ProbMap q(n, c, shuffled);
    EXPECT_NEAR(cross_entropy(p, LabelMap(y)).value, cross_entropy(q, LabelMap(y_shuffled)).value, 1e-12);
    EXPECT_NEAR(entropy_loss(p).value, entropy_loss(q).value, 1e-12);
    EXPECT_NEAR(max_squares_loss(p).value, max_squares_loss(q).value, 1e-12);
    EXPECT_NEAR(iw_max_squares_loss(p, 0.2).value, iw_max_squares_loss(q, 0.2).value, 1e-12);
  }
}

class LossGradient : public ::testing::TestWithParam<TargetLoss> {};

TEST_P(LossGradient, AgreesWithFiniteDifferencesThroughSoftmax) {
  LossConfig cfg;
  cfg.kind = GetParam();
  std::mt19937_64 rng(15);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = uniform_size(1, 16, rng), c = uniform_size(2, 8, rng);
    Graph g;
    const NodeId z = g.parameter("z", {n, c});
    const NodeId l = g.loss(g.softmax_rows(z), [cfg](const ProbMap& p) { return target_loss(p, cfg); });
    worst = std::max(worst, finite_diff_check(g, {}, {{"z", random_tensor({n, c}, rng)}}, l, 1e-6));
  }
  EXPECT_LE(worst, 1e-6);
}

INSTANTIATE_TEST_SUITE_P(AllTargetLosses, LossGradient,
                         ::testing::Values(TargetLoss::Entropy, TargetLoss::ScaledEntropy, TargetLoss::MaxSquares,
                                           TargetLoss::IwMaxSquares));

TEST(CrossEntropyGradient, AgreesWithFiniteDifferences) {
  std::mt19937_64 rng(16);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = uniform_size(1, 16, rng), c = uniform_size(2, 8, rng);
    std::vector<std::int32_t> y(n);
    for (auto& v : y) v = static_cast<std::int32_t>(uniform_size(0, c - 1, rng));
    const LabelMap labels(y);
    Graph g;
    const NodeId z = g.parameter("z", {n, c});
    const NodeId l = g.loss(g.softmax_rows(z), [labels](const ProbMap& p) { return cross_entropy(p, labels); });
    worst = std::max(worst, finite_diff_check(g, {}, {{"z", random_tensor({n, c}, rng)}}, l, 1e-6));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(TargetLossSelector, ParsesNames) {
  EXPECT_EQ(parse_target_loss("entropy"), TargetLoss::Entropy);
  EXPECT_EQ(parse_target_loss("scaled"), TargetLoss::ScaledEntropy);
  EXPECT_EQ(parse_target_loss("maxsquare"), TargetLoss::MaxSquares);
  EXPECT_EQ(parse_target_loss("maxsquare_iw"), TargetLoss::IwMaxSquares);
  EXPECT_THROW(parse_target_loss("focal"), ConfigError);
  for (auto k : {TargetLoss::Entropy, TargetLoss::ScaledEntropy, TargetLoss::MaxSquares, TargetLoss::IwMaxSquares}) {
    EXPECT_EQ(parse_target_loss(target_loss_name(k)), k);
  }
}

TEST(UdaObjective, Examples) {
  const ProbMap src = one_row(0.9, 0.1);
  const LabelMap y({0});
  const ProbMap tgt = one_row(0.9, 0.1);
  LossConfig cfg;
  EXPECT_EQ(uda_objective(src, y, tgt, cfg, 0.0).value, cross_entropy(src, y).value);
  EXPECT_NEAR(uda_objective(src, y, tgt, cfg, 0.1).value, oracle::kUdaExample, 1e-12);
  EXPECT_THROW(uda_objective(src, y, tgt, cfg, -1.0), DomainError);
}

}  // namespace
}  // namespace msq
