#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "xrseg/metrics.hpp"

using xrseg::Tensor;

namespace {

Tensor<double> quad_pred() { return Tensor<double>::from({1, 0, 1, 1}, {2, 2}); }
Tensor<double> quad_truth() { return Tensor<double>::from({1, 1, 1, 0}, {2, 2}); }

}  // namespace

TEST(Confusion, TwoByTwoExample) {
  auto c = xrseg::confusion_counts(quad_pred(), quad_truth());
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 0u);

  auto m = xrseg::derive_metrics(c);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.specificity, 0.0);
  EXPECT_DOUBLE_EQ(m.sensitivity, m.recall);
  EXPECT_DOUBLE_EQ(m.dice, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.jaccard, 0.5);
  EXPECT_FALSE(m.degenerate);
}

TEST(Confusion, ThresholdBoundariesAreInclusive) {
  auto pred = Tensor<double>::from({0.5, 0.49999}, {2});
  auto truth = Tensor<double>::from({0.5, 0.5}, {2});
  auto c = xrseg::confusion_counts(pred, truth);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fn, 1u);

  auto low = xrseg::confusion_counts(pred, truth, 0.3);
  EXPECT_EQ(low.tp, 2u);
}

TEST(Confusion, ZeroOverZeroResolvesToZeroAndFlags) {
  auto zeros = Tensor<double>::zeros({4});
  auto m = xrseg::derive_metrics(xrseg::confusion_counts(zeros, zeros));
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(m.precision, 0.0);
  EXPECT_DOUBLE_EQ(m.recall, 0.0);
  EXPECT_DOUBLE_EQ(m.f1, 0.0);
  EXPECT_DOUBLE_EQ(m.specificity, 1.0);
  EXPECT_TRUE(m.degenerate);
}

TEST(Confusion, MismatchedShapesRejected) {
  auto a = Tensor<double>::zeros({2, 2});
  auto b = Tensor<double>::zeros({4});
  EXPECT_THROW(xrseg::confusion_counts(a, b), xrseg::Error);
}

TEST(SoftOverlap, TwoByTwoExample) {
  EXPECT_NEAR(xrseg::dice_coef(quad_pred(), quad_truth()), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(xrseg::jaccard_coef(quad_pred(), quad_truth()), 0.5, 1e-12);
}

TEST(SoftOverlap, EmptyAgainstEmptyIsPerfect) {
  auto z = Tensor<double>::zeros({3, 3});
  EXPECT_DOUBLE_EQ(xrseg::dice_coef(z, z), 1.0);
  EXPECT_DOUBLE_EQ(xrseg::jaccard_coef(z, z), 1.0);
}

TEST(SoftOverlap, SymmetricInArguments) {
  std::mt19937 rng(2);
  auto a = Tensor<double>::zeros({5, 7});
  auto b = Tensor<double>::zeros({5, 7});
  oracle::fill_uniform(a, rng, 0.0, 1.0);
  oracle::fill_uniform(b, rng, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(xrseg::dice_coef(a, b), xrseg::dice_coef(b, a));
  EXPECT_DOUBLE_EQ(xrseg::jaccard_coef(a, b), xrseg::jaccard_coef(b, a));
}

// 1000 random 16x16 prediction/truth pairs; every metric must match a
// separately written tally and the textbook formulas.
TEST(MetricsOracle, ThousandRandomPairs) {
  std::mt19937 rng(123);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    auto pred = Tensor<double>::zeros({16, 16});
    auto truth = Tensor<double>::zeros({16, 16});
    for (auto& v : pred.vals()) v = uni(rng);
    for (auto& v : truth.vals()) v = uni(rng) < 0.5 ? 0.0 : 1.0;
    const double thr = 0.1 + 0.8 * uni(rng);

    const auto got = xrseg::confusion_counts(pred, truth, thr);
    const auto want = oracle::confusion(pred, truth, thr);
    ASSERT_EQ(got.tp, want.tp);
    ASSERT_EQ(got.fp, want.fp);
    ASSERT_EQ(got.fn, want.fn);
    ASSERT_EQ(got.tn, want.tn);
    ASSERT_EQ(got.tp + got.fp + got.fn + got.tn, 256u);

    const auto m = xrseg::derive_metrics(got);
    const double tp = (double)want.tp, fp = (double)want.fp,
                 fn = (double)want.fn, tn = (double)want.tn;
    ASSERT_NEAR(m.accuracy, (tp + tn) / 256.0, 1e-12);
    if (tp + fp > 0) {
      ASSERT_NEAR(m.precision, tp / (tp + fp), 1e-12);
    }
    if (tp + fn > 0) {
      ASSERT_NEAR(m.recall, tp / (tp + fn), 1e-12);
    }
    if (tn + fp > 0) {
      ASSERT_NEAR(m.specificity, tn / (tn + fp), 1e-12);
    }
    if (2 * tp + fp + fn > 0) {
      ASSERT_NEAR(m.dice, 2 * tp / (2 * tp + fp + fn), 1e-12);
      ASSERT_NEAR(m.jaccard, tp / (tp + fp + fn), 1e-12);
      ASSERT_NEAR(m.f1, m.dice, 1e-9);
      ASSERT_LE(m.jaccard, m.dice + 1e-12);
    }

    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < 256; ++i) {
      inter += pred.vals()[i] * truth.vals()[i];
      sp += pred.vals()[i];
      st += truth.vals()[i];
    }
    const double sd = xrseg::dice_coef(pred, truth);
    const double sj = xrseg::jaccard_coef(pred, truth);
    ASSERT_NEAR(sd, 2 * inter / (sp + st), 1e-9);
    ASSERT_NEAR(sj, inter / (sp + st - inter), 1e-9);
    ASSERT_NEAR(sd, 2 * sj / (1 + sj), 1e-9);
    ASSERT_LE(sj, sd + 1e-12);
  }
}

TEST(Losses, DiceLossIsComplementOfSoftDice) {
  std::mt19937 rng(4);
  auto pred = Tensor<double>::zeros({8, 8});
  auto truth = Tensor<double>::zeros({8, 8});
  oracle::fill_uniform(pred, rng, 0.0, 1.0);
  for (auto& v : truth.vals()) v = (rng() & 1) ? 1.0 : 0.0;
  const double loss = xrseg::dice_loss(pred, truth).item();
  const double dice = xrseg::dice_coef(pred, truth, 1e-6);
  EXPECT_NEAR(1.0 - loss, dice, 1e-12);
}

TEST(Losses, PerfectPredictionHasNearZeroDiceLoss) {
  auto t = Tensor<float>::from({1, 0, 1, 1, 0, 0, 1, 0}, {8});
  EXPECT_LT(xrseg::dice_loss(t, t).item(), 1e-7f);
  auto z = Tensor<float>::zeros({8});
  EXPECT_LT(xrseg::dice_loss(z, z).item(), 1e-7f);
}

TEST(Losses, UniformHalfPredictionGivesLogTwoBce) {
  auto pred = Tensor<double>::full({4, 4}, 0.5);
  auto truth = Tensor<double>::zeros({4, 4});
  std::mt19937 rng(5);
  for (auto& v : truth.vals()) v = (rng() & 1) ? 1.0 : 0.0;
  EXPECT_NEAR(xrseg::bce_loss(pred, truth).item(), std::log(2.0), 1e-12);
}

TEST(Losses, BceClampsExtremePredictions) {
  auto pred = Tensor<double>::from({0.0, 1.0}, {2});
  auto truth = Tensor<double>::from({1.0, 0.0}, {2});
  const double loss = xrseg::bce_loss(pred, truth).item();
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, -std::log(1e-7), 1e-6);
}

TEST(Losses, MismatchedShapesRejected) {
  auto a = Tensor<double>::zeros({2});
  auto b = Tensor<double>::zeros({3});
  EXPECT_THROW(xrseg::dice_loss(a, b), xrseg::Error);
  EXPECT_THROW(xrseg::bce_loss(a, b), xrseg::Error);
}

TEST(Curve, FrozenExample) {
  const std::vector<double> scores = {0.2, 0.6, 0.6, 1.0};
  auto pts = xrseg::cumulative_curve(scores, 10);
  ASSERT_EQ(pts.size(), 10u);
  EXPECT_NEAR(pts[0].threshold, 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(pts[0].fraction, 0.0);
  EXPECT_NEAR(pts[1].threshold, 0.2, 1e-12);
  EXPECT_DOUBLE_EQ(pts[1].fraction, 0.25);
  EXPECT_NEAR(pts[5].threshold, 0.6, 1e-12);
  EXPECT_DOUBLE_EQ(pts[5].fraction, 0.75);
  EXPECT_NEAR(pts[9].threshold, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(pts[9].fraction, 1.0);
}

TEST(Curve, PointMassJumpsAtItsValue) {
  auto pts = xrseg::cumulative_curve(std::vector<double>(5, 0.35), 10);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(pts[(std::size_t)i].fraction, 0.0);
  for (int i = 3; i < 10; ++i) EXPECT_DOUBLE_EQ(pts[(std::size_t)i].fraction, 1.0);
}

TEST(Curve, IsAValidCdfOnRandomScores) {
  std::mt19937 rng(6);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> scores(40);
  for (auto& s : scores) s = uni(rng);
  auto pts = xrseg::cumulative_curve(scores, 25);
  ASSERT_EQ(pts.size(), 25u);
  double prev = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_NEAR(pts[i].threshold, (double)(i + 1) / 25.0, 1e-12);
    EXPECT_GE(pts[i].fraction, prev);
    std::size_t k = 0;
    for (double s : scores)
      if (s <= pts[i].threshold) ++k;
    EXPECT_DOUBLE_EQ(pts[i].fraction, (double)k / 40.0);
    prev = pts[i].fraction;
  }
  EXPECT_DOUBLE_EQ(pts.back().fraction, 1.0);
}

TEST(Curve, DefaultsToHundredPointsAndRejectsEmpty) {
  EXPECT_EQ(xrseg::cumulative_curve({0.5}).size(), 100u);
  EXPECT_THROW(xrseg::cumulative_curve({}), xrseg::Error);
  EXPECT_THROW(xrseg::cumulative_curve({0.5}, 0), xrseg::Error);
}

TEST(Report, HoldsAllLoggedColumns) {
  xrseg::MetricsReport r;
  r.loss = 0.1;
  r.dice_coef = 0.9;
  r.jaccard_coef = 0.8;
  r.binary_accuracy = 0.95;
  r.precision = 0.9;
  r.recall = 0.88;
  r.specificity = 0.97;
  r.sensitivity = r.recall;
  r.f1 = 0.89;
  EXPECT_DOUBLE_EQ(r.sensitivity, r.recall);
}
