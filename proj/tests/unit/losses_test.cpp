#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "softcbm/error.hpp"
#include "softcbm/losses.hpp"
#include "softcbm/rng.hpp"

namespace softcbm {
namespace {

double row_focal(double l0, double l1, int y, double gamma, double s) {
  const double m = std::max(l0, l1);
  const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  const double p[2] = {e0 / (e0 + e1), e1 / (e0 + e1)};
  double loss = 0;
  for (int k = 0; k < 2; ++k) {
    const double t = k == y ? 1.0 - s / 2 : s / 2;
    loss -= t * std::pow(1.0 - p[k], gamma) * std::log(p[k]);
  }
  return loss;
}

TEST(FocalLoss, ClosedFormValues) {
  const std::vector<int> y{1};
  Tensor<double> equal({1, 2}, 0.0);
  EXPECT_NEAR(focal_loss(equal, y, 2.0, 0.0), 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(focal_loss(equal, y, 0.0, 0.0), std::log(2.0), 1e-15);
  // Smoothing is symmetric at p = 0.5.
  EXPECT_NEAR(focal_loss(equal, y, 2.0, 0.3), 0.25 * std::log(2.0), 1e-15);

  Tensor<double> conf({1, 2});
  conf[0] = -1.0;
  conf[1] = 2.0;
  const double p1 = 1.0 / (1.0 + std::exp(-3.0));
  EXPECT_NEAR(focal_loss(conf, y, 0.0, 0.0), -std::log(p1), 1e-14);
  EXPECT_NEAR(focal_loss(conf, y, 2.0, 0.0), -(1 - p1) * (1 - p1) * std::log(p1), 1e-14);
}

TEST(FocalLoss, BatchMeanMatchesRowOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(8));
    Tensor<double> logits({n, 2});
    std::vector<int> y(static_cast<std::size_t>(n));
    double expect = 0;
    const double gamma = rng.uniform(0, 3), s = rng.uniform(0, 0.2);
    for (int i = 0; i < n; ++i) {
      logits[2 * i] = rng.normal(0, 3);
      logits[2 * i + 1] = rng.normal(0, 3);
      y[i] = static_cast<int>(rng.index(2));
      expect += row_focal(logits[2 * i], logits[2 * i + 1], y[i], gamma, s);
    }
    EXPECT_NEAR(focal_loss(logits, y, gamma, s), expect / n, 1e-12);
  }
}

TEST(FocalLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> logits({4, 2});
    for (auto& v : logits.values()) v = rng.normal(0, 2);
    const std::vector<int> y{0, 1, 1, 0};
    const double gamma = trial % 2 ? 2.0 : 0.5, s = 0.05;
    Tensor<double> g;
    focal_loss(logits, y, gamma, s, &g);
    ASSERT_EQ(g.shape(), logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double h = 1e-6, orig = logits[i];
      logits[i] = orig + h;
      const double lp = focal_loss(logits, y, gamma, s);
      logits[i] = orig - h;
      const double lm = focal_loss(logits, y, gamma, s);
      logits[i] = orig;
      EXPECT_NEAR(g[i], (lp - lm) / (2 * h), 1e-8);
    }
  }
}

TEST(FocalLoss, StableForExtremeLogitsAndRejectsNonFinite) {
  Tensor<double> big({1, 2});
  big[0] = 500.0;
  big[1] = -500.0;
  const std::vector<int> y{1};
  EXPECT_TRUE(std::isfinite(focal_loss(big, y, 2.0, 0.05)));
  big[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(focal_loss(big, y, 2.0, 0.05), NumericError);
  Tensor<double> ok({1, 2}, 0.0);
  EXPECT_THROW(focal_loss(ok, std::vector<int>{2}, 2.0, 0.0), ValidationError);
}

TEST(ConceptMse, ValueAndGradient) {
  Tensor<double> p({2, 3}), t({2, 3});
  Rng rng(5);
  double expect = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    p[i] = rng.uniform();
    t[i] = rng.uniform();
    expect += (p[i] - t[i]) * (p[i] - t[i]);
  }
  Tensor<double> g;
  EXPECT_NEAR(concept_mse(p, t, &g), expect / 6, 1e-15);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g[i], 2 * (p[i] - t[i]) / 6, 1e-15);
  EXPECT_THROW(concept_mse<double>(p, Tensor<double>({2, 2})), ValidationError);
}

TEST(TotalLoss, WeightedSum) {
  const auto l = total_loss(0.8, 0.2, 0.01, 1.0);
  EXPECT_DOUBLE_EQ(l.task, 0.8);
  EXPECT_DOUBLE_EQ(l.concepts, 0.2);
  EXPECT_DOUBLE_EQ(l.total, 0.8 + 0.01 * 0.2);
}

TEST(PatientProbability, SoftmaxOfSecondLogit) {
  EXPECT_DOUBLE_EQ(patient_probability(0.0, 0.0), 0.5);
  EXPECT_NEAR(patient_probability(-1.0, 1.0), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(patient_probability(800.0, 0.0), 0.0, 1e-300);
}

}  // namespace
}  // namespace softcbm
