#include <gtest/gtest.h>

#include <cmath>

#include "softcbm/error.hpp"
#include "softcbm/metrics.hpp"
#include "softcbm/rng.hpp"

namespace softcbm {
namespace {

// Mann-Whitney over all positive/negative pairs, ties count one half.
double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return num / pairs;
}

TEST(RocAuc, MatchesPairwiseStatisticWithTies) {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.index(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.index(2));
      // Coarse scores force ties.
      s[i] = std::round(rng.normal(y[i] * 0.8, 1.0) * 4) / 4;
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(roc_auc(s, y).auc, brute_auc(s, y), 1e-12);
  }
}

TEST(RocAuc, CurveEndpointsAndKnownValues) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  const auto r = roc_auc(s, y);
  EXPECT_DOUBLE_EQ(r.auc, 0.75);
  ASSERT_EQ(r.curve.size(), 5u);
  EXPECT_TRUE(std::isinf(r.curve.front().threshold));
  EXPECT_EQ(r.curve.front().fpr, 0.0);
  EXPECT_EQ(r.curve.back().tpr, 1.0);
  EXPECT_EQ(r.curve.back().fpr, 1.0);
  EXPECT_EQ(r.curve.back().threshold, 0.1);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}).auc, 0.5);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValidationError);
}

TEST(Confusion, CountsAndRates) {
  const std::vector<int> y{1, 1, 1, 0, 0};
  const std::vector<int> p{1, 0, 1, 1, 0};
  EXPECT_EQ(confusion_from(y, p), (Confusion{2, 1, 1, 1}));

  std::vector<PredictionRecord> recs;
  const double probs[5] = {0.9, 0.2, 0.5, 0.7, 0.1};
  for (int i = 0; i < 5; ++i) {
    PredictionRecord r;
    r.true_label = y[i];
    r.probability = probs[i];
    r.predicted_label = probs[i] >= kDecisionThreshold;
    recs.push_back(r);
  }
  const auto m = compute_metrics(recs);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(m.sensitivity, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.specificity, 0.5);
  EXPECT_NEAR(m.auc, brute_auc({0.9, 0.2, 0.5, 0.7, 0.1}, y), 1e-15);

  for (auto& r : recs) r.true_label = 1;
  const auto one = compute_metrics(recs);
  EXPECT_EQ(one.auc, 0.5);
  EXPECT_EQ(one.specificity, 0.0);
  recs[0].true_label = -1;
  EXPECT_THROW(compute_metrics(recs), ValidationError);
  EXPECT_THROW(compute_metrics(std::vector<PredictionRecord>{}), ValidationError);
}

TEST(Summaries, MeanStdGapAndFormatting) {
  const std::vector<double> v{0.9, 0.95, 1.0};
  EXPECT_NEAR(mean_of(v), 0.95, 1e-15);
  EXPECT_NEAR(sample_std(v), 0.05, 1e-15);
  EXPECT_EQ(sample_std(std::vector<double>{0.3}), 0.0);
  EXPECT_TRUE(gap_check(0.95, 0.92));
  EXPECT_FALSE(gap_check(1.0, 0.9));
  EXPECT_TRUE(gap_check(1.0, 0.9, 0.1 + 1e-12));
  EXPECT_EQ(format_percent_pm(0.9333333, 0.045), "93.33% ± 4.5%");
}

}  // namespace
}  // namespace softcbm
