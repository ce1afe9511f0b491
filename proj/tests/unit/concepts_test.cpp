#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "softcbm/concepts.hpp"
#include "softcbm/error.hpp"
#include "softcbm/rng.hpp"

namespace softcbm {
namespace {

// r_pb = (M1 - M0) / s * sqrt(p q) with the population standard deviation s.
double point_biserial_oracle(const std::vector<double>& v, const std::vector<int>& y) {
  double m1 = 0, m0 = 0, n1 = 0, n0 = 0, mean = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    mean += v[i];
    if (y[i]) {
      m1 += v[i];
      ++n1;
    } else {
      m0 += v[i];
      ++n0;
    }
  }
  const double n = static_cast<double>(v.size());
  mean /= n;
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double s = std::sqrt(var / n);
  return (m1 / n1 - m0 / n0) / s * std::sqrt(n1 / n * n0 / n);
}

ConceptTable random_table(const std::vector<std::string>& names, std::size_t rows, Rng& rng) {
  std::vector<std::string> ids;
  std::vector<double> values;
  for (std::size_t r = 0; r < rows; ++r) {
    ids.push_back("s" + std::to_string(r));
    for (std::size_t c = 0; c < names.size(); ++c) values.push_back(rng.normal(static_cast<double>(c), 1.0));
  }
  return ConceptTable(names, ids, values);
}

std::vector<std::string> pool_with_leaks() {
  std::vector<std::string> names{"aneurysm_flag", "sac_volume", "dome_height", "neck_width"};
  for (int i = 0; i < 30; ++i) names.push_back("clean_" + std::to_string(i));
  return names;
}

TEST(LeakageFilter, DropsKeywordMatchesCaseInsensitively) {
  const std::vector<std::string> names{"Aneurysm_Size", "vessel_angle", "SAC", "dome", "neckline", "tortuosity"};
  EXPECT_EQ(leakage_filter(names), (std::vector<std::string>{"vessel_angle", "tortuosity"}));
  EXPECT_TRUE(is_leaky("NECK_WIDTH"));
  EXPECT_FALSE(is_leaky("wss_surrogate"));
}

TEST(PointBiserial, MatchesClosedFormOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 4 + rng.index(40);
    std::vector<double> v(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(i % 2 == 0 ? 1 : rng.index(2));
      v[i] = rng.normal(y[i] * 0.7, 1.0);
    }
    y[1] = 0;
    EXPECT_NEAR(point_biserial(v, y), point_biserial_oracle(v, y), 1e-12);
  }
}

TEST(PointBiserial, DegenerateInputsGiveZero) {
  EXPECT_EQ(point_biserial(std::vector<double>{1, 1, 1}, std::vector<int>{0, 1, 0}), 0.0);
  EXPECT_EQ(point_biserial(std::vector<double>{1, 2, 3}, std::vector<int>{1, 1, 1}), 0.0);
  EXPECT_NEAR(point_biserial(std::vector<double>{0, 1}, std::vector<int>{0, 1}), 1.0, 1e-15);
}

TEST(SelectConcepts, FilterKeepsNoLeaksAndExactCount) {
  Rng rng(8);
  const auto names = pool_with_leaks();
  auto table = random_table(names, 40, rng);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = i < 27 ? 1 : 0;
  // Make the leaks perfect predictors so they would win without the filter.
  for (std::size_t r = 0; r < 40; ++r)
    for (std::size_t c = 0; c < 4; ++c) table.at(r, c) = labels[r] * (1.0 + static_cast<double>(c));
  std::vector<std::size_t> train(30);
  std::iota(train.begin(), train.end(), 5);

  const auto sel = select_concepts(table, labels, train, 26, 1, LeakagePolicy::filter);
  EXPECT_EQ(sel.size(), 26u);
  for (const auto& n : sel.kept_names) EXPECT_FALSE(is_leaky(n)) << n;

  const auto admitted = select_concepts(table, labels, train, 26, 1, LeakagePolicy::admit);
  EXPECT_EQ(admitted.size(), 26u);
  int leaks = 0;
  for (const auto& n : admitted.kept_names) leaks += is_leaky(n);
  EXPECT_EQ(leaks, 4);
}

TEST(SelectConcepts, ScoresSortedWithNameTieBreak) {
  const std::vector<std::string> names{"b", "a", "c"};
  // b and a identical (tie), c weaker.
  ConceptTable t(names, {"1", "2", "3", "4"}, {1, 1, 0, 2, 2, 1, 3, 3, 3, 4, 4, 2});
  const std::vector<int> labels{0, 0, 1, 1};
  const std::vector<std::size_t> train{0, 1, 2, 3};
  const auto sel = select_concepts(t, labels, train, 3);
  EXPECT_EQ(sel.kept_names, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_GE(sel.scores[1], sel.scores[2]);
  EXPECT_EQ(sel.mins[0], 1.0);
  EXPECT_EQ(sel.maxs[0], 4.0);
}

TEST(SelectConcepts, InvariantToValidationValuePermutations) {
  Rng rng(21);
  const auto names = pool_with_leaks();
  for (int trial = 0; trial < 30; ++trial) {
    auto table = random_table(names, 30, rng);
    std::vector<int> labels(30);
    for (auto& l : labels) l = static_cast<int>(rng.index(2));
    labels[0] = 0;
    labels[1] = 1;
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < 30; ++i) (static_cast<int>(i % 5) == trial % 5 ? val : train).push_back(i);
    const auto before = select_concepts(table, labels, train, 26, 2);

    // Shuffle validation rows' values within each column and scramble their magnitudes.
    for (std::size_t c = 0; c < table.cols(); ++c) {
      std::vector<double> vals;
      for (std::size_t r : val) vals.push_back(table.at(r, c) * 100.0 + rng.normal());
      rng.shuffle(vals);
      for (std::size_t k = 0; k < val.size(); ++k) table.at(val[k], c) = vals[k];
    }
    std::vector<int> relabeled = labels;
    for (std::size_t r : val) relabeled[r] = 1 - relabeled[r];
    EXPECT_EQ(select_concepts(table, relabeled, train, 26, 2), before);
  }
}

TEST(SelectConcepts, RejectsBadArguments) {
  Rng rng(1);
  const auto t = random_table({"x", "y"}, 4, rng);
  const std::vector<int> labels{0, 1, 0, 1};
  EXPECT_THROW(select_concepts(t, labels, std::vector<std::size_t>{}, 2), ValidationError);
  EXPECT_THROW(select_concepts(t, labels, std::vector<std::size_t>{0, 9}, 2), ValidationError);
  EXPECT_THROW(select_concepts(t, labels, std::vector<std::size_t>{0, 1}, 0), ValidationError);
  EXPECT_EQ(select_concepts(t, labels, std::vector<std::size_t>{0, 1, 2, 3}, 10).size(), 2u);
}

TEST(NormalizeConcepts, UsesTrainingRangeClampsAndHandlesZeroRange) {
  ConceptSelection sel;
  sel.kept_names = {"a", "b", "c"};
  sel.mins = {0.0, 10.0, 5.0};
  sel.maxs = {2.0, 20.0, 5.0};
  sel.scores = {1, 1, 1};
  const auto v = normalize_concepts(sel, {{"a", 1.5}, {"b", 25.0}, {"c", 7.0}, {"extra", 1.0}});
  EXPECT_DOUBLE_EQ(v[0], 0.75);
  EXPECT_DOUBLE_EQ(v[1], 1.0);
  EXPECT_DOUBLE_EQ(v[2], 0.5);
  EXPECT_DOUBLE_EQ(normalize_concepts(sel, {{"a", -4.0}, {"b", 10.0}, {"c", 0.0}})[0], 0.0);
  EXPECT_THROW(normalize_concepts(sel, {{"a", 1.0}}), ValidationError);
}

TEST(ConceptSelection, JsonRoundTripAndIndex) {
  ConceptSelection sel;
  sel.fold_id = 3;
  sel.kept_names = {"x", "y"};
  sel.mins = {0.1, -2.0 / 3.0};
  sel.maxs = {1.0 / 3.0, 7.0};
  sel.scores = {0.9, 0.25};
  EXPECT_EQ(ConceptSelection::from_json(sel.to_json()), sel);
  EXPECT_EQ(sel.index_of("y"), 1u);
  EXPECT_THROW(sel.index_of("z"), ValidationError);
  EXPECT_THROW(ConceptSelection::from_json("{"), FormatError);
}

TEST(ConceptTable, CsvRoundTripIsLossless) {
  Rng rng(2);
  const auto t = random_table({"p", "q", "r"}, 5, rng);
  const auto back = ConceptTable::from_csv(t.to_csv());
  EXPECT_EQ(back.names(), t.names());
  EXPECT_EQ(back.subject_ids(), t.subject_ids());
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(back.at(r, c), t.at(r, c));
  EXPECT_EQ(t.column("q"), 1u);
  EXPECT_THROW(t.column("nope"), ValidationError);
  EXPECT_THROW(ConceptTable::from_csv("subject_id,a\ns1,1,2\n"), FormatError);
  EXPECT_THROW(ConceptTable::from_csv("subject_id,a\ns1,abc\n"), FormatError);
}

}  // namespace
}  // namespace softcbm
