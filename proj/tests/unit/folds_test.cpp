#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "softcbm/error.hpp"
#include "softcbm/folds.hpp"
#include "softcbm/rng.hpp"

namespace softcbm {
namespace {

std::vector<int> cohort_labels(int patients, int controls) {
  std::vector<int> y(static_cast<std::size_t>(patients), 1);
  y.resize(static_cast<std::size_t>(patients + controls), 0);
  return y;
}

void check_plan(const FoldPlan& plan, const std::vector<int>& labels) {
  const std::size_t k = plan.folds.size();
  std::vector<int> seen(labels.size(), 0);
  int n_pos = 0;
  for (int l : labels) n_pos += l;
  const int n_neg = static_cast<int>(labels.size()) - n_pos;
  for (const auto& f : plan.folds) {
    ASSERT_TRUE(std::is_sorted(f.val.begin(), f.val.end()));
    ASSERT_TRUE(std::is_sorted(f.train.begin(), f.train.end()));
    ASSERT_EQ(f.val.size() + f.train.size(), labels.size());
    int pos = 0;
    for (std::size_t i : f.val) {
      ++seen[i];
      pos += labels[i];
    }
    const int neg = static_cast<int>(f.val.size()) - pos;
    EXPECT_TRUE(pos == n_pos / static_cast<int>(k) || pos == (n_pos + static_cast<int>(k) - 1) / static_cast<int>(k));
    EXPECT_TRUE(neg == n_neg / static_cast<int>(k) || neg == (n_neg + static_cast<int>(k) - 1) / static_cast<int>(k));
    std::vector<std::size_t> merged;
    std::merge(f.val.begin(), f.val.end(), f.train.begin(), f.train.end(), std::back_inserter(merged));
    for (std::size_t i = 0; i < merged.size(); ++i) ASSERT_EQ(merged[i], i);
  }
  for (int s : seen) ASSERT_EQ(s, 1);
}

TEST(StratifiedKFold, NinetyTwoFortyFourCohortCounts) {
  const auto labels = cohort_labels(92, 44);
  const FoldPlan plan = stratified_kfold(labels, 5, 42);
  check_plan(plan, labels);
  std::vector<std::size_t> sizes;
  for (const auto& f : plan.folds) sizes.push_back(f.val.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{28, 27, 27, 27, 27}));
}

TEST(StratifiedKFold, PropertyOverRandomCohorts) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(6));
    const int pos = k + static_cast<int>(rng.index(60));
    const int neg = k + static_cast<int>(rng.index(60));
    auto labels = cohort_labels(pos, neg);
    rng.shuffle(labels);
    const auto seed = rng.next_u64();
    const FoldPlan plan = stratified_kfold(labels, k, seed);
    check_plan(plan, labels);
    EXPECT_EQ(stratified_kfold(labels, k, seed), plan);
  }
}

TEST(StratifiedKFold, SeedChangesAssignment) {
  const auto labels = cohort_labels(30, 20);
  EXPECT_NE(stratified_kfold(labels, 5, 1).folds, stratified_kfold(labels, 5, 2).folds);
}

TEST(StratifiedKFold, RejectsImpossibleSplits) {
  EXPECT_THROW(stratified_kfold(cohort_labels(10, 3), 5, 0), ValidationError);
  EXPECT_THROW(stratified_kfold(cohort_labels(10, 10), 1, 0), ValidationError);
  EXPECT_THROW(stratified_kfold(std::vector<int>{0, 1, 2, 1, 0}, 2, 0), ValidationError);
}

TEST(OversampleControls, ReachesTargetPerFoldOnReferenceCohort) {
  const auto labels = cohort_labels(92, 44);
  const FoldPlan plan = stratified_kfold(labels, 5, 42);
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    std::vector<OversampleEntry> log;
    const auto entries = oversample_controls(plan.folds[f].train, labels, 99, 1000 + f, &log);
    int controls = 0, synthetic = 0, patients = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (labels[e.index] == 0) ++controls;
      else ++patients;
      if (e.synthetic) {
        ++synthetic;
        EXPECT_EQ(labels[e.index], 0);
        EXPECT_TRUE(std::binary_search(plan.folds[f].train.begin(), plan.folds[f].train.end(), e.index));
      }
      if (i < plan.folds[f].train.size()) {
        EXPECT_FALSE(e.synthetic);
        EXPECT_EQ(e.index, plan.folds[f].train[i]);
      }
    }
    EXPECT_EQ(controls, 99);
    EXPECT_EQ(patients + controls - synthetic, static_cast<int>(plan.folds[f].train.size()));
    int logged = 0;
    for (const auto& l : log) logged += l.duplicates;
    EXPECT_EQ(logged, synthetic);
  }
}

TEST(OversampleControls, RoundRobinKeepsDuplicateCountsBalanced) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int neg = 1 + static_cast<int>(rng.index(20));
    const int target = neg + static_cast<int>(rng.index(80));
    auto labels = cohort_labels(5, neg);
    std::vector<std::size_t> train(labels.size());
    for (std::size_t i = 0; i < train.size(); ++i) train[i] = i;
    std::vector<OversampleEntry> log;
    const auto entries = oversample_controls(train, labels, target, rng.next_u64(), &log);
    std::map<std::size_t, int> copies;
    for (std::size_t c = 5; c < labels.size(); ++c) copies[c] = 0;
    for (const auto& e : entries)
      if (e.synthetic) ++copies[e.index];
    int lo = 1 << 30, hi = 0;
    for (const auto& [idx, n] : copies) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    EXPECT_LE(hi - lo, 1);
    EXPECT_EQ(static_cast<int>(entries.size()), 5 + target);
  }
}

TEST(OversampleControls, NoChangeWhenTargetMet) {
  const auto labels = cohort_labels(3, 6);
  std::vector<std::size_t> train{0, 1, 3, 4, 5, 6, 7};
  std::vector<OversampleEntry> log{{1, 1}};
  const auto entries = oversample_controls(train, labels, 5, 1, &log);
  EXPECT_EQ(entries.size(), train.size());
  EXPECT_TRUE(log.empty());
  EXPECT_THROW(oversample_controls(std::vector<std::size_t>{0, 1}, labels, 5, 1), ValidationError);
}

TEST(FoldPlan, JsonRoundTrip) {
  const auto labels = cohort_labels(12, 8);
  FoldPlan plan = stratified_kfold(labels, 4, 3);
  oversample_controls(plan.folds[0].train, labels, 20, 5, &plan.oversample_log[0]);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < labels.size(); ++i) ids.push_back("s" + std::to_string(i));
  EXPECT_EQ(FoldPlan::from_json(plan.to_json(ids)), plan);
  EXPECT_EQ(FoldPlan::from_json(plan.to_json()), plan);
  EXPECT_THROW(FoldPlan::from_json("[]"), FormatError);
}

}  // namespace
}  // namespace softcbm
