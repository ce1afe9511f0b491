#include <gtest/gtest.h>

#include "softcbm/crossval.hpp"
#include "softcbm/error.hpp"
#include "softcbm/trainer.hpp"
#include "test_support.hpp"

namespace softcbm {
namespace {

using testing::TempDir;

BackboneSpec tiny_spec() {
  BackboneSpec s;
  s.width_scale = 0.0625;
  s.input_shape = {16, 16, 16};
  return s;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.freeze_epochs = 1;
  cfg.unfreeze_stages = {"stage4"};
  cfg.oversample_target = 8;
  cfg.n_concepts = 6;
  cfg.folds = 2;
  cfg.seed = 77;
  return cfg;
}

class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("trainer");
    cohort_ = new CohortData(testing::small_cohort(dir_->path(), 8, 6, 3));
  }
  static void TearDownTestSuite() {
    delete cohort_;
    delete dir_;
  }
  Fold fold() const {
    Fold f;
    for (std::size_t i = 0; i < cohort_->size(); ++i) (i % 4 == 1 ? f.val : f.train).push_back(i);
    return f;
  }
  ConceptSelection selection(const TrainConfig& cfg) const {
    return select_concepts(cohort_->table, cohort_->labels(), fold().train, cfg.n_concepts, 1);
  }
  static TempDir* dir_;
  static CohortData* cohort_;
};

TempDir* TrainerTest::dir_ = nullptr;
CohortData* TrainerTest::cohort_ = nullptr;

const std::set<std::string> kAll{"stem", "stage1", "stage2", "stage3", "stage4", "concept_head", "task_head"};

TEST_F(TrainerTest, DeterministicAcrossRuns) {
  const auto cfg = tiny_config();
  Model a(tiny_spec(), cfg.n_concepts, cfg.dropout, 5), b(tiny_spec(), cfg.n_concepts, cfg.dropout, 5);
  const auto ra = train_run(*cohort_, fold(), selection(cfg), cfg, a);
  const auto rb = train_run(*cohort_, fold(), selection(cfg), cfg, b);
  ASSERT_EQ(ra.epochs.size(), 3u);
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(ra.epochs[e].train_loss.total, rb.epochs[e].train_loss.total);
    EXPECT_EQ(ra.epochs[e].val_loss.total, rb.epochs[e].val_loss.total);
    EXPECT_EQ(ra.epochs[e].val_acc, rb.epochs[e].val_acc);
  }
  EXPECT_EQ(a.checksum(kAll), b.checksum(kAll));
  EXPECT_EQ(ra.oversample_log, rb.oversample_log);
}

TEST_F(TrainerTest, EpochRecordsFollowScheduleAndLossIdentity) {
  auto cfg = tiny_config();
  cfg.alpha = 0.3;
  cfg.beta = 0.7;
  Model m(tiny_spec(), cfg.n_concepts, cfg.dropout, 6);
  int calls = 0;
  const auto r = train_run(*cohort_, fold(), selection(cfg), cfg, m,
                           [&](const EpochRecord& rec, const Model&) { EXPECT_EQ(rec.epoch, calls++); });
  EXPECT_EQ(calls, 3);
  EXPECT_TRUE(r.epochs[0].encoder_frozen);
  EXPECT_EQ(r.epochs[0].lr, cfg.base_lr);
  EXPECT_FALSE(r.epochs[1].encoder_frozen);
  EXPECT_EQ(r.epochs[1].lr, cfg.unfreeze_lr);
  for (const auto& e : r.epochs) {
    for (const auto* l : {&e.train_loss, &e.val_loss})
      EXPECT_NEAR(l->total, 0.7 * l->task + 0.3 * l->concepts, 1e-12);
    EXPECT_GE(e.val_acc, 0.0);
    EXPECT_LE(e.val_acc, 1.0);
  }
}

TEST_F(TrainerTest, BestEpochWeightsAreRestored) {
  const auto cfg = tiny_config();
  Model m(tiny_spec(), cfg.n_concepts, cfg.dropout, 7);
  const auto sel = selection(cfg);
  const auto r = train_run(*cohort_, fold(), sel, cfg, m);
  ASSERT_GE(r.best_epoch, 0);
  for (const auto& e : r.epochs) EXPECT_GE(e.val_loss.total, r.epochs[r.best_epoch].val_loss.total);
  const auto eval = evaluate_indices(m, *cohort_, fold().val, concept_targets(*cohort_, sel), cfg);
  EXPECT_EQ(eval.loss.total, r.epochs[r.best_epoch].val_loss.total);
  EXPECT_EQ(eval.accuracy, r.epochs[r.best_epoch].val_acc);
  EXPECT_EQ(eval.predictions.size(), fold().val.size());
}

TEST_F(TrainerTest, FullyFrozenEncoderIsUntouched) {
  auto cfg = tiny_config();
  cfg.freeze_epochs = cfg.epochs;
  Model m(tiny_spec(), cfg.n_concepts, cfg.dropout, 8);
  const std::set<std::string> encoder{"stem", "stage1", "stage2", "stage3", "stage4"};
  const auto before = m.checksum(encoder), heads = m.checksum({"concept_head", "task_head"});
  train_run(*cohort_, fold(), selection(cfg), cfg, m);
  EXPECT_EQ(m.checksum(encoder), before);
  EXPECT_NE(m.checksum({"concept_head", "task_head"}), heads);
}

TEST_F(TrainerTest, OversamplingUsesDerivedSeed) {
  const auto cfg = tiny_config();
  Model m(tiny_spec(), cfg.n_concepts, cfg.dropout, 9);
  const auto r = train_run(*cohort_, fold(), selection(cfg), cfg, m);
  std::vector<OversampleEntry> log;
  oversample_controls(fold().train, cohort_->labels(), cfg.oversample_target, oversample_seed(cfg.seed), &log);
  EXPECT_EQ(r.oversample_log, log);
}

TEST_F(TrainerTest, ConceptTargetsAreNormalizedToTrainingRange) {
  const auto cfg = tiny_config();
  const auto sel = selection(cfg);
  const auto targets = concept_targets(*cohort_, sel);
  ASSERT_EQ(targets.size(), cohort_->size());
  for (std::size_t k = 0; k < sel.size(); ++k) {
    double lo = 1, hi = 0;
    for (std::size_t i : fold().train) {
      lo = std::min(lo, targets[i][k]);
      hi = std::max(hi, targets[i][k]);
    }
    EXPECT_EQ(lo, 0.0);
    EXPECT_EQ(hi, 1.0);
  }
}

TEST_F(TrainerTest, CrossValidateIsIndependentOfJobs) {
  auto cfg = tiny_config();
  cfg.epochs = 2;
  const auto serial = cross_validate(*cohort_, cfg, tiny_spec());
  CrossValOptions opt;
  opt.jobs = 2;
  const auto parallel = cross_validate(*cohort_, cfg, tiny_spec(), opt);
  EXPECT_EQ(serial.to_json(), parallel.to_json());
  ASSERT_EQ(serial.folds.size(), 2u);
  EXPECT_EQ(serial.folds[0].fold, 1);
  EXPECT_NE(fold_seed(cfg.seed, 1), fold_seed(cfg.seed, 2));
  EXPECT_NE(fold_init_seed(cfg.seed, 1), fold_seed(cfg.seed, 1));
}

TEST_F(TrainerTest, RejectsInvalidConfig) {
  auto cfg = tiny_config();
  cfg.batch_size = 0;
  Model m(tiny_spec(), cfg.n_concepts, cfg.dropout, 1);
  EXPECT_THROW(train_run(*cohort_, fold(), selection(tiny_config()), cfg, m), ValidationError);
}

}  // namespace
}  // namespace softcbm
