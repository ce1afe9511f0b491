#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "softcbm/cohort.hpp"
#include "softcbm/folds.hpp"
#include "softcbm/metrics.hpp"
#include "softcbm/model.hpp"
#include "softcbm/trainer.hpp"

namespace softcbm {

/// Outcome of one cross-validation fold, measured on the restored best-epoch model.
struct FoldReport {
  int fold = 0;  // 1-based
  ConceptSelection selection;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::vector<OversampleEntry> oversample_log;
  std::vector<PredictionRecord> predictions;
  MetricsSummary metrics;
  RocResult roc;
  double best_train_acc = 0.0;
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
  double final_val_acc = 0.0;
  /// Accuracy of TTA predictions on the validation fold; negative when TTA was off.
  double tta_accuracy = -1.0;
};

struct RunReport {
  std::string backbone;
  BackboneSpec spec;
  TrainConfig config;
  FoldPlan plan;
  std::vector<FoldReport> folds;

  std::string to_json() const;
  static RunReport from_json(std::string_view text);
};

struct CrossValOptions {
  /// Folds trained concurrently; results do not depend on it.
  int jobs = 1;
  /// When set, `fold<k>.ckpt` is written there for each fold.
  std::filesystem::path checkpoint_dir;
  std::function<void(int fold, const EpochRecord&, const Model&)> on_epoch;
};

/// Seed used for everything inside fold `fold` (1-based).
std::uint64_t fold_seed(std::uint64_t seed, int fold);

/// One fold (`fold_number` is 1-based): concept selection on training rows,
/// training, best-epoch evaluation and optional TTA. Writes `fold<k>.ckpt`
/// when a checkpoint dir is set.
FoldReport train_fold(const CohortData& cohort, const TrainConfig& cfg, const BackboneSpec& spec, const Fold& fold,
                      int fold_number, const CrossValOptions& options = {});

/// Model init seed for a fold.
std::uint64_t fold_init_seed(std::uint64_t seed, int fold);

/// Stratified k-fold split, per-fold concept selection on training rows,
/// control oversampling, training and best-epoch evaluation.
RunReport cross_validate(const CohortData& cohort, const TrainConfig& cfg, const BackboneSpec& spec,
                         const CrossValOptions& options = {});

}  // namespace softcbm
