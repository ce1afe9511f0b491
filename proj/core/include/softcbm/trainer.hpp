#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "softcbm/cohort.hpp"
#include "softcbm/concepts.hpp"
#include "softcbm/folds.hpp"
#include "softcbm/losses.hpp"
#include "softcbm/metrics.hpp"
#include "softcbm/model.hpp"
#include "softcbm/train_config.hpp"

namespace softcbm {

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train_loss;
  LossBreakdown val_loss;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
  bool encoder_frozen = false;
  double val_auc = 0.5;
  /// Validation accuracy of a logistic readout on the true normalized concepts,
  /// fitted on the same training batches as the model. It measures how much of
  /// the label the selected concept set gives away.
  double val_concept_informed_acc = 0.0;
};

struct EvalResult {
  LossBreakdown loss;
  double accuracy = 0.0;
  double auc = 0.5;
  std::vector<PredictionRecord> predictions;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  /// Epoch with the lowest validation total loss; its weights are left in the model. -1 when no epoch ran.
  int best_epoch = -1;
  std::vector<OversampleEntry> oversample_log;
};

using EpochCallback = std::function<void(const EpochRecord&, const Model&)>;

/// Seed train_run uses for control oversampling under training seed `seed`.
std::uint64_t oversample_seed(std::uint64_t seed);

/// Normalized concept targets for every cohort row, in selection order.
std::vector<std::vector<double>> concept_targets(const CohortData& cohort, const ConceptSelection& selection);

/// Inference-mode pass over `indices` without augmentation.
EvalResult evaluate_indices(const Model& model, const CohortData& cohort, const std::vector<std::size_t>& indices,
                            const std::vector<std::vector<double>>& targets, const TrainConfig& cfg);

/// Trains `model` on one fold. Every random choice (oversampling, shuffling,
/// augmentation, dropout) derives from cfg.seed, so identical inputs give
/// identical records.
TrainResult train_run(const CohortData& cohort, const Fold& fold, const ConceptSelection& selection,
                      const TrainConfig& cfg, Model& model, const EpochCallback& on_epoch = {});

}  // namespace softcbm
