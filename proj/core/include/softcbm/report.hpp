#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "softcbm/crossval.hpp"

namespace softcbm {

struct AggregateRow {
  std::string backbone;
  std::string strategy;
  double mean_val_acc = 0.0;
  double std_val_acc = 0.0;
  double best_fold_acc = 0.0;
  double mean_val_loss = 0.0;
  double std_val_loss = 0.0;
  double mean_auc = 0.0;
  double std_auc = 0.0;
};

/// Best-epoch single-pass row, plus a TTA row when TTA accuracies exist.
std::vector<AggregateRow> aggregate_rows(const RunReport& run);

/// Number of folds whose best-epoch |train - val| accuracy gap is within `threshold`.
int gap_passes(const RunReport& run, double threshold);

std::string aggregate_csv(const RunReport& run);
std::string roc_csv(const FoldReport& fold);
std::string confusion_csv(const FoldReport& fold);
std::string epochs_csv(const FoldReport& fold);
/// key = value summary including the gap audit. Contains no timestamps.
std::string summary_text(const RunReport& run, double gap_threshold = 0.04);

/// Writes aggregate.csv, fold<k>_roc.csv, fold<k>_confusion.csv,
/// fold<k>_epochs.csv and summary.txt; returns the paths written.
std::vector<std::filesystem::path> emit_report(const RunReport& run, const std::filesystem::path& out_dir,
                                               double gap_threshold = 0.04);

}  // namespace softcbm
