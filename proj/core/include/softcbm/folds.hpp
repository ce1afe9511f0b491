#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace softcbm {

struct Fold {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> val;    // ascending
  friend bool operator==(const Fold&, const Fold&) = default;
};

/// One control duplicated `duplicates` times by oversampling.
struct OversampleEntry {
  std::size_t source = 0;
  int duplicates = 0;
  friend bool operator==(const OversampleEntry&, const OversampleEntry&) = default;
};

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
  /// Filled in as folds are oversampled; one list per fold.
  std::vector<std::vector<OversampleEntry>> oversample_log;

  /// Subject ids are optional; when given they are written next to the indices.
  std::string to_json(std::span<const std::string> subject_ids = {}) const;
  static FoldPlan from_json(std::string_view text);
  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Per-class seeded shuffle, then one round-robin pass over the folds that
/// continues from class to class (patients first). Validation sets partition
/// the cohort and each fold's class count is floor or ceil of n_class / k.
FoldPlan stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed);

/// Element of an oversampled training list.
struct TrainEntry {
  std::size_t index = 0;
  bool synthetic = false;
  friend bool operator==(const TrainEntry&, const TrainEntry&) = default;
};

inline constexpr int kDefaultOversampleTarget = 99;

/// Duplicates training controls round-robin in a seeded order until the fold
/// holds `target` controls. Originals keep their order; duplicates are appended
/// and flagged synthetic. Nothing changes when controls already reach the target.
std::vector<TrainEntry> oversample_controls(std::span<const std::size_t> train_indices, std::span<const int> labels,
                                            int target, std::uint64_t seed,
                                            std::vector<OversampleEntry>* log = nullptr);

}  // namespace softcbm
