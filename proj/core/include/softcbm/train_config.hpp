#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "softcbm/concepts.hpp"
#include "softcbm/kv_document.hpp"

namespace softcbm {

struct TrainConfig {
  double alpha = 0.01;  // concept loss weight
  double beta = 1.0;    // task loss weight
  double gamma = 2.0;   // focal exponent
  double smoothing = 0.05;
  double base_lr = 1e-3;
  double unfreeze_lr = 2e-5;
  int freeze_epochs = 8;
  std::set<std::string> unfreeze_stages{"stage3", "stage4"};
  int epochs = 25;
  int batch_size = 4;
  double dropout = 0.3;
  double weight_decay = 0.0;
  std::uint64_t seed = 42;
  int oversample_target = 99;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  double plateau_min_lr = 1e-6;
  double plateau_threshold = 1e-4;
  int folds = 5;
  int n_concepts = kDefaultConceptCount;
  LeakagePolicy leakage = LeakagePolicy::filter;
  /// Train-time augmentation; validation never augments.
  bool augment = true;
  /// TTA passes used for the reported TTA accuracy; 0 disables it.
  int tta_passes = 0;

  void validate() const;
  /// Writes every field as `train.<field>` keys.
  void write(KeyValueDocument& doc) const;
  /// Reads `train.<field>` keys that are present; others keep their current value.
  void read(const KeyValueDocument& doc);
};

std::string to_string(LeakagePolicy policy);
/// Unsigned 64-bit decimal; throws ValidationError.
std::uint64_t parse_seed(std::string_view text);
LeakagePolicy parse_leakage_policy(const std::string& text);

/// Space-separated stage list ("stage3 stage4"); empty set gives "".
std::string join_stages(const std::set<std::string>& stages);
std::set<std::string> parse_stages(const std::string& text);

}  // namespace softcbm
