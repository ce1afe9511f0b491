#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "softcbm/cohort.hpp"
#include "softcbm/kv_document.hpp"
#include "softcbm/model.hpp"
#include "softcbm/train_config.hpp"

namespace softcbm {

inline constexpr const char* kSeedEnvVar = "SOFTCBM_SEED";

/// Everything needed to reproduce a cross-validation run, stored as one flat
/// key/value document:
///   seed, cohort.dir, cohort.patients, cohort.controls, cohort.grid, cohort.*,
///   model.backbone, model.width_scale, model.input_shape, train.*, run.jobs,
///   run.gap_threshold
struct ExperimentConfig {
  std::uint64_t seed = 42;
  /// Empty: the cohort is generated into `<out>/cohort`.
  std::string cohort_dir;
  int patients = 92;
  int controls = 44;
  CohortOptions cohort;
  BackboneSpec backbone;
  TrainConfig train;
  int jobs = 1;
  double gap_threshold = 0.04;

  void validate() const;
  KeyValueDocument to_document() const;
  /// Missing keys keep their defaults; unknown keys raise ValidationError.
  static ExperimentConfig from_document(const KeyValueDocument& doc);
};

/// Parses "D H W", "DxHxW" or a single edge length.
Shape3 parse_shape(const std::string& text);
std::string shape_text(const Shape3& shape);

/// Seed precedence: explicit flag, then the SOFTCBM_SEED environment variable,
/// then the config file value, then `fallback`.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config_value,
                           std::uint64_t fallback);

/// Value of SOFTCBM_SEED if set; ValidationError if it is not an integer.
std::optional<std::uint64_t> seed_from_env();

}  // namespace softcbm
