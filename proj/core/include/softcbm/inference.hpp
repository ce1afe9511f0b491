#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "softcbm/augment.hpp"
#include "softcbm/concepts.hpp"
#include "softcbm/metrics.hpp"
#include "softcbm/model.hpp"

namespace softcbm {

/// One deterministic inference-mode forward pass.
PredictionRecord predict_single(const Model& model, const Volume& volume, const std::string& subject_id = "",
                                int true_label = -1);

/// Single-pass inference over several volumes, `batch_size` at a time.
std::vector<PredictionRecord> predict_many(const Model& model, const std::vector<const Volume*>& volumes,
                                           const std::vector<std::string>& subject_ids,
                                           const std::vector<int>& labels, int batch_size = 8);

struct TtaOptions {
  int passes = 8;
  std::uint64_t seed = 0;
  AugmentPolicy policy = default_policies().tta;
  /// Worker threads; the result does not depend on it.
  int jobs = 1;
};

/// Pass i augments with apply_augment(volume, policy, seed, 0, i); the reported
/// probability is the running mean of the per-pass probabilities in pass order.
PredictionRecord predict_tta(const Model& model, const Volume& volume, const TtaOptions& options,
                             const std::string& subject_id = "", int true_label = -1);

struct InterventionResult {
  PredictionRecord before;
  PredictionRecord after;
  /// (name, predicted value, override value) for each overridden concept, in selection order.
  struct Change {
    std::string name;
    double predicted = 0.0;
    double value = 0.0;
  };
  std::vector<Change> changes;
};

/// Re-runs the task head with selected entries of c replaced; z is reused.
/// Unknown names and values outside [0,1] raise ValidationError.
InterventionResult intervene(const Model& model, const Volume& volume, const std::map<std::string, double>& overrides,
                             const ConceptSelection& selection, const std::string& subject_id = "",
                             int true_label = -1);

/// Task head output with c replaced entirely by `concepts` (N x K).
Tensor<float> logits_with_concepts(const Model& model, const Tensor<float>& z, const Tensor<float>& concepts);

}  // namespace softcbm
