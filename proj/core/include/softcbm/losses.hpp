#pragma once

#include <span>

#include "softcbm/tensor.hpp"

namespace softcbm {

struct LossBreakdown {
  double task = 0.0;
  double concepts = 0.0;
  double total = 0.0;
};

/// Batch mean of -sum_k t_k (1 - p_k)^gamma log p_k over two classes, with
/// p = softmax(logits) and smoothed targets t_true = 1 - s/2, t_false = s/2.
/// When `grad` is given it receives d(mean loss)/d(logits).
/// Non-finite logits raise NumericError.
template <typename T>
double focal_loss(const Tensor<T>& logits, std::span<const int> labels, double gamma, double smoothing,
                  Tensor<T>* grad = nullptr);

/// Mean squared difference over batch and concepts; optional gradient w.r.t. `predicted`.
template <typename T>
double concept_mse(const Tensor<T>& predicted, const Tensor<T>& target, Tensor<T>* grad = nullptr);

/// total = beta * task + alpha * concepts.
LossBreakdown total_loss(double task, double concepts, double alpha, double beta);

/// Patient-class probability softmax(logits)[1] for a two-logit row.
double patient_probability(double logit0, double logit1);

}  // namespace softcbm
