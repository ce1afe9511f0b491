#include "softcbm/losses.hpp"

#include <cmath>

#include "softcbm/error.hpp"

namespace softcbm {

double patient_probability(double logit0, double logit1) {
  const double d = logit0 - logit1;
  return d >= 0.0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
}

template <typename T>
double focal_loss(const Tensor<T>& logits, std::span<const int> labels, double gamma, double smoothing,
                  Tensor<T>* grad) {
  require(gamma >= 0.0, "gamma must be >= 0");
  require(smoothing >= 0.0 && smoothing < 1.0, "smoothing must lie in [0, 1)");
  require(logits.rank() == 2 && logits.dim(1) == 2, "focal loss expects (N, 2) logits");
  const std::size_t n = static_cast<std::size_t>(logits.dim(0));
  require(n == labels.size() && n > 0, "focal loss needs one label per row");
  if (grad) *grad = Tensor<T>(logits.shape());

  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l[2] = {logits[2 * i], logits[2 * i + 1]};
    if (!std::isfinite(l[0]) || !std::isfinite(l[1])) throw NumericError("non-finite logits in focal loss");
    require(labels[i] == 0 || labels[i] == 1, "labels must be 0 or 1");
    const double mx = std::max(l[0], l[1]);
    const double lse = mx + std::log(std::exp(l[0] - mx) + std::exp(l[1] - mx));
    const double logp[2] = {l[0] - lse, l[1] - lse};
    const double p[2] = {patient_probability(l[1], l[0]), patient_probability(l[0], l[1])};
    // For two classes 1 - p_k is the other class probability, which keeps it accurate near 1.
    const double q[2] = {p[1], p[0]};
    double t[2];
    t[labels[i]] = 1.0 - smoothing / 2.0;
    t[1 - labels[i]] = smoothing / 2.0;

    double loss = 0.0;
    // d/dl_j of (1-p_k)^g log p_k = (delta_kj - p_j) * ((1-p_k)^g - g (1-p_k)^(g-1) p_k log p_k).
    double coef[2];
    for (int k = 0; k < 2; ++k) {
      const double w = gamma == 0.0 ? 1.0 : std::pow(q[k], gamma);
      loss -= t[k] * w * logp[k];
      const double extra = (gamma == 0.0 || q[k] == 0.0) ? 0.0 : gamma * std::pow(q[k], gamma - 1.0) * p[k] * logp[k];
      coef[k] = -t[k] * (w - extra);
    }
    sum += loss;
    if (grad)
      for (int j = 0; j < 2; ++j) {
        double g = 0.0;
        for (int k = 0; k < 2; ++k) g += coef[k] * ((k == j ? 1.0 : 0.0) - p[j]);
        (*grad)[2 * i + j] = static_cast<T>(g / static_cast<double>(n));
      }
  }
  const double mean = sum / static_cast<double>(n);
  if (!std::isfinite(mean)) throw NumericError("focal loss is not finite");
  return mean;
}

template <typename T>
double concept_mse(const Tensor<T>& predicted, const Tensor<T>& target, Tensor<T>* grad) {
  require(predicted.same_shape(target), "concept prediction and target shapes differ");
  require(predicted.size() > 0, "concept loss needs at least one value");
  const double count = static_cast<double>(predicted.size());
  if (grad) *grad = Tensor<T>(predicted.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = static_cast<double>(predicted[i]) - static_cast<double>(target[i]);
    sum += d * d;
    if (grad) (*grad)[i] = static_cast<T>(2.0 * d / count);
  }
  const double mean = sum / count;
  if (!std::isfinite(mean)) throw NumericError("concept loss is not finite");
  return mean;
}

LossBreakdown total_loss(double task, double concepts, double alpha, double beta) {
  return {task, concepts, beta * task + alpha * concepts};
}

template double focal_loss(const Tensor<float>&, std::span<const int>, double, double, Tensor<float>*);
template double focal_loss(const Tensor<double>&, std::span<const int>, double, double, Tensor<double>*);
template double concept_mse(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double concept_mse(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);

}  // namespace softcbm
