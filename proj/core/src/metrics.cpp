#include "softcbm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "softcbm/error.hpp"

namespace softcbm {

Confusion confusion_from(std::span<const int> labels, std::span<const int> predicted) {
  require(labels.size() == predicted.size(), "label and prediction counts differ");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      (predicted[i] == 1 ? c.tp : c.fn)++;
    else
      (predicted[i] == 1 ? c.fp : c.tn)++;
  }
  return c;
}

MetricsSummary compute_metrics(std::span<const PredictionRecord> records) {
  require(!records.empty(), "metrics need at least one prediction");
  std::vector<int> labels, predicted;
  std::vector<double> scores;
  for (const auto& r : records) {
    require(r.true_label == 0 || r.true_label == 1, "prediction " + r.subject_id + " has no true label");
    labels.push_back(r.true_label);
    predicted.push_back(r.probability >= kDecisionThreshold ? 1 : 0);
    scores.push_back(r.probability);
  }
  MetricsSummary m;
  m.confusion = confusion_from(labels, predicted);
  const Confusion& c = m.confusion;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.sensitivity = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  m.specificity = c.tn + c.fp > 0 ? static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp) : 0.0;
  const bool both = c.tp + c.fn > 0 && c.tn + c.fp > 0;
  m.auc = both ? roc_auc(scores, labels).auc : 0.5;
  return m;
}

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "score and label counts differ");
  long long pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, "labels must be 0 or 1");
    require(std::isfinite(scores[i]), "scores must be finite");
    (labels[i] == 1 ? pos : neg)++;
  }
  require(pos > 0 && neg > 0, "ROC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult out;
  out.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  // Twice the area in units of one (positive, negative) pair.
  long long area2 = 0, tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    long long dtp = 0, dfp = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == 1 ? dtp : dfp)++;
    area2 += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    out.curve.push_back({s, static_cast<double>(fp) / static_cast<double>(neg),
                         static_cast<double>(tp) / static_cast<double>(pos)});
  }
  out.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return out;
}

bool gap_check(double train_acc, double val_acc, double threshold) {
  return std::abs(train_acc - val_acc) <= threshold;
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::string format_percent_pm(double mean_fraction, double std_fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%% \xC2\xB1 %.1f%%", mean_fraction * 100.0, std_fraction * 100.0);
  return buf;
}

}  // namespace softcbm
