#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace softcbm {

struct PredictionRecord {
  std::string subject_id;
  int true_label = -1;          // -1 when unknown
  double probability = 0.0;     // patient class
  int predicted_label = 0;      // probability >= 0.5
  std::vector<double> predicted_concepts;
  std::vector<double> per_pass_probabilities;  // filled by TTA only
  std::vector<double> logits;                  // two entries; empty after TTA
};

inline constexpr double kDecisionThreshold = 0.5;

struct Confusion {
  long long tp = 0, fn = 0, fp = 0, tn = 0;
  long long total() const { return tp + fn + fp + tn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct MetricsSummary {
  Confusion confusion;
  double accuracy = 0.0;
  /// Rates with an empty denominator are reported as 0.
  double sensitivity = 0.0;
  double specificity = 0.0;
  /// 0.5 when only one class is present.
  double auc = 0.5;
  double train_val_gap = 0.0;
};

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  double auc = 0.0;
  /// Starts at (inf, 0, 0) and ends at (min score, 1, 1); one point per distinct score.
  std::vector<RocPoint> curve;
};

Confusion confusion_from(std::span<const int> labels, std::span<const int> predicted);

/// Throws ValidationError for an empty list or a record without a label.
MetricsSummary compute_metrics(std::span<const PredictionRecord> records);

/// Trapezoidal ROC area over all thresholds. Ties are grouped, so the area
/// equals the pairwise statistic with tied pairs counted 0.5. Exact integer
/// arithmetic is used until the final division. Throws ValidationError when
/// either class is missing.
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);

/// |train_acc - val_acc| <= threshold.
bool gap_check(double train_acc, double val_acc, double threshold = 0.04);

double mean_of(std::span<const double> values);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_std(std::span<const double> values);

/// Fractions rendered as "93.33% ± 4.5%".
std::string format_percent_pm(double mean_fraction, double std_fraction);

}  // namespace softcbm
