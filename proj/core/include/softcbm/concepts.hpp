#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace softcbm {

/// Subjects x concepts matrix of raw (unnormalized) concept values.
class ConceptTable {
 public:
  ConceptTable() = default;
  ConceptTable(std::vector<std::string> names, std::vector<std::string> subject_ids, std::vector<double> values);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::string>& subject_ids() const { return subject_ids_; }
  std::size_t rows() const { return subject_ids_.size(); }
  std::size_t cols() const { return names_.size(); }

  double at(std::size_t row, std::size_t col) const { return values_[row * names_.size() + col]; }
  double& at(std::size_t row, std::size_t col) { return values_[row * names_.size() + col]; }
  /// Throws ValidationError for an unknown name.
  std::size_t column(const std::string& name) const;
  std::map<std::string, double> row_map(std::size_t row) const;

  /// CSV with header `subject_id,<names...>`; values written losslessly.
  std::string to_csv() const;
  static ConceptTable from_csv(std::string_view text);

 private:
  std::vector<std::string> names_;
  std::vector<std::string> subject_ids_;
  std::vector<double> values_;
};

/// Keywords that mark a concept as a direct label leak.
const std::vector<std::string>& leakage_keywords();

/// Drops names containing any leakage keyword (case-insensitive substring); order preserved.
std::vector<std::string> leakage_filter(std::span<const std::string> names);

bool is_leaky(const std::string& name);

enum class LeakagePolicy { filter, admit };

/// Per-fold concept bottleneck definition: ranked kept names and the
/// training-fold min/max used for normalization.
struct ConceptSelection {
  int fold_id = 0;
  std::vector<std::string> kept_names;
  std::vector<double> mins;
  std::vector<double> maxs;
  /// |point-biserial r| on the training rows, aligned with kept_names.
  std::vector<double> scores;

  std::size_t size() const { return kept_names.size(); }
  /// Throws ValidationError for a name that is not kept.
  std::size_t index_of(const std::string& name) const;

  std::string to_json() const;
  static ConceptSelection from_json(std::string_view text);
  friend bool operator==(const ConceptSelection&, const ConceptSelection&) = default;
};

inline constexpr int kDefaultConceptCount = 26;

/// Pearson correlation between a concept column and 0/1 labels; 0 when either is constant.
double point_biserial(std::span<const double> values, std::span<const int> labels);

/// Ranks (after leakage filtering, unless `policy == admit`) by |point-biserial r|
/// on `train_indices` only and keeps the top `k`; ties go to the lexicographically
/// smaller name.
ConceptSelection select_concepts(const ConceptTable& table, std::span<const int> labels,
                                 std::span<const std::size_t> train_indices, int k = kDefaultConceptCount,
                                 int fold_id = 0, LeakagePolicy policy = LeakagePolicy::filter);

/// Min-max with training-fold stats, clamped to [0,1]; zero-range concepts give 0.5.
std::vector<double> normalize_concepts(const ConceptSelection& selection, const std::map<std::string, double>& raw);

/// Normalized targets for one table row.
std::vector<double> normalize_row(const ConceptSelection& selection, const ConceptTable& table, std::size_t row);

}  // namespace softcbm
