#include "softcbm/concepts.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "softcbm/error.hpp"
#include "softcbm/kv_document.hpp"

namespace softcbm {

ConceptTable::ConceptTable(std::vector<std::string> names, std::vector<std::string> subject_ids,
                           std::vector<double> values)
    : names_(std::move(names)), subject_ids_(std::move(subject_ids)), values_(std::move(values)) {
  require(values_.size() == names_.size() * subject_ids_.size(), "concept matrix does not match names x subjects");
  for (double v : values_) require(std::isfinite(v), "concept table contains a non-finite value");
}

std::size_t ConceptTable::column(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  require(it != names_.end(), "unknown concept '" + name + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

std::map<std::string, double> ConceptTable::row_map(std::size_t row) const {
  std::map<std::string, double> out;
  for (std::size_t j = 0; j < names_.size(); ++j) out[names_[j]] = at(row, j);
  return out;
}

std::string ConceptTable::to_csv() const {
  std::string out = "subject_id";
  for (const auto& n : names_) out += "," + n;
  out += '\n';
  for (std::size_t i = 0; i < rows(); ++i) {
    out += subject_ids_[i];
    for (std::size_t j = 0; j < cols(); ++j) out += "," + format_exact(at(i, j));
    out += '\n';
  }
  return out;
}

ConceptTable ConceptTable::from_csv(std::string_view text) {
  auto lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw FormatError("empty concept CSV");
  auto header = split(trim(lines[0]), ',');
  if (header.empty() || header[0] != "subject_id") throw FormatError("concept CSV must start with subject_id");
  std::vector<std::string> names(header.begin() + 1, header.end());
  std::vector<std::string> ids;
  std::vector<double> values;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(trim(lines[i]), ',');
    if (cells.size() != header.size())
      throw FormatError("concept CSV row " + std::to_string(i) + " has " + std::to_string(cells.size()) + " cells");
    ids.push_back(cells[0]);
    for (std::size_t j = 1; j < cells.size(); ++j) values.push_back(parse_double(cells[j]));
  }
  return ConceptTable(std::move(names), std::move(ids), std::move(values));
}

const std::vector<std::string>& leakage_keywords() {
  static const std::vector<std::string> keywords{"aneurysm", "sac", "dome", "neck"};
  return keywords;
}

bool is_leaky(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::any_of(leakage_keywords().begin(), leakage_keywords().end(),
                     [&](const std::string& k) { return lower.find(k) != std::string::npos; });
}

std::vector<std::string> leakage_filter(std::span<const std::string> names) {
  std::vector<std::string> kept;
  for (const auto& n : names)
    if (!is_leaky(n)) kept.push_back(n);
  return kept;
}

std::size_t ConceptSelection::index_of(const std::string& name) const {
  const auto it = std::find(kept_names.begin(), kept_names.end(), name);
  require(it != kept_names.end(), "concept '" + name + "' is not part of the selection");
  return static_cast<std::size_t>(it - kept_names.begin());
}

std::string ConceptSelection::to_json() const {
  nlohmann::ordered_json j;
  j["fold_id"] = fold_id;
  auto& arr = j["concepts"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < kept_names.size(); ++i) {
    nlohmann::ordered_json c;
    c["name"] = kept_names[i];
    c["min"] = mins[i];
    c["max"] = maxs[i];
    c["score"] = scores[i];
    arr.push_back(std::move(c));
  }
  return j.dump(2) + "\n";
}

ConceptSelection ConceptSelection::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ConceptSelection s;
    s.fold_id = j.at("fold_id").get<int>();
    for (const auto& c : j.at("concepts")) {
      s.kept_names.push_back(c.at("name").get<std::string>());
      s.mins.push_back(c.at("min").get<double>());
      s.maxs.push_back(c.at("max").get<double>());
      s.scores.push_back(c.at("score").get<double>());
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad concept selection: ") + e.what());
  }
}

double point_biserial(std::span<const double> values, std::span<const int> labels) {
  require(values.size() == labels.size(), "point_biserial needs aligned inputs");
  const auto n = static_cast<double>(values.size());
  if (values.size() < 2) return 0.0;
  const double mx = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double my = 0.0;
  for (int l : labels) my += l;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double dx = values[i] - mx, dy = labels[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

ConceptSelection select_concepts(const ConceptTable& table, std::span<const int> labels,
                                 std::span<const std::size_t> train_indices, int k, int fold_id,
                                 LeakagePolicy policy) {
  require(k > 0, "concept count k must be positive");
  require(!train_indices.empty(), "concept selection needs training rows");
  require(labels.size() == table.rows(), "labels must align with the concept table");
  for (std::size_t idx : train_indices) require(idx < table.rows(), "training index out of range");

  std::vector<std::string> pool =
      policy == LeakagePolicy::filter ? leakage_filter(table.names()) : table.names();

  std::vector<int> train_labels;
  for (std::size_t idx : train_indices) train_labels.push_back(labels[idx]);

  struct Ranked {
    std::string name;
    double score;
    double min;
    double max;
  };
  std::vector<Ranked> ranked;
  std::vector<double> column;
  for (const auto& name : pool) {
    const std::size_t col = table.column(name);
    column.clear();
    for (std::size_t idx : train_indices) column.push_back(table.at(idx, col));
    const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
    ranked.push_back({name, std::abs(point_biserial(column, train_labels)), *lo, *hi});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.name < b.name;
  });
  if (ranked.size() > static_cast<std::size_t>(k)) ranked.resize(static_cast<std::size_t>(k));

  ConceptSelection sel;
  sel.fold_id = fold_id;
  for (const auto& r : ranked) {
    sel.kept_names.push_back(r.name);
    sel.mins.push_back(r.min);
    sel.maxs.push_back(r.max);
    sel.scores.push_back(r.score);
  }
  return sel;
}

std::vector<double> normalize_concepts(const ConceptSelection& selection, const std::map<std::string, double>& raw) {
  std::vector<double> out;
  out.reserve(selection.size());
  for (std::size_t i = 0; i < selection.size(); ++i) {
    const auto it = raw.find(selection.kept_names[i]);
    require(it != raw.end(), "missing concept '" + selection.kept_names[i] + "'");
    const double range = selection.maxs[i] - selection.mins[i];
    if (range <= 0.0) {
      out.push_back(0.5);
      continue;
    }
    out.push_back(std::clamp((it->second - selection.mins[i]) / range, 0.0, 1.0));
  }
  return out;
}

std::vector<double> normalize_row(const ConceptSelection& selection, const ConceptTable& table, std::size_t row) {
  return normalize_concepts(selection, table.row_map(row));
}

}  // namespace softcbm
