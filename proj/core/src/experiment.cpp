#include "softcbm/experiment.hpp"

#include <cstdlib>
#include <set>

#include "softcbm/error.hpp"

namespace softcbm {

Shape3 parse_shape(const std::string& text) {
  std::string t = text;
  for (char& ch : t)
    if (ch == 'x' || ch == 'X' || ch == ',') ch = ' ';
  std::vector<int> parts;
  for (const auto& p : split(t, ' '))
    if (!trim(p).empty()) parts.push_back(static_cast<int>(parse_int(trim(p))));
  if (parts.size() == 1) return {parts[0], parts[0], parts[0]};
  require(parts.size() == 3, "shape needs one or three integers, got '" + text + "'");
  return {parts[0], parts[1], parts[2]};
}

std::string shape_text(const Shape3& s) {
  return std::to_string(s.d) + " " + std::to_string(s.h) + " " + std::to_string(s.w);
}

std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv(kSeedEnvVar);
  if (!v || !*v) return std::nullopt;
  return parse_seed(v);
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config_value,
                           std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto env = seed_from_env()) return *env;
  if (config_value) return *config_value;
  return fallback;
}

void ExperimentConfig::validate() const {
  require(patients >= 1 && controls >= 1, "cohort needs patients and controls");
  require(jobs >= 1, "run.jobs must be >= 1");
  require(gap_threshold >= 0.0, "run.gap_threshold must be >= 0");
  cohort.validate();
  backbone.validate();
  train.validate();
}

KeyValueDocument ExperimentConfig::to_document() const {
  KeyValueDocument doc;
  doc.set("seed", std::to_string(seed));
  doc.set("cohort.dir", cohort_dir);
  doc.set("cohort.patients", patients);
  doc.set("cohort.controls", controls);
  doc.set("cohort.grid", shape_text(cohort.grid));
  doc.set("cohort.noise_sigma", cohort.noise_sigma);
  doc.set("cohort.tube_radius_min", cohort.tube_radius_min);
  doc.set("cohort.tube_radius_max", cohort.tube_radius_max);
  doc.set("cohort.bulge_factor_min", cohort.bulge_factor_min);
  doc.set("cohort.bulge_factor_max", cohort.bulge_factor_max);
  doc.set("cohort.bulge_aspect_min", cohort.bulge_aspect_min);
  doc.set("cohort.bulge_aspect_max", cohort.bulge_aspect_max);
  doc.set("cohort.stenosis_max", cohort.stenosis_max);
  doc.set("cohort.control_ectasia_max", cohort.control_ectasia_max);
  doc.set("cohort.control_points", cohort.control_points);
  doc.set("cohort.lateral_wander", cohort.lateral_wander);
  doc.set("model.backbone", to_string(backbone.kind));
  doc.set("model.width_scale", backbone.width_scale);
  doc.set("model.input_shape", shape_text(backbone.input_shape));
  train.write(doc);
  doc.set("run.jobs", jobs);
  doc.set("run.gap_threshold", gap_threshold);
  return doc;
}

ExperimentConfig ExperimentConfig::from_document(const KeyValueDocument& doc) {
  ExperimentConfig c;
  const KeyValueDocument defaults = c.to_document();
  for (const auto& [key, value] : doc.entries())
    require(defaults.contains(key), "unknown config key: " + key);

  if (auto s = doc.get("seed")) c.seed = parse_seed(*s);
  c.train.seed = c.seed;
  if (auto s = doc.get("cohort.dir")) c.cohort_dir = *s;
  if (doc.contains("cohort.patients")) c.patients = static_cast<int>(doc.get_int("cohort.patients"));
  if (doc.contains("cohort.controls")) c.controls = static_cast<int>(doc.get_int("cohort.controls"));
  if (auto s = doc.get("cohort.grid")) c.cohort.grid = parse_shape(*s);
  auto d = [&](const char* key, double& v) {
    if (doc.contains(key)) v = doc.get_double(key);
  };
  d("cohort.noise_sigma", c.cohort.noise_sigma);
  d("cohort.tube_radius_min", c.cohort.tube_radius_min);
  d("cohort.tube_radius_max", c.cohort.tube_radius_max);
  d("cohort.bulge_factor_min", c.cohort.bulge_factor_min);
  d("cohort.bulge_factor_max", c.cohort.bulge_factor_max);
  d("cohort.bulge_aspect_min", c.cohort.bulge_aspect_min);
  d("cohort.bulge_aspect_max", c.cohort.bulge_aspect_max);
  d("cohort.stenosis_max", c.cohort.stenosis_max);
  d("cohort.control_ectasia_max", c.cohort.control_ectasia_max);
  if (doc.contains("cohort.control_points")) c.cohort.control_points = static_cast<int>(doc.get_int("cohort.control_points"));
  d("cohort.lateral_wander", c.cohort.lateral_wander);
  if (auto s = doc.get("model.backbone")) c.backbone.kind = parse_backbone_kind(*s);
  d("model.width_scale", c.backbone.width_scale);
  if (auto s = doc.get("model.input_shape")) c.backbone.input_shape = parse_shape(*s);
  c.train.read(doc);
  if (doc.contains("run.jobs")) c.jobs = static_cast<int>(doc.get_int("run.jobs"));
  d("run.gap_threshold", c.gap_threshold);
  c.validate();
  return c;
}

}  // namespace softcbm
