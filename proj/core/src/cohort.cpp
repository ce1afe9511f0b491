#include "softcbm/cohort.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "softcbm/error.hpp"
#include "softcbm/kv_document.hpp"
#include "softcbm/rng.hpp"

namespace softcbm {

void CohortOptions::validate() const {
  require(grid.d >= 8 && grid.h >= 8 && grid.w >= 8, "cohort grid must be at least 8 voxels per axis");
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(tube_radius_min >= 1.5 && tube_radius_max >= tube_radius_min, "tube radius range is invalid");
  require(bulge_factor_min > 1.0 && bulge_factor_max <= 4.0 && bulge_factor_max >= bulge_factor_min,
          "bulge factor range must lie in (1, 4]");
  require(bulge_aspect_min >= 1.0 && bulge_aspect_max >= bulge_aspect_min, "bulge aspect range is invalid");
  require(stenosis_max >= 0.0 && stenosis_max <= 0.6, "stenosis_max must lie in [0, 0.6]");
  require(control_ectasia_max >= 1.0 && control_ectasia_max <= 1.5, "control_ectasia_max must lie in [1, 1.5]");
  require(control_points >= 2, "need at least two control points");
  require(jobs >= 1, "jobs must be >= 1");
}

std::string subject_id_for(bool patient, std::size_t ordinal) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%03zu", patient ? 'p' : 'c', ordinal + 1);
  return buf;
}

PhantomSpec subject_phantom_spec(const CohortOptions& o, std::uint64_t master_seed, std::size_t index,
                                 bool patient) {
  Rng rng(derive_seed({master_seed, index, 1}));
  PhantomSpec spec;
  spec.seed = derive_seed({master_seed, index, 2});
  spec.grid = o.grid;
  spec.tube_radius = rng.uniform(o.tube_radius_min, o.tube_radius_max);
  spec.centerline_control_points = o.control_points;
  spec.stenosis_depth = rng.uniform(0.0, o.stenosis_max);
  spec.lateral_wander = o.lateral_wander;
  spec.noise_sigma = o.noise_sigma;
  spec.bulge_present = patient;
  const double factor = rng.uniform(o.bulge_factor_min, o.bulge_factor_max);
  const double aspect = rng.uniform(o.bulge_aspect_min, o.bulge_aspect_max);
  const double ectasia = rng.uniform(1.0, o.control_ectasia_max);
  if (patient) {
    spec.bulge_diameter_factor = factor;
    spec.bulge_aspect = aspect;
  } else {
    spec.ectasia_factor = ectasia;
  }
  return spec;
}

std::vector<SubjectRecord> generate_cohort(int n_patients, int n_controls, std::uint64_t seed,
                                           const std::filesystem::path& out_dir, const CohortOptions& options) {
  require(n_patients >= 0 && n_controls >= 0, "subject counts must be non-negative");
  options.validate();

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "volumes", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "volumes").string() + ": " + ec.message());

  const auto total = static_cast<std::size_t>(n_patients + n_controls);
  std::vector<SubjectRecord> records(total);
  for (std::size_t i = 0; i < total; ++i) {
    const bool patient = i < static_cast<std::size_t>(n_patients);
    const std::size_t ordinal = patient ? i : i - static_cast<std::size_t>(n_patients);
    records[i].subject_id = subject_id_for(patient, ordinal);
    records[i].label = patient ? 1 : 0;
    records[i].volume_path = "volumes/" + records[i].subject_id;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= total) return;
      try {
        const auto spec = subject_phantom_spec(options, seed, i, records[i].label == 1);
        Phantom phantom = generate_phantom(spec);
        save_volume(phantom.volume, out_dir / records[i].volume_path);
        records[i].concepts = std::move(phantom.concepts);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(total);
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, options.jobs));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  write_text_file(out_dir / kCohortManifestName, cohort_manifest_json(records, seed, options));
  write_text_file(out_dir / kConceptTableName, concept_table_from(records).to_csv());
  return records;
}

std::string cohort_manifest_json(const std::vector<SubjectRecord>& records, std::uint64_t seed,
                                 const CohortOptions& o) {
  nlohmann::ordered_json j;
  j["format"] = "softcbm-cohort";
  j["seed"] = seed;
  j["grid"] = {o.grid.d, o.grid.h, o.grid.w};
  j["noise_sigma"] = o.noise_sigma;
  j["tube_radius_range"] = {o.tube_radius_min, o.tube_radius_max};
  j["bulge_factor_range"] = {o.bulge_factor_min, o.bulge_factor_max};
  j["bulge_aspect_range"] = {o.bulge_aspect_min, o.bulge_aspect_max};
  j["stenosis_max"] = o.stenosis_max;
  j["control_ectasia_max"] = o.control_ectasia_max;
  j["control_points"] = o.control_points;
  j["lateral_wander"] = o.lateral_wander;
  auto& subjects = j["subjects"] = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json s;
    s["subject_id"] = r.subject_id;
    s["label"] = r.label;
    s["volume_path"] = r.volume_path;
    s["synthetic"] = r.synthetic;
    subjects.push_back(std::move(s));
  }
  return j.dump(2) + "\n";
}

ConceptTable concept_table_from(const std::vector<SubjectRecord>& records) {
  if (records.empty()) return ConceptTable({}, {}, {});
  std::vector<std::string> names;
  for (const auto& n : concept_names())
    if (records.front().concepts.count(n)) names.push_back(n);
  for (const auto& [n, v] : records.front().concepts)
    if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);

  std::vector<std::string> ids;
  std::vector<double> values;
  for (const auto& r : records) {
    require(r.concepts.size() == names.size(), "subject " + r.subject_id + " has a different concept key set");
    ids.push_back(r.subject_id);
    for (const auto& n : names) {
      const auto it = r.concepts.find(n);
      require(it != r.concepts.end(), "subject " + r.subject_id + " lacks concept " + n);
      values.push_back(it->second);
    }
  }
  return ConceptTable(std::move(names), std::move(ids), std::move(values));
}

std::vector<SubjectRecord> read_cohort_manifest(const std::filesystem::path& cohort_dir) {
  std::vector<SubjectRecord> records;
  try {
    const auto j = nlohmann::json::parse(read_text_file(cohort_dir / kCohortManifestName));
    for (const auto& s : j.at("subjects")) {
      SubjectRecord r;
      r.subject_id = s.at("subject_id").get<std::string>();
      r.label = s.at("label").get<int>();
      r.volume_path = s.at("volume_path").get<std::string>();
      r.synthetic = s.at("synthetic").get<bool>();
      if (r.label != 0 && r.label != 1) throw FormatError("label must be 0 or 1 for " + r.subject_id);
      records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad cohort manifest: ") + e.what());
  }
  const auto table = ConceptTable::from_csv(read_text_file(cohort_dir / kConceptTableName));
  if (table.rows() != records.size()) throw FormatError("concept table and manifest disagree on subject count");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (table.subject_ids()[i] != records[i].subject_id)
      throw FormatError("concept table row " + std::to_string(i) + " is not " + records[i].subject_id);
    records[i].concepts = table.row_map(i);
  }
  return records;
}

std::vector<int> CohortData::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

std::size_t CohortData::index_of(const std::string& subject_id) const {
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].subject_id == subject_id) return i;
  throw ValidationError("unknown subject '" + subject_id + "'");
}

Volume preprocess_volume(const Volume& raw, Shape3 input_shape) {
  return normalize_intensity(resample_trilinear(raw, input_shape));
}

CohortData load_cohort(const std::filesystem::path& cohort_dir, Shape3 input_shape) {
  CohortData data;
  data.records = read_cohort_manifest(cohort_dir);
  data.table = ConceptTable::from_csv(read_text_file(cohort_dir / kConceptTableName));
  data.volumes.reserve(data.records.size());
  for (const auto& r : data.records)
    data.volumes.push_back(preprocess_volume(load_volume(cohort_dir / r.volume_path), input_shape));
  return data;
}

}  // namespace softcbm
