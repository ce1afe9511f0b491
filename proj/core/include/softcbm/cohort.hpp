#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "softcbm/concepts.hpp"
#include "softcbm/phantom.hpp"
#include "softcbm/volume.hpp"

namespace softcbm {

/// One cohort member. `volume_path` is relative to the cohort directory and
/// names the volume pair without extension.
struct SubjectRecord {
  std::string subject_id;
  int label = 0;  // 1 = patient, 0 = control
  std::string volume_path;
  ConceptMap concepts;
  bool synthetic = false;

  friend bool operator==(const SubjectRecord&, const SubjectRecord&) = default;
};

/// Ranges from which per-subject phantom parameters are drawn.
struct CohortOptions {
  Shape3 grid{96, 96, 96};
  double noise_sigma = 0.02;
  double tube_radius_min = 2.0;
  double tube_radius_max = 3.5;
  double bulge_factor_min = 1.3;
  double bulge_factor_max = 2.8;
  double bulge_aspect_min = 1.2;
  double bulge_aspect_max = 1.6;
  double stenosis_max = 0.4;
  /// Controls get a diffuse widening up to this factor, so diameter concepts overlap between classes.
  double control_ectasia_max = 1.3;
  int control_points = 5;
  double lateral_wander = 0.6;
  /// Parallel workers; output is identical for any value.
  int jobs = 1;

  void validate() const;
};

inline constexpr const char* kCohortManifestName = "cohort.json";
inline constexpr const char* kConceptTableName = "concepts.csv";

/// Per-subject phantom spec derived from the master seed and subject index.
PhantomSpec subject_phantom_spec(const CohortOptions& options, std::uint64_t master_seed, std::size_t index,
                                 bool patient);

/// Subject identifiers: patients p001..., controls c001...; patients come first.
std::string subject_id_for(bool patient, std::size_t ordinal);

/// Generates phantoms, writes `volumes/<id>.vol{hdr,raw}`, `cohort.json` and
/// `concepts.csv` under `out_dir`, and returns the records.
std::vector<SubjectRecord> generate_cohort(int n_patients, int n_controls, std::uint64_t seed,
                                           const std::filesystem::path& out_dir,
                                           const CohortOptions& options = {});

std::string cohort_manifest_json(const std::vector<SubjectRecord>& records, std::uint64_t seed,
                                 const CohortOptions& options);
ConceptTable concept_table_from(const std::vector<SubjectRecord>& records);

/// Reads `cohort.json` + `concepts.csv`; concept maps are attached to records.
std::vector<SubjectRecord> read_cohort_manifest(const std::filesystem::path& cohort_dir);

/// Cohort held in memory: records, preprocessed volumes and the concept table.
struct CohortData {
  std::vector<SubjectRecord> records;
  std::vector<Volume> volumes;
  ConceptTable table;

  std::vector<int> labels() const;
  std::size_t size() const { return records.size(); }
  /// Throws ValidationError for an unknown id.
  std::size_t index_of(const std::string& subject_id) const;
};

/// Loads every volume, resamples it to `input_shape` and normalizes intensities.
CohortData load_cohort(const std::filesystem::path& cohort_dir, Shape3 input_shape);

/// Same preprocessing as load_cohort for one volume.
Volume preprocess_volume(const Volume& raw, Shape3 input_shape);

}  // namespace softcbm
