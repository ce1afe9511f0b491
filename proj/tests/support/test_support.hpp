#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "softcbm/cohort.hpp"
#include "softcbm/rng.hpp"

namespace softcbm::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("softcbm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Phantom ranges that fit a 32^3 grid.
inline CohortOptions small_cohort_options() {
  CohortOptions o;
  o.grid = {32, 32, 32};
  o.noise_sigma = 0.01;
  o.tube_radius_min = 1.5;
  o.tube_radius_max = 1.8;
  o.bulge_factor_min = 2.0;
  o.bulge_factor_max = 3.0;
  o.stenosis_max = 0.2;
  o.control_ectasia_max = 1.1;
  return o;
}

/// Generates a cohort on disk and loads it at `input` resolution.
inline CohortData small_cohort(const std::filesystem::path& dir, int patients, int controls, std::uint64_t seed,
                               Shape3 input = {16, 16, 16}) {
  generate_cohort(patients, controls, seed, dir, small_cohort_options());
  return load_cohort(dir, input);
}

inline Volume random_volume(Shape3 shape, std::uint64_t seed) {
  Rng rng(seed);
  Volume v(shape);
  for (float& x : v.data()) x = static_cast<float>(rng.uniform());
  return v;
}

}  // namespace softcbm::testing
