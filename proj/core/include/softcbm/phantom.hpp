#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "softcbm/volume.hpp"

namespace softcbm {

using ConceptMap = std::map<std::string, double>;

/// Point or direction in voxel coordinates (z, y, x).
struct Vec3 {
  double z = 0.0;
  double y = 0.0;
  double x = 0.0;

  Vec3 operator+(const Vec3& o) const { return {z + o.z, y + o.y, x + o.x}; }
  Vec3 operator-(const Vec3& o) const { return {z - o.z, y - o.y, x - o.x}; }
  Vec3 operator*(double s) const { return {z * s, y * s, x * s}; }
  double dot(const Vec3& o) const { return z * o.z + y * o.y + x * o.x; }
  Vec3 cross(const Vec3& o) const { return {y * o.x - x * o.y, x * o.z - z * o.x, z * o.y - y * o.z}; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0.0 ? *this * (1.0 / n) : Vec3{};
  }
};

/// Parameters of one synthetic vessel phantom. `bulge_present` is the label.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Shape3 grid{96, 96, 96};
  double tube_radius = 3.0;  // voxels
  int centerline_control_points = 5;
  bool bulge_present = false;
  double bulge_diameter_factor = 2.0;  // in (1, 4]
  double bulge_aspect = 1.4;           // axial / radial semi-axis of the ellipsoid
  double stenosis_depth = 0.0;         // fractional narrowing, [0, 0.6]
  double ectasia_factor = 1.0;         // diffuse widening, [1, 1.5]
  double lateral_wander = 0.6;         // [0, 1], spread of control points across the free width
  double noise_sigma = 0.0;

  void validate() const;
};

/// Geometry behind a phantom: the centerline sampled at uniform arc-length
/// `step`, the local lumen radius at each sample, and the optional bulge.
struct PhantomGeometry {
  Shape3 grid{};
  int control_point_count = 0;
  std::vector<Vec3> centerline;
  std::vector<double> radius;
  double step = 0.25;
  double tube_radius = 0.0;

  bool bulge_present = false;
  Vec3 bulge_center{};
  Vec3 bulge_axis{};
  double bulge_semi_axial = 0.0;
  double bulge_semi_radial = 0.0;

  /// Seeded perturbations of the shear-index surrogates, drawn at generation time.
  double osi_noise = 0.0;
  double osi_mean_noise = 0.0;

  double arc_length() const;
};

struct Phantom {
  Volume volume;
  PhantomGeometry geometry;
  ConceptMap concepts;
};

/// Constant k in the Poiseuille-style shear surrogate k / r^3.
inline constexpr double kWallShearConstant = 4.0;

/// Intensity of the vessel profile at normalized distance q (q = 1 on the lumen wall).
/// Half maximum sits exactly on the wall; the profile is cut to 0 beyond q = 2.5.
double lumen_profile(double q);

/// Deterministic in `spec.seed`. Retries with a perturbed seed when the vessel
/// does not fit inside the grid; throws ValidationError after 10 attempts.
Phantom generate_phantom(const PhantomSpec& spec);

/// Rasterizes a geometry without noise (exposed for tests and tooling).
Volume rasterize_geometry(const PhantomGeometry& geometry);

/// Morphological and hemodynamic surrogate concepts, plus the deliberately
/// label-leaking ones (non-zero only when a bulge is present).
ConceptMap derive_concepts(const PhantomGeometry& geometry);

/// Names emitted by derive_concepts that are intended as label leaks.
const std::vector<std::string>& leaky_concept_names();

/// Every name derive_concepts emits, in emission order.
const std::vector<std::string>& concept_names();

}  // namespace softcbm
