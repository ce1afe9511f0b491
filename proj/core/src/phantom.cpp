#include "softcbm/phantom.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <optional>

#include "softcbm/error.hpp"
#include "softcbm/rng.hpp"

namespace softcbm {

namespace {

constexpr double kProfileCutoff = 2.5;
constexpr int kMaxAttempts = 10;
constexpr int kAngleSegments = 16;
constexpr int kCurvatureStencil = 4;  // samples, i.e. one voxel at step 0.25

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  return (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 +
          (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3) *
         0.5;
}

// Dense spline through the control points, then resampled to uniform arc length.
std::vector<Vec3> build_centerline(const std::vector<Vec3>& ctrl, double step) {
  constexpr int kDense = 400;
  std::vector<Vec3> dense;
  const std::size_t n = ctrl.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Vec3& p0 = ctrl[i == 0 ? 0 : i - 1];
    const Vec3& p1 = ctrl[i];
    const Vec3& p2 = ctrl[i + 1];
    const Vec3& p3 = ctrl[std::min(i + 2, n - 1)];
    for (int k = 0; k < kDense; ++k) dense.push_back(catmull_rom(p0, p1, p2, p3, double(k) / kDense));
  }
  dense.push_back(ctrl.back());

  std::vector<double> cumulative(dense.size(), 0.0);
  for (std::size_t i = 1; i < dense.size(); ++i)
    cumulative[i] = cumulative[i - 1] + (dense[i] - dense[i - 1]).norm();
  const double total = cumulative.back();
  const auto samples = static_cast<std::size_t>(std::floor(total / step)) + 1;

  std::vector<Vec3> out;
  out.reserve(samples);
  std::size_t seg = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    const double target = static_cast<double>(s) * step;
    while (seg + 2 < dense.size() && cumulative[seg + 1] < target) ++seg;
    const double len = cumulative[seg + 1] - cumulative[seg];
    const double t = len > 0.0 ? std::clamp((target - cumulative[seg]) / len, 0.0, 1.0) : 0.0;
    out.push_back(dense[seg] + (dense[seg + 1] - dense[seg]) * t);
  }
  return out;
}

double bump(double s, double center, double width) {
  const double u = (s - center) / width;
  return std::exp(-u * u);
}

double angle_degrees(const Vec3& a, const Vec3& b) {
  const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

Vec3 tangent_at(const std::vector<Vec3>& line, std::size_t i) {
  const std::size_t a = i == 0 ? 0 : i - 1;
  const std::size_t b = std::min(i + 1, line.size() - 1);
  return (line[b] - line[a]).normalized();
}

bool inside(const Shape3& grid, const Vec3& p, double margin) {
  return p.z >= margin && p.y >= margin && p.x >= margin && p.z <= grid.d - 1 - margin &&
         p.y <= grid.h - 1 - margin && p.x <= grid.w - 1 - margin;
}

// Menger curvature of three points.
double three_point_curvature(const Vec3& a, const Vec3& b, const Vec3& c) {
  const double ab = (b - a).norm(), bc = (c - b).norm(), ca = (a - c).norm();
  const double denom = ab * bc * ca;
  if (denom <= 0.0) return 0.0;
  return 2.0 * (b - a).cross(c - a).norm() / denom;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

std::optional<PhantomGeometry> try_build_geometry(const PhantomSpec& spec, Rng& rng) {
  PhantomGeometry g;
  g.grid = spec.grid;
  g.control_point_count = spec.centerline_control_points;
  g.tube_radius = spec.tube_radius;

  const int axis = static_cast<int>(rng.index(3));
  const double widest = spec.tube_radius * spec.ectasia_factor;
  const double bulge_radial = spec.bulge_present ? spec.bulge_diameter_factor * spec.tube_radius : 0.0;
  const double lateral_margin = std::max(widest, bulge_radial) + 2.0;
  const double axial_margin = spec.tube_radius + 2.0;

  std::vector<Vec3> ctrl;
  const int n = spec.centerline_control_points;
  for (int i = 0; i < n; ++i) {
    double c[3];
    for (int a = 0; a < 3; ++a) {
      const double extent = spec.grid[a] - 1;
      if (a == axis) {
        c[a] = axial_margin + (extent - 2.0 * axial_margin) * i / (n - 1);
      } else {
        const double half_free = std::max(0.0, extent / 2.0 - lateral_margin);
        c[a] = extent / 2.0 + rng.uniform(-1.0, 1.0) * half_free * spec.lateral_wander;
      }
    }
    ctrl.push_back({c[0], c[1], c[2]});
  }
  g.centerline = build_centerline(ctrl, g.step);
  if (g.centerline.size() < 16) return std::nullopt;

  const double length = g.arc_length();
  const double stenosis_at = (rng.bernoulli(0.5) ? rng.uniform(0.15, 0.28) : rng.uniform(0.72, 0.85)) * length;
  const double ectasia_at = rng.uniform(0.4, 0.6) * length;
  const double bulge_at = rng.uniform(0.4, 0.6);
  g.radius.resize(g.centerline.size());
  for (std::size_t i = 0; i < g.centerline.size(); ++i) {
    const double s = static_cast<double>(i) * g.step;
    g.radius[i] = spec.tube_radius * (1.0 - spec.stenosis_depth * bump(s, stenosis_at, 0.08 * length)) *
                  (1.0 + (spec.ectasia_factor - 1.0) * bump(s, ectasia_at, 0.10 * length));
  }

  for (std::size_t i = 0; i < g.centerline.size(); ++i)
    if (!inside(spec.grid, g.centerline[i], g.radius[i] + 1.0)) return std::nullopt;

  if (spec.bulge_present) {
    const auto idx = static_cast<std::size_t>(bulge_at * static_cast<double>(g.centerline.size() - 1));
    g.bulge_present = true;
    g.bulge_center = g.centerline[idx];
    g.bulge_axis = tangent_at(g.centerline, idx);
    g.bulge_semi_radial = bulge_radial;
    g.bulge_semi_axial = spec.bulge_aspect * bulge_radial;
    // The half-maximum shell of the bulge must lie inside the grid.
    const double a2 = g.bulge_semi_axial * g.bulge_semi_axial;
    const double b2 = g.bulge_semi_radial * g.bulge_semi_radial;
    const double t[3] = {g.bulge_axis.z, g.bulge_axis.y, g.bulge_axis.x};
    const double c[3] = {g.bulge_center.z, g.bulge_center.y, g.bulge_center.x};
    for (int a = 0; a < 3; ++a) {
      const double half_extent = std::sqrt(a2 * t[a] * t[a] + b2 * (1.0 - t[a] * t[a])) + 1.0;
      if (c[a] - half_extent < 0.0 || c[a] + half_extent > spec.grid[a] - 1) return std::nullopt;
    }
  }

  g.osi_noise = rng.normal(0.0, 0.02);
  g.osi_mean_noise = rng.normal(0.0, 0.02);
  return g;
}

}  // namespace

double PhantomGeometry::arc_length() const {
  return centerline.empty() ? 0.0 : step * static_cast<double>(centerline.size() - 1);
}

void PhantomSpec::validate() const {
  require(grid.d >= 8 && grid.h >= 8 && grid.w >= 8, "phantom grid must be at least 8 voxels per axis");
  require(tube_radius >= 1.5, "tube_radius must be >= 1.5 voxels");
  require(centerline_control_points >= 2, "need at least two centerline control points");
  require(!bulge_present || (bulge_diameter_factor > 1.0 && bulge_diameter_factor <= 4.0),
          "bulge_diameter_factor must lie in (1, 4]");
  require(bulge_aspect >= 1.0 && bulge_aspect <= 3.0, "bulge_aspect must lie in [1, 3]");
  require(stenosis_depth >= 0.0 && stenosis_depth <= 0.6, "stenosis_depth must lie in [0, 0.6]");
  require(ectasia_factor >= 1.0 && ectasia_factor <= 1.5, "ectasia_factor must lie in [1, 1.5]");
  require(lateral_wander >= 0.0 && lateral_wander <= 1.0, "lateral_wander must lie in [0, 1]");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "noise_sigma must be >= 0");
}

double lumen_profile(double q) {
  if (q >= kProfileCutoff) return 0.0;
  return std::exp(-std::numbers::ln2 * q * q);
}

Volume rasterize_geometry(const PhantomGeometry& g) {
  Volume volume(g.grid);
  const Shape3& s = g.grid;
  auto splat_box = [&](const Vec3& lo, const Vec3& hi, auto&& value_at) {
    const int z0 = std::max(0, static_cast<int>(std::floor(lo.z)));
    const int y0 = std::max(0, static_cast<int>(std::floor(lo.y)));
    const int x0 = std::max(0, static_cast<int>(std::floor(lo.x)));
    const int z1 = std::min(s.d - 1, static_cast<int>(std::ceil(hi.z)));
    const int y1 = std::min(s.h - 1, static_cast<int>(std::ceil(hi.y)));
    const int x1 = std::min(s.w - 1, static_cast<int>(std::ceil(hi.x)));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double v = value_at(Vec3{double(z), double(y), double(x)});
          float& dst = volume.at(z, y, x);
          if (v > dst) dst = static_cast<float>(v);
        }
  };

  for (std::size_t i = 0; i + 1 < g.centerline.size(); ++i) {
    const Vec3& a = g.centerline[i];
    const Vec3& b = g.centerline[i + 1];
    const double ra = g.radius[i], rb = g.radius[i + 1];
    const double reach = kProfileCutoff * std::max(ra, rb);
    const Vec3 lo{std::min(a.z, b.z) - reach, std::min(a.y, b.y) - reach, std::min(a.x, b.x) - reach};
    const Vec3 hi{std::max(a.z, b.z) + reach, std::max(a.y, b.y) + reach, std::max(a.x, b.x) + reach};
    const Vec3 ab = b - a;
    const double len2 = ab.dot(ab);
    splat_box(lo, hi, [&](const Vec3& p) {
      const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      const double d = (p - (a + ab * t)).norm();
      const double r = ra + (rb - ra) * t;
      return lumen_profile(d / r);
    });
  }

  if (g.bulge_present) {
    const double reach = kProfileCutoff * g.bulge_semi_axial;
    const Vec3& c = g.bulge_center;
    splat_box(c - Vec3{reach, reach, reach}, c + Vec3{reach, reach, reach}, [&](const Vec3& p) {
      const Vec3 rel = p - c;
      const double axial = rel.dot(g.bulge_axis);
      const double radial2 = std::max(0.0, rel.dot(rel) - axial * axial);
      const double q2 = (axial * axial) / (g.bulge_semi_axial * g.bulge_semi_axial) +
                        radial2 / (g.bulge_semi_radial * g.bulge_semi_radial);
      return lumen_profile(std::sqrt(q2));
    });
  }
  return volume;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(attempt)}));
    auto geometry = try_build_geometry(spec, rng);
    if (!geometry) continue;

    Phantom phantom{rasterize_geometry(*geometry), std::move(*geometry), {}};
    if (spec.noise_sigma > 0.0) {
      Rng noise(derive_seed({spec.seed, static_cast<std::uint64_t>(attempt), 0x6E6F697365ULL}));
      for (float& v : phantom.volume.data()) v += static_cast<float>(noise.normal(0.0, spec.noise_sigma));
    }
    phantom.concepts = derive_concepts(phantom.geometry);
    return phantom;
  }
  throw ValidationError("phantom centerline left the grid margin in " + std::to_string(kMaxAttempts) +
                        " attempts (seed " + std::to_string(spec.seed) + ")");
}

const std::vector<std::string>& leaky_concept_names() {
  static const std::vector<std::string> names{"aneurysm_flag", "dome_height", "neck_width", "sac_volume"};
  return names;
}

const std::vector<std::string>& concept_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n{
        "tortuosity",          "vessel_angle",        "arc_length",           "chord_length",
        "mean_curvature",      "max_curvature",       "curvature_std",        "curvature_q90",
        "curvature_location",  "min_radius",          "mean_radius",          "max_radius",
        "radius_std",          "radius_cv",           "reference_radius",     "stenosis_ratio",
        "max_diameter_ratio",  "size_ratio",          "max_cross_section_area", "vessel_volume",
        "surface_area",        "wss_surrogate",       "wss_mean_surrogate",   "wss_min_surrogate",
        "pressure_drop_surrogate", "velocity_ratio",  "osi_surrogate",        "osi_mean_surrogate",
        "inflow_angle",        "outflow_angle",       "centroid_offset",      "tangent_dispersion",
        "control_point_count"};
    for (const auto& leaky : leaky_concept_names()) n.push_back(leaky);
    return n;
  }();
  return names;
}

ConceptMap derive_concepts(const PhantomGeometry& g) {
  require(g.centerline.size() >= 2 && g.radius.size() == g.centerline.size(),
          "geometry needs a sampled centerline with radii");
  const std::size_t n = g.centerline.size();
  ConceptMap c;

  const double arc = g.arc_length();
  const double chord = (g.centerline.back() - g.centerline.front()).norm();
  c["tortuosity"] = chord > 0.0 ? arc / chord : 1.0;
  c["arc_length"] = arc;
  c["chord_length"] = chord;

  // Segment directions over equal-arc pieces.
  std::vector<Vec3> dirs;
  for (int j = 0; j < kAngleSegments; ++j) {
    const auto i0 = static_cast<std::size_t>(double(j) * double(n - 1) / kAngleSegments);
    const auto i1 = static_cast<std::size_t>(double(j + 1) * double(n - 1) / kAngleSegments);
    if (i1 > i0) dirs.push_back(g.centerline[i1] - g.centerline[i0]);
  }
  double max_angle = 0.0;
  for (std::size_t j = 1; j < dirs.size(); ++j) max_angle = std::max(max_angle, angle_degrees(dirs[j - 1], dirs[j]));
  c["vessel_angle"] = max_angle;

  std::vector<double> curvature;
  for (std::size_t i = kCurvatureStencil; i + kCurvatureStencil < n; ++i)
    curvature.push_back(three_point_curvature(g.centerline[i - kCurvatureStencil], g.centerline[i],
                                              g.centerline[i + kCurvatureStencil]));
  std::size_t max_k_at = 0;
  double max_k = 0.0;
  if (!curvature.empty()) {
    const auto it = std::max_element(curvature.begin(), curvature.end());
    max_k = *it;
    max_k_at = static_cast<std::size_t>(it - curvature.begin()) + kCurvatureStencil;
  }
  const double mean_k = mean_of(curvature);
  c["mean_curvature"] = mean_k;
  c["max_curvature"] = max_k;
  c["curvature_std"] = stddev_of(curvature);
  {
    std::vector<double> sorted = curvature;
    std::sort(sorted.begin(), sorted.end());
    c["curvature_q90"] = sorted.empty() ? 0.0 : sorted[static_cast<std::size_t>(0.9 * double(sorted.size() - 1))];
  }
  c["curvature_location"] = curvature.empty() ? 0.5 : static_cast<double>(max_k_at) / static_cast<double>(n - 1);

  const auto [rmin_it, rmax_it] = std::minmax_element(g.radius.begin(), g.radius.end());
  const double rmin = *rmin_it, rmax = *rmax_it;
  const double rmean = mean_of(g.radius);
  c["min_radius"] = rmin;
  c["mean_radius"] = rmean;
  c["max_radius"] = rmax;
  c["radius_std"] = stddev_of(g.radius);
  c["radius_cv"] = rmean > 0.0 ? stddev_of(g.radius) / rmean : 0.0;
  c["reference_radius"] = g.tube_radius;
  c["stenosis_ratio"] = rmax > 0.0 ? 1.0 - rmin / rmax : 0.0;

  const double max_local = std::max(rmax, g.bulge_present ? g.bulge_semi_radial : 0.0);
  c["max_diameter_ratio"] = max_local / g.tube_radius;
  c["size_ratio"] = max_local / rmin;
  c["max_cross_section_area"] = std::numbers::pi * max_local * max_local;

  double volume = 0.0, surface = 0.0, resistance = 0.0;
  for (double r : g.radius) {
    volume += std::numbers::pi * r * r * g.step;
    surface += 2.0 * std::numbers::pi * r * g.step;
    resistance += g.step / (r * r * r * r);
  }
  if (g.bulge_present) {
    const double a = g.bulge_semi_axial, b = g.bulge_semi_radial;
    volume += std::max(0.0, 4.0 / 3.0 * std::numbers::pi * a * b * b -
                                std::numbers::pi * g.tube_radius * g.tube_radius * 2.0 * a);
    // Knud Thomsen approximation for the prolate spheroid surface.
    constexpr double p = 1.6075;
    const double ellipsoid_area =
        4.0 * std::numbers::pi *
        std::pow((std::pow(a * b, p) * 2.0 + std::pow(b * b, p)) / 3.0, 1.0 / p);
    surface += std::max(0.0, ellipsoid_area - 2.0 * std::numbers::pi * g.tube_radius * 2.0 * a);
  }
  c["vessel_volume"] = volume;
  c["surface_area"] = surface;

  c["wss_surrogate"] = kWallShearConstant / (rmin * rmin * rmin);
  c["wss_mean_surrogate"] = kWallShearConstant / (rmean * rmean * rmean);
  c["wss_min_surrogate"] = kWallShearConstant / (max_local * max_local * max_local);
  c["pressure_drop_surrogate"] = resistance;
  c["velocity_ratio"] = (max_local / rmin) * (max_local / rmin);

  c["osi_surrogate"] = std::clamp(0.5 * std::tanh(max_k / 0.15) + g.osi_noise, 0.0, 0.5);
  c["osi_mean_surrogate"] = std::clamp(0.5 * std::tanh(mean_k / 0.05) + g.osi_mean_noise, 0.0, 0.5);

  const Vec3 chord_dir = g.centerline.back() - g.centerline.front();
  c["inflow_angle"] = dirs.empty() ? 0.0 : angle_degrees(dirs.front(), chord_dir);
  c["outflow_angle"] = dirs.empty() ? 0.0 : angle_degrees(dirs.back(), chord_dir);

  Vec3 centroid{};
  Vec3 tangent_sum{};
  for (std::size_t i = 0; i < n; ++i) {
    centroid = centroid + g.centerline[i];
    tangent_sum = tangent_sum + tangent_at(g.centerline, i);
  }
  centroid = centroid * (1.0 / double(n));
  const Vec3 grid_center{(g.grid.d - 1) / 2.0, (g.grid.h - 1) / 2.0, (g.grid.w - 1) / 2.0};
  c["centroid_offset"] = (centroid - grid_center).norm();
  c["tangent_dispersion"] = std::max(0.0, 1.0 - tangent_sum.norm() / double(n));
  c["control_point_count"] = g.control_point_count;

  if (g.bulge_present) {
    c["aneurysm_flag"] = 1.0;
    c["dome_height"] = 2.0 * g.bulge_semi_axial;
    c["neck_width"] = 2.0 * g.tube_radius;
    c["sac_volume"] = 4.0 / 3.0 * std::numbers::pi * g.bulge_semi_axial * g.bulge_semi_radial * g.bulge_semi_radial;
  } else {
    for (const auto& name : leaky_concept_names()) c[name] = 0.0;
  }
  return c;
}

}  // namespace softcbm
