#include "softcbm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "softcbm/error.hpp"
#include "softcbm/rng.hpp"

namespace softcbm {

std::string to_string(AugmentTier tier) {
  switch (tier) {
    case AugmentTier::train: return "train";
    case AugmentTier::control: return "control";
    case AugmentTier::tta: return "tta";
  }
  return "unknown";
}

void AugmentPolicy::validate() const {
  require(flip_axes_probability >= 0.0 && flip_axes_probability <= 1.0, "flip probability must lie in [0,1]");
  require(max_rotation_degrees >= 0.0 && max_rotation_degrees <= 180.0, "rotation must lie in [0,180] degrees");
  require(intensity_scale_range.first > 0.0 && intensity_scale_range.first <= intensity_scale_range.second,
          "intensity scale range must be positive and ordered");
  require(noise_sigma_max >= 0.0, "noise sigma must be >= 0");
  require(zoom_range.first > 0.0 && zoom_range.first <= zoom_range.second, "zoom range must be positive and ordered");
}

bool AugmentPolicy::is_identity() const {
  return flip_axes_probability == 0.0 && max_rotation_degrees == 0.0 && intensity_scale_range == std::pair{1.0, 1.0} &&
         noise_sigma_max == 0.0 && zoom_range == std::pair{1.0, 1.0};
}

PolicySet default_policies() {
  PolicySet p;
  p.train = {AugmentTier::train, 0.5, 10.0, {0.9, 1.1}, 0.02, {0.95, 1.05}};
  p.control = {AugmentTier::control, 0.5, 25.0, {0.8, 1.2}, 0.05, {0.9, 1.1}};
  p.tta = {AugmentTier::tta, 0.5, 5.0, {1.0, 1.0}, 0.0, {1.0, 1.0}};
  return p;
}

AugmentPolicy identity_policy(AugmentTier tier) {
  AugmentPolicy p;
  p.tier = tier;
  return p;
}

Volume apply_flips(const Volume& volume, std::array<bool, 3> mask) {
  if (!mask[0] && !mask[1] && !mask[2]) return volume;
  const Shape3& s = volume.shape();
  Volume out(s, volume.spacing());
  for (int z = 0; z < s.d; ++z) {
    const int sz = mask[0] ? s.d - 1 - z : z;
    for (int y = 0; y < s.h; ++y) {
      const int sy = mask[1] ? s.h - 1 - y : y;
      for (int x = 0; x < s.w; ++x) {
        const int sx = mask[2] ? s.w - 1 - x : x;
        out.at(z, y, x) = volume.at(sz, sy, sx);
      }
    }
  }
  return out;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Rodrigues rotation matrix for a unit axis.
Mat3 rotation_matrix(const std::array<double, 3>& axis, double radians) {
  const double c = std::cos(radians), s = std::sin(radians), t = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
           {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
           {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

Volume rotate_and_zoom(const Volume& volume, const Mat3& rotation, double zoom) {
  const Shape3& s = volume.shape();
  const double cz = (s.d - 1) / 2.0, cy = (s.h - 1) / 2.0, cx = (s.w - 1) / 2.0;
  Volume out(s, volume.spacing());
  // Output point p maps back to input R^T (p - c) / zoom + c.
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const double pz = (z - cz) / zoom, py = (y - cy) / zoom, px = (x - cx) / zoom;
        const double iz = rotation[0][0] * pz + rotation[1][0] * py + rotation[2][0] * px + cz;
        const double iy = rotation[0][1] * pz + rotation[1][1] * py + rotation[2][1] * px + cy;
        const double ix = rotation[0][2] * pz + rotation[1][2] * py + rotation[2][2] * px + cx;
        out.at(z, y, x) = sample_trilinear(volume, iz, iy, ix, 0.0f);
      }
  return out;
}

}  // namespace

Volume apply_augment(const Volume& volume, const AugmentPolicy& policy, std::uint64_t seed, int epoch,
                     std::uint64_t sample_index) {
  policy.validate();
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(epoch), sample_index,
                       static_cast<std::uint64_t>(policy.tier)}));

  std::array<bool, 3> mask{};
  for (auto& m : mask) m = rng.bernoulli(policy.flip_axes_probability);
  Volume out = apply_flips(volume, mask);

  const double angle_deg = rng.uniform(-policy.max_rotation_degrees, policy.max_rotation_degrees);
  // Uniform direction on the sphere.
  const double uz = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double rho = std::sqrt(std::max(0.0, 1.0 - uz * uz));
  const std::array<double, 3> axis{uz, rho * std::sin(phi), rho * std::cos(phi)};
  const double zoom = rng.uniform(policy.zoom_range.first, policy.zoom_range.second);
  if (policy.max_rotation_degrees > 0.0 || policy.zoom_range.first != policy.zoom_range.second || zoom != 1.0)
    out = rotate_and_zoom(out, rotation_matrix(axis, angle_deg * std::numbers::pi / 180.0), zoom);

  const double scale = rng.uniform(policy.intensity_scale_range.first, policy.intensity_scale_range.second);
  const double sigma = rng.uniform(0.0, policy.noise_sigma_max);
  const bool scaled = policy.intensity_scale_range != std::pair{1.0, 1.0};
  const bool noisy = policy.noise_sigma_max > 0.0;
  if (scaled || noisy) {
    for (float& v : out.data()) {
      double value = static_cast<double>(v) * scale;
      if (noisy) value += rng.normal(0.0, sigma);
      v = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace softcbm
