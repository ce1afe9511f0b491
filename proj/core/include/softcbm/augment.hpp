#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "softcbm/volume.hpp"

namespace softcbm {

enum class AugmentTier { train = 0, control = 1, tta = 2 };

std::string to_string(AugmentTier tier);

/// Magnitudes of one augmentation tier. Sampled per call:
/// flips with `flip_axes_probability` per axis, rotation angle uniform in
/// [-max, max] degrees about a uniformly random axis, zoom and intensity scale
/// uniform in their ranges, noise sd uniform in [0, noise_sigma_max].
struct AugmentPolicy {
  AugmentTier tier = AugmentTier::train;
  double flip_axes_probability = 0.0;
  double max_rotation_degrees = 0.0;
  std::pair<double, double> intensity_scale_range{1.0, 1.0};
  double noise_sigma_max = 0.0;
  std::pair<double, double> zoom_range{1.0, 1.0};

  void validate() const;
  bool is_identity() const;
};

struct PolicySet {
  AugmentPolicy train;
  AugmentPolicy control;
  AugmentPolicy tta;
};

/// Train tier: moderate; control tier: strong (for oversampled duplicates);
/// tta tier: flips and small rotations only.
PolicySet default_policies();

AugmentPolicy identity_policy(AugmentTier tier);

/// Reverses the volume along every axis whose mask entry is set (0 = D, 1 = H, 2 = W).
Volume apply_flips(const Volume& volume, std::array<bool, 3> mask);

/// Flips, then rotation and zoom (one trilinear resample about the grid center,
/// zero background), then intensity scale, then additive Gaussian noise; values are
/// clipped to [0,1] when an intensity step ran. The random stream is derived from
/// (seed, epoch, sample_index, tier) only, so results do not depend on batching.
Volume apply_augment(const Volume& volume, const AugmentPolicy& policy, std::uint64_t seed, int epoch,
                     std::uint64_t sample_index);

}  // namespace softcbm
