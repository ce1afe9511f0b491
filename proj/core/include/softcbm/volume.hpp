#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace softcbm {

/// Grid extent in voxels, D outermost.
struct Shape3 {
  int d = 0;
  int h = 0;
  int w = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  int operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
  friend bool operator==(const Shape3&, const Shape3&) = default;
  std::string to_string() const;
};

using Spacing = std::array<double, 3>;

/// Dense 3D scalar field of 32-bit floats with per-axis voxel spacing (mm).
/// Invariants: every extent >= 2, spacing > 0, all values finite.
class Volume {
 public:
  Volume() = default;
  Volume(Shape3 shape, Spacing spacing = {1.0, 1.0, 1.0}, float fill = 0.0f);
  Volume(Shape3 shape, Spacing spacing, std::vector<float> data);

  const Shape3& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::vector<float>& storage() { return data_; }

  std::size_t offset(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(shape_.h) +
            static_cast<std::size_t>(y)) * static_cast<std::size_t>(shape_.w) +
           static_cast<std::size_t>(x);
  }
  float& at(int z, int y, int x) { return data_[offset(z, y, x)]; }
  float at(int z, int y, int x) const { return data_[offset(z, y, x)]; }

  /// Throws ValidationError when an invariant is violated.
  void validate() const;

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Shape3 shape_{};
  Spacing spacing_{1.0, 1.0, 1.0};
  std::vector<float> data_;
};

/// Bitwise identity of the payload (distinguishes -0.0 from 0.0, compares NaN payloads).
bool bitwise_equal(const Volume& a, const Volume& b);

/// CRC-32 (IEEE) of a byte range.
std::uint32_t crc32_bytes(std::span<const std::byte> bytes);

/// Writes `<base>.volhdr` (key/value header) and `<base>.volraw` (f32 little-endian,
/// row-major with D outermost). A trailing .volhdr/.volraw on `base` is ignored.
void save_volume(const Volume& volume, const std::filesystem::path& base);

/// Reads a volume pair written by save_volume and verifies shape, dtype and checksum.
Volume load_volume(const std::filesystem::path& base);

std::filesystem::path volume_header_path(const std::filesystem::path& base);
std::filesystem::path volume_payload_path(const std::filesystem::path& base);

/// Trilinear interpolation at a continuous voxel coordinate. Coordinates outside
/// the grid return `outside`.
float sample_trilinear(const Volume& volume, double z, double y, double x, float outside = 0.0f);

/// Corner-aligned trilinear resampling: output index i maps to input
/// coordinate i*(N_in-1)/(N_out-1) on each axis.
Volume resample_trilinear(const Volume& volume, Shape3 target);

/// Clips to the [1st, 99th] percentile range, then min-max scales to [0,1].
/// Constant volumes map to 0.5 everywhere.
Volume normalize_intensity(const Volume& volume);

/// Linear-interpolated percentile of `values` (q in [0,100]); `values` is reordered.
double percentile(std::vector<float>& values, double q);

}  // namespace softcbm
