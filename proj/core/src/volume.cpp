#include "softcbm/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "softcbm/error.hpp"
#include "softcbm/kv_document.hpp"

namespace softcbm {

namespace {

constexpr const char* kDtypeTag = "f32le";

std::filesystem::path strip_volume_extension(const std::filesystem::path& base) {
  const auto ext = base.extension();
  if (ext == ".volhdr" || ext == ".volraw") {
    auto stripped = base;
    stripped.replace_extension();
    return stripped;
  }
  return base;
}

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

std::vector<std::byte> encode_payload(std::span<const float> values) {
  std::vector<std::byte> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(bytes.data() + 4 * i, &bits, 4);
  }
  return bytes;
}

// Interpolation that returns `a` exactly when t == 0 and stays inside [min(a,b), max(a,b)].
double lerp_bounded(double a, double b, double t) {
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  const double v = a + t * (b - a);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace

std::string Shape3::to_string() const {
  return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

Volume::Volume(Shape3 shape, Spacing spacing, float fill)
    : shape_(shape), spacing_(spacing) {
  require(shape.d >= 2 && shape.h >= 2 && shape.w >= 2,
          "volume extents must be >= 2, got " + shape.to_string());
  for (double s : spacing) require(s > 0.0 && std::isfinite(s), "volume spacing must be positive");
  require(std::isfinite(fill), "volume fill value must be finite");
  data_.assign(shape.voxels(), fill);
}

Volume::Volume(Shape3 shape, Spacing spacing, std::vector<float> data)
    : shape_(shape), spacing_(spacing), data_(std::move(data)) {
  validate();
}

void Volume::validate() const {
  require(shape_.d >= 2 && shape_.h >= 2 && shape_.w >= 2,
          "volume extents must be >= 2, got " + shape_.to_string());
  for (double s : spacing_) require(s > 0.0 && std::isfinite(s), "volume spacing must be positive");
  require(data_.size() == shape_.voxels(), "volume payload size does not match shape");
  for (float v : data_) require(std::isfinite(v), "volume contains a non-finite value");
}

bool bitwise_equal(const Volume& a, const Volume& b) {
  if (!(a.shape() == b.shape()) || a.spacing() != b.spacing()) return false;
  const auto da = a.data();
  const auto db = b.data();
  return std::memcmp(da.data(), db.data(), da.size() * sizeof(float)) == 0;
}

std::uint32_t crc32_bytes(std::span<const std::byte> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t remaining = bytes.size();
  while (remaining > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::filesystem::path volume_header_path(const std::filesystem::path& base) {
  auto p = strip_volume_extension(base);
  p += ".volhdr";
  return p;
}

std::filesystem::path volume_payload_path(const std::filesystem::path& base) {
  auto p = strip_volume_extension(base);
  p += ".volraw";
  return p;
}

void save_volume(const Volume& volume, const std::filesystem::path& base) {
  volume.validate();
  const auto bytes = encode_payload(volume.data());

  KeyValueDocument header;
  header.set("format", "softcbm-volume");
  header.set("version", 1);
  const Shape3& s = volume.shape();
  header.set("shape", std::to_string(s.d) + " " + std::to_string(s.h) + " " + std::to_string(s.w));
  const Spacing& sp = volume.spacing();
  header.set("spacing", format_exact(sp[0]) + " " + format_exact(sp[1]) + " " + format_exact(sp[2]));
  header.set("dtype_tag", kDtypeTag);
  header.set("checksum", static_cast<long long>(crc32_bytes(bytes)));

  const auto raw_path = volume_payload_path(base);
  std::ofstream out(raw_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + raw_path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + raw_path.string());
  out.close();
  header.save(volume_header_path(base));
}

Volume load_volume(const std::filesystem::path& base) {
  const auto header = KeyValueDocument::load(volume_header_path(base));
  if (header.require("dtype_tag") != kDtypeTag)
    throw FormatError("unsupported dtype_tag '" + header.require("dtype_tag") + "'");

  const auto shape_parts = split(trim(header.require("shape")), ' ');
  const auto spacing_parts = split(trim(header.require("spacing")), ' ');
  if (shape_parts.size() != 3 || spacing_parts.size() != 3)
    throw FormatError("volume header needs three shape and spacing components");
  Shape3 shape{static_cast<int>(parse_int(shape_parts[0])), static_cast<int>(parse_int(shape_parts[1])),
               static_cast<int>(parse_int(shape_parts[2]))};
  if (shape.d < 2 || shape.h < 2 || shape.w < 2) throw FormatError("volume header shape is degenerate");
  Spacing spacing{parse_double(spacing_parts[0]), parse_double(spacing_parts[1]),
                  parse_double(spacing_parts[2])};
  const long long checksum = header.get_int("checksum");

  const auto raw_path = volume_payload_path(base);
  std::ifstream in(raw_path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + raw_path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != shape.voxels() * 4)
    throw FormatError("payload has " + std::to_string(size) + " bytes, header implies " +
                      std::to_string(shape.voxels() * 4));
  std::vector<std::byte> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed: " + raw_path.string());
  if (crc32_bytes(bytes) != static_cast<std::uint32_t>(checksum))
    throw CorruptionError("checksum mismatch in " + raw_path.string());

  std::vector<float> values(shape.voxels());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    values[i] = std::bit_cast<float>(to_little_endian(bits));
  }
  try {
    return Volume(shape, spacing, std::move(values));
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid volume payload: ") + e.what());
  }
}

float sample_trilinear(const Volume& v, double z, double y, double x, float outside) {
  const Shape3& s = v.shape();
  if (z < 0.0 || y < 0.0 || x < 0.0 || z > s.d - 1 || y > s.h - 1 || x > s.w - 1) return outside;
  const int z0 = std::min(static_cast<int>(z), s.d - 1);
  const int y0 = std::min(static_cast<int>(y), s.h - 1);
  const int x0 = std::min(static_cast<int>(x), s.w - 1);
  const int z1 = std::min(z0 + 1, s.d - 1);
  const int y1 = std::min(y0 + 1, s.h - 1);
  const int x1 = std::min(x0 + 1, s.w - 1);
  const double tz = z - z0, ty = y - y0, tx = x - x0;
  const double c00 = lerp_bounded(v.at(z0, y0, x0), v.at(z0, y0, x1), tx);
  const double c01 = lerp_bounded(v.at(z0, y1, x0), v.at(z0, y1, x1), tx);
  const double c10 = lerp_bounded(v.at(z1, y0, x0), v.at(z1, y0, x1), tx);
  const double c11 = lerp_bounded(v.at(z1, y1, x0), v.at(z1, y1, x1), tx);
  const double c0 = lerp_bounded(c00, c01, ty);
  const double c1 = lerp_bounded(c10, c11, ty);
  return static_cast<float>(lerp_bounded(c0, c1, tz));
}

Volume resample_trilinear(const Volume& volume, Shape3 target) {
  const Shape3& in = volume.shape();
  require(in.d >= 2 && in.h >= 2 && in.w >= 2, "cannot resample a degenerate volume");
  require(target.d >= 2 && target.h >= 2 && target.w >= 2,
          "target shape components must be >= 2, got " + target.to_string());
  if (in == target) return volume;

  auto coords = [](int n_in, int n_out) {
    std::vector<double> c(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i)
      c[static_cast<std::size_t>(i)] = static_cast<double>(i) * (n_in - 1) / (n_out - 1);
    return c;
  };
  const auto cz = coords(in.d, target.d);
  const auto cy = coords(in.h, target.h);
  const auto cx = coords(in.w, target.w);

  const Spacing& sp = volume.spacing();
  Spacing out_spacing{sp[0] * (in.d - 1) / (target.d - 1), sp[1] * (in.h - 1) / (target.h - 1),
                      sp[2] * (in.w - 1) / (target.w - 1)};
  Volume out(target, out_spacing);
  for (int z = 0; z < target.d; ++z)
    for (int y = 0; y < target.h; ++y)
      for (int x = 0; x < target.w; ++x)
        out.at(z, y, x) = sample_trilinear(volume, cz[static_cast<std::size_t>(z)],
                                           cy[static_cast<std::size_t>(y)],
                                           cx[static_cast<std::size_t>(x)]);
  return out;
}

double percentile(std::vector<float>& values, double q) {
  require(!values.empty(), "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(values[lo]) + frac * (static_cast<double>(values[hi]) - values[lo]);
}

Volume normalize_intensity(const Volume& volume) {
  volume.validate();
  const auto data = volume.data();
  const auto [min_it, max_it] = std::minmax_element(data.begin(), data.end());
  Volume out(volume.shape(), volume.spacing());
  if (*min_it == *max_it) {
    std::fill(out.data().begin(), out.data().end(), 0.5f);
    return out;
  }

  std::vector<float> sorted(data.begin(), data.end());
  double lo = percentile(sorted, 1.0);
  double hi = percentile(sorted, 99.0);
  if (!(hi > lo)) {
    // Sparse foreground can collapse the percentile window; use the full range instead.
    lo = *min_it;
    hi = *max_it;
  }
  const double range = hi - lo;
  auto dst = out.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double clipped = std::clamp(static_cast<double>(data[i]), lo, hi);
    dst[i] = static_cast<float>(std::clamp((clipped - lo) / range, 0.0, 1.0));
  }
  return out;
}

}  // namespace softcbm
