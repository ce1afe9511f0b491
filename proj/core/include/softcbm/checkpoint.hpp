#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "softcbm/model.hpp"

namespace softcbm {

struct LoadReport {
  std::vector<std::string> matched;
  std::vector<std::string> missing;      // in the model, absent from the checkpoint
  std::vector<std::string> unexpected;   // in the checkpoint, absent from the model
  std::vector<std::string> mismatched;   // present in both with different shapes
  std::string fingerprint;               // architecture recorded by the checkpoint

  bool clean() const { return missing.empty() && unexpected.empty() && mismatched.empty(); }
};

/// Writes `path` (raw little-endian f32 tensors back to back) and
/// `path.manifest` (JSON: names, shapes, offsets, dtype, fingerprint, CRC-32).
/// With include_heads false only encoder tensors are stored.
void save_checkpoint(const Model& model, const std::filesystem::path& path, bool include_heads = true);

/// Overwrites parameters and buffers whose name and shape match. In strict
/// mode any missing, unexpected or mis-shaped tensor raises LoadError and
/// leaves the model untouched. Unreadable files raise IoError; a damaged
/// manifest or payload raises FormatError.
LoadReport load_checkpoint(Model& model, const std::filesystem::path& path, bool strict);

std::filesystem::path checkpoint_manifest_path(const std::filesystem::path& path);

}  // namespace softcbm
