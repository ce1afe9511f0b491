#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "softcbm/kv_document.hpp"

namespace softcbm::cli {

/// Record of one command invocation, written as `<command>.manifest.json`
/// next to the command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  /// Fully resolved experiment configuration.
  KeyValueDocument config;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  /// Every file the command wrote, relative to the manifest directory when possible.
  std::vector<std::string> artifacts;

  std::string to_json() const;
  static RunManifest from_json(std::string_view text);
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// Runs `softcbm <args...>`; `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace softcbm::cli
