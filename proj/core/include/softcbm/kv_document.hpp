#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace softcbm {

/// Flat `key = value` text document. Order of insertion is preserved so that
/// serialization is byte-stable. Lines starting with '#' are comments.
class KeyValueDocument {
 public:
  static KeyValueDocument parse(std::string_view text);
  /// Throws IoError if the file cannot be read, FormatError on a bad line.
  static KeyValueDocument load(const std::filesystem::path& path);

  void set(std::string key, std::string value);
  void set(std::string key, double value);
  void set(std::string key, long long value);
  void set(std::string key, int value) { set(std::move(key), static_cast<long long>(value)); }
  void set(std::string key, bool value) { set(std::move(key), std::string(value ? "true" : "false")); }
  void set(std::string key, const char* value) { set(std::move(key), std::string(value)); }

  bool contains(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  /// Throws FormatError when the key is absent.
  const std::string& require(std::string_view key) const;

  double get_double(std::string_view key) const;
  long long get_int(std::string_view key) const;
  bool get_bool(std::string_view key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest text that parses back to exactly `value`.
std::string format_exact(double value);
/// printf-style fixed formatting, e.g. format_fixed(0.5, 4) == "0.5000".
std::string format_fixed(double value, int decimals);

double parse_double(std::string_view text);
long long parse_int(std::string_view text);
bool parse_bool(std::string_view text);

std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char delimiter);

/// Reads a whole file; throws IoError.
std::string read_text_file(const std::filesystem::path& path);
/// Writes a whole file; throws IoError.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace softcbm
