#pragma once

// Key-value text used by every human-readable sidecar in the toolkit
// (study.meta, cohort manifest, motion field headers, experiment configs).
//
//   # comment
//   key = value
//   [section]          -> subsequent keys are read as "section.key"
//   list = 1 2 3.5     -> whitespace-separated numeric lists
//
// Doubles are written in shortest round-trip form, so load(save(x)) == x.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "taigan/errors.hpp"

namespace taigan {

std::string format_double(double v);
std::string format_fixed(double v, int decimals);

/// Parses a full string as a double; throws ParseError(field) otherwise.
double parse_double(std::string_view text, const std::string& field);
long long parse_int(std::string_view text, const std::string& field);
std::vector<std::string> split_ws(std::string_view text);
std::string trim(std::string_view text);

class KeyValueWriter {
 public:
  void put(const std::string& key, const std::string& value);
  void put(const std::string& key, const char* value) { put(key, std::string(value)); }
  void put(const std::string& key, int value);
  void put(const std::string& key, long long value);
  void put(const std::string& key, double value);
  void put(const std::string& key, bool value);
  void put(const std::string& key, const std::vector<int>& values);
  void put(const std::string& key, const std::vector<double>& values);
  void comment(const std::string& text);
  void section(const std::string& name);

  std::string str() const;
  /// Writes via a temporary file and rename.
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> lines_;
};

class KeyValueReader {
 public:
  static KeyValueReader load(const std::filesystem::path& path);
  static KeyValueReader parse(std::string_view text, const std::string& source = "<string>");

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  /// Keys in file order.
  const std::vector<std::string>& keys() const noexcept { return order_; }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

/// Writes `content` to `path` atomically (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace taigan
