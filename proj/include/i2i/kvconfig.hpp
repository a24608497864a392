#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace i2i {

// Flat "key = value" text. Blank lines and lines starting with '#' are
// ignored. Every getter marks its key as known; require_all_known() then
// rejects anything a reader did not ask for.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(const std::string& text, const std::string& origin = "<string>");
  /// Throws ConfigError naming the path if the file is missing or unreadable.
  static KvConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws ConfigError listing keys no getter has read.
  void require_all_known() const;

  /// Sorted "key = value" lines.
  std::string to_string() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  const std::string* lookup(const std::string& key) const;

  std::string origin_ = "<config>";
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> known_;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace i2i
