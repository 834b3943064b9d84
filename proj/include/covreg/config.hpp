#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace covreg {

// Flat view of a sectioned key-value file:
//
//   # comment
//   version = 1
//   [optimizer]
//   lr = 0.01
//
// Keys inside a section are addressed as "section.key". Lists are comma
// separated. Reads are recorded so unknown keys can be reported.
class ConfigTree {
 public:
  static ConfigTree parse(const std::string& text, const std::string& origin = "<config>");
  static ConfigTree load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  // Applies "section.key=value" (leading dashes allowed).
  void apply_override(const std::string& assignment);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::uint64_t> get_uints(const std::string& key, const std::vector<std::uint64_t>& fallback) const;
  std::optional<double> get_optional_double(const std::string& key) const;

  // Keys never read since the tree was built.
  std::vector<std::string> unused_keys() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  // Canonical text: top-level keys first, then sections in key order.
  std::string to_text() const;

 private:
  std::optional<std::string> raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace covreg
