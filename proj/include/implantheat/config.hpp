#pragma once

// INI-style run configuration. Keys are addressed as "section.key"; command
// line flags of the same dotted name override file values.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "implantheat/common.hpp"
#include "implantheat/scenarios.hpp"

namespace implantheat::config {

class Config {
 public:
  static Config parse_file(const std::filesystem::path& path);
  /// `origin` names the source in error messages.
  static Config parse_string(const std::string& text, const std::string& origin = "<string>");

  /// Sets or replaces "section.key".
  void set(const std::string& dotted_key, const std::string& value);
  bool has(const std::string& dotted_key) const;
  /// Keys of one section, in file order.
  std::vector<std::string> keys(const std::string& section) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Whitespace- or comma-separated numbers.
  std::vector<double> get_numbers(const std::string& key) const;
  Vec3 get_vec3(const std::string& key, const Vec3& fallback) const;

  /// Directory of the parsed file (relative paths resolve against it).
  const std::filesystem::path& base_dir() const { return base_dir_; }
  std::filesystem::path get_path(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  std::filesystem::path base_dir_;
};

/// Splits argv-style "--section.key=value" / "--section.key value" flags into
/// overrides; anything else is returned untouched.
std::vector<std::string> apply_overrides(Config& config, const std::vector<std::string>& args);

/// Builds the scenario from a preset (key `preset`: gel, polystyrene,
/// mh_synthetic or none) refined by every section. Unknown keys are errors.
scenarios::ScenarioConfig to_scenario(const Config& config);

}  // namespace implantheat::config
