#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmcdfsl/pipeline.hpp"

namespace mmcdfsl {

enum class KeyType { Int, UInt64, Float, Bool, String, FloatList, IntList, UInt64List };

struct ConfigKey {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string doc;
  std::optional<double> min;        // inclusive
  std::optional<double> max;        // inclusive unless max_exclusive
  bool max_exclusive = false;
  bool hashed = true;               // false for paths and stage gating
  std::vector<std::string> choices; // String keys: allowed values when non-empty
};

/// Every documented key, in documentation order.
const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_key(const std::string& name);

enum class Provenance { Default, File, Flag };
std::string_view to_string(Provenance p);

/// Flat, fully resolved key/value settings. Values are stored in canonical text form.
class RunConfig {
 public:
  /// All documented defaults.
  RunConfig();

  /// Validates type and range, then records the value. Throws ConfigError naming the key.
  void set(const std::string& key, const std::string& value, Provenance from);

  const std::string& raw(const std::string& key) const;
  Provenance provenance(const std::string& key) const;

  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::uint64_t> get_u64_list(const std::string& key) const;

  /// 16 hex digits of FNV-1a over the sorted `key=value` lines of hashed keys.
  std::string hash() const;
  /// `key = value  # provenance` lines for every key.
  std::string dump() const;

  /// Stage settings, with stage seeds derived from `seed`. Throws ConfigError on
  /// cross-key inconsistencies.
  PipelineSettings to_settings() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, Provenance> provenance_;
};

/// Parses `key = value` lines; '#' starts a comment, blank lines are ignored.
/// Throws ConfigError for malformed lines and unknown keys.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Defaults, then the file (if any), then the overrides, in that order of precedence.
/// Throws IoError when the file cannot be read.
RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// "rho_infer" <-> "rho-infer".
std::string key_to_flag(const std::string& key);
std::string flag_to_key(const std::string& flag);

}  // namespace mmcdfsl
