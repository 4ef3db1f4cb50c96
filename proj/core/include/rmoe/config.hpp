#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rmoe {

// Flat key=value run configuration. Every key is declared in a registry with
// a type and default; unknown keys are rejected at parse time, and validate()
// type-checks every effective value before any compute starts.
//
// Precedence, low to high: built-in defaults, config file, environment
// (RMOE_<KEY> with dots as underscores, upper case), command-line overrides.
class RunConfig {
 public:
  enum class ValueType { kString, kInt, kDouble, kBool, kU64, kChoice };

  struct KeySpec {
    std::string key;
    ValueType type;
    std::string def;
    std::vector<std::string> choices;  // kChoice only
    std::string help;
  };

  static const std::vector<KeySpec>& registry();

  RunConfig() = default;  // all defaults

  // Parses `path`; throws with file/line context on malformed lines, unknown
  // keys, or duplicates.
  static RunConfig from_file(const std::string& path);

  // Overlays RMOE_* environment variables for every registry key.
  void apply_env();
  // Overlays "key=value" strings (highest precedence); throws on bad syntax
  // or unknown keys.
  void apply_overrides(const std::vector<std::string>& overrides);

  void set(const std::string& key, const std::string& value);
  bool is_set(const std::string& key) const;  // explicitly, not by default

  // Effective (set or default) raw value.
  const std::string& get(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  // Type-checks every effective value; throws on the first violation.
  void validate() const;

  // Every key in registry order with effective values, one per line,
  // excluding "seed" and "out" (those name the run directory instead).
  std::string canonical_text() const;
  // fnv1a64 of canonical_text as 16 lowercase hex digits.
  std::string hash_hex() const;

 private:
  static const KeySpec& spec_for(const std::string& key);
  std::map<std::string, std::string> values_;
};

// "" -> nullopt, "lo:hi" with lo <= hi -> the pair; anything else throws.
std::optional<std::pair<double, double>> parse_clamp(const std::string& s);

}  // namespace rmoe
