#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spikequant {

// One `key = value` line of the shared text grammar.
struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

// Parses UTF-8 lines of `key = value`; `#` starts a comment, blank lines are
// ignored. Duplicate keys are a parse error.
std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& source = "<config>");

std::int64_t parse_int(const KeyValue& kv, const std::string& source);
double parse_real(const KeyValue& kv, const std::string& source);

// Shortest text that reads back to the same binary64.
std::string format_real(double v);

struct RunConfig {
  int bits_normal = 4;
  int bits_salient = 5;
  int group_size = 128;
  double mad_c = 1.4826;
  double mad_r = 3.5;
  int calib_passes = 128;
  std::string energy_table = "default";
  std::uint64_t seed = 0;

  // Throws InvalidConfig naming the field.
  void validate() const;
  // Group layout check against a concrete hidden size.
  void validate_hidden(std::size_t hidden) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline constexpr std::string_view kEnvPrefix = "SPIKEQUANT_";

RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const RunConfig& cfg);

// Applies SPIKEQUANT_<UPPERCASE_KEY> overrides for every RunConfig key.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
void apply_env_overrides(RunConfig& cfg, const EnvLookup& lookup);
std::optional<std::string> process_env(const std::string& name);

}  // namespace spikequant
