#include "spikequant/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

#include "spikequant/error.hpp"
#include "spikequant/tensorio.hpp"

namespace spikequant {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_key(std::string_view key) {
  return !key.empty() && std::all_of(key.begin(), key.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.' || ch == '-';
  });
}

constexpr const char* kKnownTables[] = {"default"};

void assign(RunConfig& cfg, const KeyValue& kv, const std::string& source) {
  auto as_int = [&] {
    auto v = parse_int(kv, source);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      throw ParseError(source, kv.line, "value out of range for " + kv.key);
    }
    return static_cast<int>(v);
  };
  if (kv.key == "bits_normal") {
    cfg.bits_normal = as_int();
  } else if (kv.key == "bits_salient") {
    cfg.bits_salient = as_int();
  } else if (kv.key == "group_size") {
    cfg.group_size = as_int();
  } else if (kv.key == "mad_c") {
    cfg.mad_c = parse_real(kv, source);
  } else if (kv.key == "mad_r") {
    cfg.mad_r = parse_real(kv, source);
  } else if (kv.key == "calib_passes") {
    cfg.calib_passes = as_int();
  } else if (kv.key == "energy_table") {
    cfg.energy_table = kv.value;
  } else if (kv.key == "seed") {
    auto v = parse_int(kv, source);
    if (v < 0) throw ParseError(source, kv.line, "seed must be non-negative");
    cfg.seed = static_cast<std::uint64_t>(v);
  } else {
    throw ParseError(source, kv.line, "unknown key '" + kv.key + "'");
  }
}

constexpr const char* kKeys[] = {"bits_normal", "bits_salient", "group_size", "mad_c",
                                 "mad_r",       "calib_passes", "energy_table", "seed"};

}  // namespace

std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& source) {
  std::vector<KeyValue> out;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected 'key = value'");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ParseError(source, line_no, "malformed key '" + std::string(key) + "'");
    if (value.empty()) throw ParseError(source, line_no, "missing value for '" + std::string(key) + "'");
    if (!seen.emplace(key).second) {
      throw ParseError(source, line_no, "duplicate key '" + std::string(key) + "'");
    }
    out.push_back({std::string(key), std::string(value), line_no});
    if (end == text.size()) break;
  }
  return out;
}

std::int64_t parse_int(const KeyValue& kv, const std::string& source) {
  std::int64_t v = 0;
  const char* first = kv.value.data();
  const char* last = first + kv.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParseError(source, kv.line, "expected integer for '" + kv.key + "', got '" + kv.value + "'");
  }
  return v;
}

double parse_real(const KeyValue& kv, const std::string& source) {
  double v = 0;
  const char* first = kv.value.data();
  const char* last = first + kv.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw ParseError(source, kv.line, "expected finite real for '" + kv.key + "', got '" + kv.value + "'");
  }
  return v;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void RunConfig::validate() const {
  if (bits_normal < 1 || bits_normal > 8) {
    throw Error(ErrorKind::InvalidConfig, "bits_normal", "must be in [1, 8]");
  }
  if (bits_salient < bits_normal || bits_salient > 8) {
    throw Error(ErrorKind::InvalidConfig, "bits_salient", "must satisfy bits_normal <= bits_salient <= 8");
  }
  if (group_size < 1) throw Error(ErrorKind::InvalidConfig, "group_size", "must be >= 1");
  if (!(mad_c > 0)) throw Error(ErrorKind::InvalidConfig, "mad_c", "must be > 0");
  if (!(mad_r > 0)) throw Error(ErrorKind::InvalidConfig, "mad_r", "must be > 0");
  if (calib_passes < 1) throw Error(ErrorKind::InvalidConfig, "calib_passes", "must be >= 1");
  if (std::find(std::begin(kKnownTables), std::end(kKnownTables), energy_table) == std::end(kKnownTables)) {
    throw Error(ErrorKind::InvalidConfig, "energy_table", "unknown table '" + energy_table + "'");
  }
}

void RunConfig::validate_hidden(std::size_t hidden) const {
  if (hidden % static_cast<std::size_t>(group_size) != 0) {
    throw Error(ErrorKind::Divisibility, "group_size",
                "group_size " + std::to_string(group_size) + " does not divide H=" + std::to_string(hidden));
  }
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig cfg;
  for (const auto& kv : parse_key_values(text, source)) assign(cfg, kv, source);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path), path.string());
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << "bits_normal = " << cfg.bits_normal << '\n'
     << "bits_salient = " << cfg.bits_salient << '\n'
     << "group_size = " << cfg.group_size << '\n'
     << "mad_c = " << format_real(cfg.mad_c) << '\n'
     << "mad_r = " << format_real(cfg.mad_r) << '\n'
     << "calib_passes = " << cfg.calib_passes << '\n'
     << "energy_table = " << cfg.energy_table << '\n'
     << "seed = " << cfg.seed << '\n';
  return os.str();
}

void apply_env_overrides(RunConfig& cfg, const EnvLookup& lookup) {
  for (const char* key : kKeys) {
    std::string name(kEnvPrefix);
    for (const char* p = key; *p; ++p) name.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(*p))));
    if (auto value = lookup(name)) {
      KeyValue kv{key, std::string(trim(*value)), 1};
      assign(cfg, kv, "env:" + name);
    }
  }
  cfg.validate();
}

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

}  // namespace spikequant
