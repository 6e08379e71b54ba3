#include "cli/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

#include <json.hpp>

#include "spikequant/tensorio.hpp"

namespace spikequant::cli {

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunManifest::add_input(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  inputs.push_back({path.string(), fnv1a_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()))});
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = config_to_text(config);
  j["seed"] = config.seed;
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& in : inputs) j["inputs"].push_back({{"path", in.path}, {"fnv1a", in.fnv1a}});
  j["tool_version"] = tool_version;
  j["timestamp"] = timestamp;
  return j.dump(2) + "\n";
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::filesystem::path manifest_path(const std::filesystem::path& report) {
  auto p = report;
  p += ".manifest.json";
  return p;
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& report) {
  write_text_file(manifest_path(report), manifest.to_json());
}

}  // namespace spikequant::cli
