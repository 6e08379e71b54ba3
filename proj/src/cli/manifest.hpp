#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "spikequant/config.hpp"

namespace spikequant::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

struct InputDigest {
  std::string path;
  std::string fnv1a;
};

struct RunManifest {
  std::string command;
  RunConfig config;
  std::vector<InputDigest> inputs;
  std::string tool_version{kToolVersion};
  std::string timestamp;  // UTC, ISO 8601

  void add_input(const std::filesystem::path& path);
  std::string to_json() const;
};

std::string utc_timestamp();

// Reports are compared byte for byte, so the manifest lives in its own file
// next to the report rather than inside it.
std::filesystem::path manifest_path(const std::filesystem::path& report);
void write_manifest(const RunManifest& manifest, const std::filesystem::path& report);

}  // namespace spikequant::cli
