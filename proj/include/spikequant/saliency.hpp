#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace spikequant {

// One byte per element, 0 or 1.
using Mask = std::vector<std::uint8_t>;

struct MadConfig {
  double c = 1.4826;
  double r = 3.5;

  void validate() const;
};

struct MadStats {
  double median = 0.0;
  double mad = 0.0;
  // MAD == 0: the robust score is undefined and nothing is flagged.
  bool degenerate = false;
};

// Median with the even-length convention (mean of the two central values).
double median_of(std::span<const double> x);

// mask_i = 1 iff |x_i - median| / (c * MAD) > r.
Mask mad_detect(std::span<const double> x, const MadConfig& cfg, MadStats* stats = nullptr);

struct SalientBar {
  double pos_bar = std::numeric_limits<double>::infinity();
  double neg_bar = -std::numeric_limits<double>::infinity();
  std::int64_t pos_count = 0;
  std::int64_t neg_count = 0;

  friend bool operator==(const SalientBar&, const SalientBar&) = default;
};

// mask_i = 1 iff x_i >= pos_bar or x_i <= neg_bar; sides with zero count never fire.
Mask detect_online(std::span<const double> x, const SalientBar& bar);

// Running per-module calibration state. Holds every contributing extremum so
// that finalisation is independent of the order tokens or passes arrive in.
class BarAccumulator {
 public:
  // Runs mad_detect on one token and records its positive-salient minimum
  // and negative-salient maximum. Returns true if MAD was degenerate.
  bool add_token(std::span<const double> x, const MadConfig& cfg);
  void add_extrema(double pos_min, double neg_max);
  void merge(const BarAccumulator& other);
  SalientBar finalize() const;

  std::int64_t degenerate_tokens() const { return degenerate_; }

 private:
  std::vector<double> pos_minima_;
  std::vector<double> neg_maxima_;
  std::int64_t degenerate_ = 0;
};

using ModuleKey = std::pair<std::string, std::string>;  // (layer id, module id)

class SalientProfile {
 public:
  void set(const std::string& layer, const std::string& module, const SalientBar& bar);
  // Throws MissingProfile when the module was never calibrated.
  const SalientBar& at(const std::string& layer, const std::string& module) const;
  bool contains(const std::string& layer, const std::string& module) const;
  const std::map<ModuleKey, SalientBar>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Lines of `layer.module.field = value` in the shared config grammar.
  std::string to_text() const;
  static SalientProfile from_text(std::string_view text, const std::string& source = "<profile>");

  friend bool operator==(const SalientProfile&, const SalientProfile&) = default;

 private:
  std::map<ModuleKey, SalientBar> entries_;
};

SalientProfile load_profile(const std::filesystem::path& path);
void save_profile(const SalientProfile& profile, const std::filesystem::path& path);

// One forward pass of one module: the token vectors it saw along H.
struct CalibrationSample {
  std::string layer;
  std::string module;
  std::vector<std::vector<double>> tokens;
};

struct CalibrationSummary {
  std::int64_t samples_used = 0;
  std::int64_t samples_skipped = 0;
  std::int64_t degenerate_tokens = 0;
};

// Uses at most `passes` samples per module, in stream order.
SalientProfile calibrate(std::span<const CalibrationSample> stream, const MadConfig& cfg, int passes,
                         CalibrationSummary* summary = nullptr);

}  // namespace spikequant
