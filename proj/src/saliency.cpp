#include "spikequant/saliency.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "spikequant/config.hpp"
#include "spikequant/error.hpp"
#include "spikequant/tensorio.hpp"

namespace spikequant {
namespace {

void check_id(const std::string& id, const char* what) {
  const bool ok = !id.empty() && std::all_of(id.begin(), id.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-';
  });
  if (!ok) throw Error(ErrorKind::InvalidArgument, what, "id '" + id + "' must be [A-Za-z0-9_-]+");
}

// Sum after sorting, so the result does not depend on insertion order.
double ordered_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

void MadConfig::validate() const {
  if (!(c > 0) || !std::isfinite(c)) throw Error(ErrorKind::InvalidArgument, "mad_c", "must be > 0");
  if (!(r > 0) || !std::isfinite(r)) throw Error(ErrorKind::InvalidArgument, "mad_r", "must be > 0");
}

double median_of(std::span<const double> x) {
  if (x.empty()) throw Error(ErrorKind::InvalidArgument, "x", "median of an empty sequence");
  std::vector<double> v(x.begin(), x.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lower + upper) / 2.0;
}

Mask mad_detect(std::span<const double> x, const MadConfig& cfg, MadStats* stats) {
  if (x.empty()) throw Error(ErrorKind::InvalidArgument, "x", "mad_detect needs at least one value");
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "x", "NaN or Inf in activations");
  }
  MadStats s;
  s.median = median_of(x);
  std::vector<double> dev(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) dev[i] = std::abs(x[i] - s.median);
  s.mad = median_of(dev);
  s.degenerate = s.mad == 0.0;
  if (stats) *stats = s;

  Mask mask(x.size(), 0);
  if (s.degenerate) return mask;
  const double denom = cfg.c * s.mad;
  for (std::size_t i = 0; i < x.size(); ++i) mask[i] = dev[i] / denom > cfg.r ? 1 : 0;
  return mask;
}

Mask detect_online(std::span<const double> x, const SalientBar& bar) {
  Mask mask(x.size(), 0);
  const bool pos = bar.pos_count > 0;
  const bool neg = bar.neg_count > 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = ((pos && x[i] >= bar.pos_bar) || (neg && x[i] <= bar.neg_bar)) ? 1 : 0;
  }
  return mask;
}

bool BarAccumulator::add_token(std::span<const double> x, const MadConfig& cfg) {
  MadStats stats;
  const Mask mask = mad_detect(x, cfg, &stats);
  if (stats.degenerate) {
    ++degenerate_;
    return true;
  }
  double pos_min = std::numeric_limits<double>::infinity();
  double neg_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask[i]) continue;
    if (x[i] > 0) pos_min = std::min(pos_min, x[i]);
    if (x[i] < 0) neg_max = std::max(neg_max, x[i]);
  }
  add_extrema(pos_min, neg_max);
  return false;
}

void BarAccumulator::add_extrema(double pos_min, double neg_max) {
  if (std::isfinite(pos_min)) pos_minima_.push_back(pos_min);
  if (std::isfinite(neg_max)) neg_maxima_.push_back(neg_max);
}

void BarAccumulator::merge(const BarAccumulator& other) {
  pos_minima_.insert(pos_minima_.end(), other.pos_minima_.begin(), other.pos_minima_.end());
  neg_maxima_.insert(neg_maxima_.end(), other.neg_maxima_.begin(), other.neg_maxima_.end());
  degenerate_ += other.degenerate_;
}

SalientBar BarAccumulator::finalize() const {
  SalientBar bar;
  bar.pos_count = static_cast<std::int64_t>(pos_minima_.size());
  bar.neg_count = static_cast<std::int64_t>(neg_maxima_.size());
  if (bar.pos_count > 0) bar.pos_bar = ordered_mean(pos_minima_);
  if (bar.neg_count > 0) bar.neg_bar = ordered_mean(neg_maxima_);
  return bar;
}

void SalientProfile::set(const std::string& layer, const std::string& module, const SalientBar& bar) {
  check_id(layer, "layer");
  check_id(module, "module");
  entries_[{layer, module}] = bar;
}

const SalientBar& SalientProfile::at(const std::string& layer, const std::string& module) const {
  auto it = entries_.find({layer, module});
  if (it == entries_.end()) {
    throw Error(ErrorKind::MissingProfile, layer + "." + module, "module has no calibrated salient bar");
  }
  return it->second;
}

bool SalientProfile::contains(const std::string& layer, const std::string& module) const {
  return entries_.count({layer, module}) != 0;
}

std::string SalientProfile::to_text() const {
  std::ostringstream os;
  for (const auto& [key, bar] : entries_) {
    const std::string prefix = key.first + "." + key.second + ".";
    if (bar.pos_count > 0) os << prefix << "pos_bar = " << format_real(bar.pos_bar) << '\n';
    os << prefix << "pos_count = " << bar.pos_count << '\n';
    if (bar.neg_count > 0) os << prefix << "neg_bar = " << format_real(bar.neg_bar) << '\n';
    os << prefix << "neg_count = " << bar.neg_count << '\n';
  }
  return os.str();
}

SalientProfile SalientProfile::from_text(std::string_view text, const std::string& source) {
  struct Partial {
    SalientBar bar;
    bool has_pos = false, has_neg = false, has_pos_count = false, has_neg_count = false;
    int line = 0;
  };
  std::map<ModuleKey, Partial> partial;
  for (const auto& kv : parse_key_values(text, source)) {
    const auto first = kv.key.find('.');
    const auto last = kv.key.rfind('.');
    if (first == std::string::npos || first == last) {
      throw ParseError(source, kv.line, "expected 'layer.module.field', got '" + kv.key + "'");
    }
    ModuleKey key{kv.key.substr(0, first), kv.key.substr(first + 1, last - first - 1)};
    const std::string field = kv.key.substr(last + 1);
    auto& p = partial[key];
    p.line = kv.line;
    if (field == "pos_bar") {
      p.bar.pos_bar = parse_real(kv, source);
      p.has_pos = true;
    } else if (field == "neg_bar") {
      p.bar.neg_bar = parse_real(kv, source);
      p.has_neg = true;
    } else if (field == "pos_count" || field == "neg_count") {
      const auto n = parse_int(kv, source);
      if (n < 0) throw ParseError(source, kv.line, "count must be non-negative");
      (field == "pos_count" ? p.bar.pos_count : p.bar.neg_count) = n;
      (field == "pos_count" ? p.has_pos_count : p.has_neg_count) = true;
    } else {
      throw ParseError(source, kv.line, "unknown profile field '" + field + "'");
    }
  }
  SalientProfile profile;
  for (auto& [key, p] : partial) {
    const std::string name = key.first + "." + key.second;
    if (!p.has_pos_count || !p.has_neg_count) throw ParseError(source, p.line, name + ": missing pos_count/neg_count");
    if (p.bar.pos_count > 0 && !p.has_pos) throw ParseError(source, p.line, name + ": pos_count > 0 without pos_bar");
    if (p.bar.neg_count > 0 && !p.has_neg) throw ParseError(source, p.line, name + ": neg_count > 0 without neg_bar");
    if (p.bar.pos_count == 0) p.bar.pos_bar = std::numeric_limits<double>::infinity();
    if (p.bar.neg_count == 0) p.bar.neg_bar = -std::numeric_limits<double>::infinity();
    if (p.bar.pos_count > 0 && !(p.bar.pos_bar > 0)) throw ParseError(source, p.line, name + ": pos_bar must be > 0");
    if (p.bar.neg_count > 0 && !(p.bar.neg_bar < 0)) throw ParseError(source, p.line, name + ": neg_bar must be < 0");
    profile.set(key.first, key.second, p.bar);
  }
  return profile;
}

SalientProfile load_profile(const std::filesystem::path& path) {
  return SalientProfile::from_text(read_text_file(path), path.string());
}

void save_profile(const SalientProfile& profile, const std::filesystem::path& path) {
  write_text_file(path, profile.to_text());
}

SalientProfile calibrate(std::span<const CalibrationSample> stream, const MadConfig& cfg, int passes,
                         CalibrationSummary* summary) {
  cfg.validate();
  if (passes < 1) throw Error(ErrorKind::InvalidArgument, "passes", "must be >= 1");
  std::map<ModuleKey, BarAccumulator> acc;
  std::map<ModuleKey, int> used;
  CalibrationSummary s;
  for (const auto& sample : stream) {
    ModuleKey key{sample.layer, sample.module};
    if (used[key] >= passes) {
      ++s.samples_skipped;
      continue;
    }
    ++used[key];
    ++s.samples_used;
    auto& a = acc[key];
    for (const auto& token : sample.tokens) a.add_token(token, cfg);
  }
  SalientProfile profile;
  for (const auto& [key, a] : acc) {
    s.degenerate_tokens += a.degenerate_tokens();
    profile.set(key.first, key.second, a.finalize());
  }
  if (summary) *summary = s;
  return profile;
}

}  // namespace spikequant
