#include "spikequant/spike.hpp"

#include <map>
#include <sstream>

#include "spikequant/error.hpp"

namespace spikequant {
namespace {

void check_bits(int bits) {
  if (bits < 1 || bits > 8) throw Error(ErrorKind::InvalidArgument, "bits", "TTFS bitwidth must be in [1, 8]");
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace

SpikeTime encode_time(std::int32_t qa, int window) {
  if (qa < 0 || qa > window) {
    throw Error(ErrorKind::CodeOutOfRange, "qa",
                "code " + std::to_string(qa) + " outside [0, " + std::to_string(window) + "]");
  }
  return qa == 0 ? kNoSpike : static_cast<SpikeTime>(window - qa);
}

std::int32_t decode_time(SpikeTime t, int window) {
  return t == kNoSpike ? 0 : window - static_cast<std::int32_t>(t);
}

SpikeTrain encode(std::int32_t qa, int bits) {
  check_bits(bits);
  SpikeTrain s;
  s.window = window_for_bits(bits);
  const SpikeTime t = encode_time(qa, s.window);
  if (t != kNoSpike) s.first_spike_time = t;
  return s;
}

std::int32_t decode(const SpikeTrain& s) {
  return s.first_spike_time ? s.window - *s.first_spike_time : 0;
}

std::vector<std::size_t> MixedSpikeBatch::salient_offsets() const {
  const std::size_t h = hidden();
  std::vector<std::size_t> offsets(tokens() + 1, 0);
  for (std::size_t tok = 0; tok < tokens(); ++tok) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < h; ++i) n += mask[tok * h + i];
    offsets[tok + 1] = offsets[tok] + n;
  }
  return offsets;
}

std::size_t MixedSpikeBatch::spike_count() const {
  std::size_t n = 0;
  for (auto t : normal_times) n += t != kNoSpike;
  for (auto t : salient_times) n += t != kNoSpike;
  return n;
}

MixedSpikeBatch encode_batch(std::span<const MixedQuantActivations> tokens, const Shape& shape,
                             const RunConfig& cfg) {
  check_bits(cfg.bits_normal);
  check_bits(cfg.bits_salient);
  if (shape.empty() || element_count(shape) != tokens.size() * shape.back()) {
    throw Error(ErrorKind::ShapeMismatch, "shape",
                shape_to_string(shape) + " does not hold " + std::to_string(tokens.size()) + " tokens");
  }
  MixedSpikeBatch b;
  b.shape = shape;
  b.bits_normal = cfg.bits_normal;
  b.bits_salient = cfg.bits_salient;
  b.group_size = static_cast<std::size_t>(cfg.group_size);
  const std::size_t h = shape.back();
  b.normal_times.reserve(tokens.size() * h);
  b.mask.reserve(tokens.size() * h);
  b.token_scales.reserve(tokens.size());
  const int low = b.window_low();
  const int high = b.window_high();
  for (const auto& m : tokens) {
    if (m.hidden() != h || m.normal.codes.size() != h) {
      throw Error(ErrorKind::ShapeMismatch, "token", "token length differs from H=" + std::to_string(h));
    }
    if (m.normal.group_size != b.group_size || m.normal.groups.front().bits != cfg.bits_normal ||
        m.salient_params.bits != cfg.bits_salient) {
      throw Error(ErrorKind::InvalidArgument, "token", "token quantized with a different configuration");
    }
    auto salient = m.salient_codes.begin();
    for (std::size_t i = 0; i < h; ++i) {
      b.mask.push_back(m.mask[i]);
      if (m.mask[i]) {
        if (salient == m.salient_codes.end() || salient->first != i) {
          throw Error(ErrorKind::InvalidArgument, "salient_codes", "salient codes disagree with mask");
        }
        b.normal_times.push_back(kNoSpike);
        b.salient_times.push_back(encode_time(salient->second, high));
        ++salient;
      } else {
        b.normal_times.push_back(encode_time(m.normal.codes[i], low));
      }
    }
    if (salient != m.salient_codes.end()) {
      throw Error(ErrorKind::InvalidArgument, "salient_codes", "salient codes disagree with mask");
    }
    b.token_scales.push_back({m.normal.groups, m.salient_params});
  }
  return b;
}

std::vector<MixedQuantActivations> decode_batch(const MixedSpikeBatch& batch) {
  const std::size_t h = batch.hidden();
  std::vector<MixedQuantActivations> out(batch.tokens());
  std::size_t cursor = 0;
  for (std::size_t tok = 0; tok < out.size(); ++tok) {
    auto& m = out[tok];
    const auto& scales = batch.token_scales.at(tok);
    m.normal.shape = {h};
    m.normal.axis = GroupAxis::Hidden;
    m.normal.group_size = batch.group_size;
    m.normal.groups = scales.normal_groups;
    m.normal.codes.resize(h);
    m.salient_params = scales.salient;
    m.mask.assign(batch.mask.begin() + static_cast<std::ptrdiff_t>(tok * h),
                  batch.mask.begin() + static_cast<std::ptrdiff_t>((tok + 1) * h));
    for (std::size_t i = 0; i < h; ++i) {
      const auto& p = m.normal.groups[i / batch.group_size];
      if (m.mask[i]) {
        m.normal.codes[i] = p.zero_point;
        m.salient_codes.emplace_back(i, decode_time(batch.salient_times[cursor++], batch.window_high()));
      } else {
        m.normal.codes[i] = decode_time(batch.normal_times[tok * h + i], batch.window_low());
      }
    }
  }
  return out;
}

SpikeRates spike_rate(const MixedSpikeBatch& batch) {
  std::size_t low_pos = 0, low_spikes = 0, high_pos = 0, high_spikes = 0;
  for (std::size_t e = 0; e < batch.mask.size(); ++e) {
    if (!batch.mask[e]) {
      ++low_pos;
      low_spikes += batch.normal_times[e] != kNoSpike;
    }
  }
  for (auto t : batch.salient_times) {
    ++high_pos;
    high_spikes += t != kNoSpike;
  }
  SpikeRates r;
  if (low_pos) r.low = static_cast<double>(low_spikes) / (static_cast<double>(low_pos) * batch.window_low());
  if (high_pos) r.high = static_cast<double>(high_spikes) / (static_cast<double>(high_pos) * batch.window_high());
  return r;
}

void save_spike_batch(const MixedSpikeBatch& batch, const std::filesystem::path& prefix) {
  const std::size_t n = batch.normal_times.size();
  std::vector<std::int32_t> normal(n), salient(n, -1);
  std::size_t cursor = 0;
  for (std::size_t e = 0; e < n; ++e) {
    normal[e] = batch.normal_times[e] == kNoSpike ? -1 : batch.normal_times[e];
    if (batch.mask[e]) {
      const SpikeTime t = batch.salient_times[cursor++];
      salient[e] = t == kNoSpike ? -1 : t;
    }
  }
  write_tensor(Tensor::from_i32(batch.shape, std::move(normal)), with_suffix(prefix, ".normal.spkq"));
  write_tensor(Tensor::from_i32(batch.shape, std::move(salient)), with_suffix(prefix, ".salient.spkq"));
  write_tensor(Tensor::from_bits(batch.shape, batch.mask), with_suffix(prefix, ".mask.spkq"));

  std::ostringstream os;
  os << "bits_normal = " << batch.bits_normal << '\n'
     << "bits_salient = " << batch.bits_salient << '\n'
     << "window_low = " << batch.window_low() << '\n'
     << "window_high = " << batch.window_high() << '\n'
     << "group_size = " << batch.group_size << '\n';
  for (std::size_t tok = 0; tok < batch.token_scales.size(); ++tok) {
    const auto& s = batch.token_scales[tok];
    for (std::size_t g = 0; g < s.normal_groups.size(); ++g) {
      os << "token" << tok << ".g" << g << ".scale = " << format_real(s.normal_groups[g].scale) << '\n'
         << "token" << tok << ".g" << g << ".zero_point = " << s.normal_groups[g].zero_point << '\n';
    }
    os << "token" << tok << ".salient.scale = " << format_real(s.salient.scale) << '\n'
       << "token" << tok << ".salient.zero_point = " << s.salient.zero_point << '\n';
  }
  write_text_file(with_suffix(prefix, ".spikes.cfg"), os.str());
}

MixedSpikeBatch load_spike_batch(const std::filesystem::path& prefix) {
  const auto normal = read_tensor(with_suffix(prefix, ".normal.spkq"));
  const auto salient = read_tensor(with_suffix(prefix, ".salient.spkq"));
  const auto mask = read_tensor(with_suffix(prefix, ".mask.spkq"));
  if (normal.shape() != salient.shape() || normal.shape() != mask.shape()) {
    throw Error(ErrorKind::ShapeMismatch, prefix.string(), "spike tensors disagree on shape");
  }
  const auto sidecar_path = with_suffix(prefix, ".spikes.cfg");
  const std::string source = sidecar_path.string();
  std::map<std::string, KeyValue> kv;
  for (auto& entry : parse_key_values(read_text_file(sidecar_path), source)) kv[entry.key] = entry;
  auto get = [&](const std::string& key) -> const KeyValue& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorKind::Parse, source, "missing key '" + key + "'");
    return it->second;
  };

  MixedSpikeBatch b;
  b.shape = normal.shape();
  b.bits_normal = static_cast<int>(parse_int(get("bits_normal"), source));
  b.bits_salient = static_cast<int>(parse_int(get("bits_salient"), source));
  check_bits(b.bits_normal);
  check_bits(b.bits_salient);
  if (parse_int(get("window_low"), source) != b.window_low() ||
      parse_int(get("window_high"), source) != b.window_high()) {
    throw Error(ErrorKind::InvalidArgument, source, "windows inconsistent with bitwidths");
  }
  const auto gs = parse_int(get("group_size"), source);
  if (gs < 1 || b.hidden() % static_cast<std::size_t>(gs) != 0) {
    throw Error(ErrorKind::Divisibility, source, "group_size does not divide H");
  }
  b.group_size = static_cast<std::size_t>(gs);
  b.mask = mask.unpack_bits();
  const auto n_times = normal.i32();
  const auto s_times = salient.i32();
  auto to_time = [&](std::int32_t v, int window) -> SpikeTime {
    if (v == -1) return kNoSpike;
    if (v < 0 || v >= window) throw Error(ErrorKind::CodeOutOfRange, source, "spike time outside window");
    return static_cast<SpikeTime>(v);
  };
  for (std::size_t e = 0; e < n_times.size(); ++e) {
    if (b.mask[e]) {
      b.normal_times.push_back(kNoSpike);
      b.salient_times.push_back(to_time(s_times[e], b.window_high()));
    } else {
      b.normal_times.push_back(to_time(n_times[e], b.window_low()));
    }
  }
  const std::size_t groups = b.hidden() / b.group_size;
  auto params = [&](const std::string& stem, int bits) {
    QuantParams p = degenerate_params(0.0, bits, QuantMode::Asymmetric);
    p.scale = parse_real(get(stem + ".scale"), source);
    p.zero_point = static_cast<std::int32_t>(parse_int(get(stem + ".zero_point"), source));
    p.validate();
    return p;
  };
  for (std::size_t tok = 0; tok < b.tokens(); ++tok) {
    TokenScales s;
    const std::string t = "token" + std::to_string(tok);
    for (std::size_t g = 0; g < groups; ++g) s.normal_groups.push_back(params(t + ".g" + std::to_string(g), b.bits_normal));
    s.salient = params(t + ".salient", b.bits_salient);
    b.token_scales.push_back(std::move(s));
  }
  return b;
}

}  // namespace spikequant
