#include "spikequant/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "spikequant/engine.hpp"
#include "spikequant/error.hpp"
#include "spikequant/quant.hpp"
#include "spikequant/spike.hpp"

namespace spikequant {
namespace {

// Distribution transforms written out so that streams are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix(seed)) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    spare_ = radius * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return radius * std::cos(2.0 * M_PI * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

constexpr double kOutlierRate = 0.025;
constexpr double kOutlierMin = 8.0;
constexpr double kOutlierMax = 32.0;

void apply_activation(DenseTensor& y, Activation act) {
  if (act == Activation::ReLU) {
    for (auto& v : y.values) v = std::max(v, 0.0);
  }
}

DenseTensor linear(const DenseTensor& x, const DenseTensor& w, Activation act) {
  const std::size_t in = w.shape[0];
  const std::size_t out = w.shape[1];
  const std::size_t tokens = x.values.size() / in;
  DenseTensor y;
  y.shape.assign(x.shape.begin(), x.shape.end() - 1);
  y.shape.push_back(out);
  y.values.assign(tokens * out, 0.0);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t i = 0; i < in; ++i) {
      const double a = x.values[t * in + i];
      const double* row = &w.values[i * out];
      double* dst = &y.values[t * out];
      for (std::size_t j = 0; j < out; ++j) dst[j] += a * row[j];
    }
  }
  apply_activation(y, act);
  return y;
}

std::string layer_id(std::size_t k) { return "L" + std::to_string(k); }

// Channels with the largest |mean| over the calibration activations.
Mask fixed_channel_mask(const DenseTensor& calib, std::size_t k) {
  const std::size_t h = calib.shape.back();
  const std::size_t tokens = calib.values.size() / h;
  std::vector<double> mean(h, 0.0);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t i = 0; i < h; ++i) mean[i] += calib.values[t * h + i];
  }
  std::vector<std::size_t> order(h);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(mean[a]) > std::abs(mean[b]); });
  Mask mask(h, 0);
  for (std::size_t n = 0; n < std::min(k, h); ++n) mask[order[n]] = 1;
  return mask;
}

}  // namespace

ToyNet generate_toynet(std::uint64_t seed, const std::vector<std::size_t>& dims, double tail, Activation activation) {
  if (dims.size() < 2) throw Error(ErrorKind::InvalidArgument, "dims", "need at least an input and an output size");
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] == 0) throw Error(ErrorKind::ShapeMismatch, "dims", "layer sizes must be >= 1");
  }
  if (!(tail >= 0) || !std::isfinite(tail)) throw Error(ErrorKind::InvalidArgument, "tail", "tail must be >= 0");
  ToyNet net;
  net.dims = dims;
  net.activation = activation;
  net.tail = tail;
  net.seed = seed;
  Rng rng(seed);
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseTensor w;
    w.shape = {dims[k], dims[k + 1]};
    w.values.resize(dims[k] * dims[k + 1]);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dims[k]));
    for (auto& v : w.values) v = sd * rng.normal();
    net.layers.push_back(std::move(w));
  }
  return net;
}

DenseTensor sample_inputs(const ToyNet& net, std::uint64_t seed, std::size_t batch, std::size_t seq) {
  const std::size_t h = net.dims.front();
  DenseTensor x;
  x.shape = {batch, seq, h};
  x.values.resize(batch * seq * h);
  Rng rng(seed ^ (net.seed * 0x100000001B3ull));
  const double rate = std::min(1.0, kOutlierRate * net.tail);
  for (auto& v : x.values) {
    v = rng.normal();
    if (rate > 0 && rng.uniform() < rate) {
      const double magnitude = rng.uniform(kOutlierMin, kOutlierMax);
      v = rng.uniform() < 0.5 ? -magnitude : magnitude;
    }
  }
  return x;
}

std::vector<DenseTensor> float_forward(const ToyNet& net, const DenseTensor& inputs) {
  if (inputs.shape.back() != net.dims.front()) {
    throw Error(ErrorKind::ShapeMismatch, "inputs",
                "input H=" + std::to_string(inputs.shape.back()) + " but net expects " + std::to_string(net.dims.front()));
  }
  std::vector<DenseTensor> outs;
  const DenseTensor* x = &inputs;
  for (const auto& w : net.layers) {
    outs.push_back(linear(*x, w, net.activation));
    x = &outs.back();
  }
  return outs;
}

std::string Method::label() const {
  switch (kind) {
    case MethodKind::Float: return "float";
    case MethodKind::UniformW4A4: return "uniform_w4a4";
    case MethodKind::FixedChannels: return "fixed_channels_" + std::to_string(fixed_channels);
    case MethodKind::SpikeQuant: return "spikequant";
  }
  return "?";
}

std::string ErrorReport::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["group_size"] = group_size;
  j["mad_r"] = mad_r;
  j["mse"] = mse;
  j["max_abs"] = max_abs;
  j["salient_count"] = salient_count;
  j["salient_ratio"] = salient_ratio;
  j["max_engine_deviation"] = max_engine_deviation;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : layers) {
    j["layers"].push_back({{"mse", l.mse},
                           {"max_abs", l.max_abs},
                           {"salient_count", l.salient_count},
                           {"salient_ratio", l.salient_ratio},
                           {"max_engine_deviation", l.max_engine_deviation},
                           {"spike_rate_low", l.spike_rate_low},
                           {"spike_rate_high", l.spike_rate_high}});
  }
  return j.dump(2) + "\n";
}

std::string ErrorReport::csv_header() {
  return "method,seed,group_size,mad_r,mse,max_abs,salient_count,salient_ratio,max_engine_deviation,layer_mse";
}

std::string ErrorReport::to_csv_row(std::uint64_t seed) const {
  std::ostringstream os;
  os << method << ',' << seed << ',' << group_size << ',' << format_real(mad_r) << ',' << format_real(mse) << ','
     << format_real(max_abs) << ',' << salient_count << ',' << format_real(salient_ratio) << ','
     << format_real(max_engine_deviation) << ',';
  for (std::size_t k = 0; k < layers.size(); ++k) os << (k ? ";" : "") << format_real(layers[k].mse);
  return os.str();
}

DenseTensor default_calibration(const ToyNet& net, const RunConfig& cfg) {
  return sample_inputs(net, cfg.seed + 0x5EED, static_cast<std::size_t>(cfg.calib_passes), 4);
}

SalientProfile calibrate_toynet(const ToyNet& net, const DenseTensor& calibration, const RunConfig& cfg) {
  const auto outs = float_forward(net, calibration);
  std::vector<CalibrationSample> stream;
  const std::size_t passes = calibration.shape.front();
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const DenseTensor& x = k == 0 ? calibration : outs[k - 1];
    const std::size_t h = x.shape.back();
    const std::size_t per_pass = x.values.size() / (passes * h);
    for (std::size_t p = 0; p < passes; ++p) {
      CalibrationSample s{layer_id(k), "linear", {}};
      for (std::size_t t = 0; t < per_pass; ++t) {
        const auto* first = &x.values[(p * per_pass + t) * h];
        s.tokens.emplace_back(first, first + h);
      }
      stream.push_back(std::move(s));
    }
  }
  return calibrate(stream, MadConfig{cfg.mad_c, cfg.mad_r}, cfg.calib_passes);
}

ErrorReport run_pipeline(const ToyNet& net, const DenseTensor& inputs, const RunConfig& cfg, const Method& method,
                         const DenseTensor* calibration) {
  cfg.validate();
  for (std::size_t k = 0; k + 1 < net.dims.size(); ++k) cfg.validate_hidden(net.dims[k]);

  const auto reference = float_forward(net, inputs);
  ErrorReport report;
  report.method = method.label();
  report.group_size = cfg.group_size;
  report.mad_r = cfg.mad_r;

  std::vector<DenseTensor> outputs;
  std::size_t total_positions = 0;
  if (method.kind == MethodKind::Float) {
    outputs = float_forward(net, inputs);
    report.layers.resize(net.layers.size());
  } else {
    DenseTensor calib_owned;
    if (!calibration) {
      calib_owned = default_calibration(net, cfg);
      calibration = &calib_owned;
    }
    SalientProfile profile;
    std::vector<DenseTensor> calib_acts;
    if (method.kind == MethodKind::SpikeQuant) profile = calibrate_toynet(net, *calibration, cfg);
    if (method.kind == MethodKind::FixedChannels) calib_acts = float_forward(net, *calibration);

    const auto gs = static_cast<std::size_t>(cfg.group_size);
    DenseTensor x = inputs;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      const auto& w = net.layers[k];
      auto qw = quantize_grouped(w.values, w.shape, cfg.bits_normal, gs, GroupAxis::InputDim);
      const auto plan = plan_weights(qw);

      const std::size_t h = x.shape.back();
      const std::size_t tokens = x.values.size() / h;
      Mask fixed;
      if (method.kind == MethodKind::FixedChannels) {
        fixed = fixed_channel_mask(k == 0 ? *calibration : calib_acts[k - 1], method.fixed_channels);
      }
      std::vector<MixedQuantActivations> quantized;
      quantized.reserve(tokens);
      LayerError le;
      for (std::size_t t = 0; t < tokens; ++t) {
        std::span<const double> token(&x.values[t * h], h);
        Mask mask;
        switch (method.kind) {
          case MethodKind::SpikeQuant: mask = detect_online(token, profile.at(layer_id(k), "linear")); break;
          case MethodKind::FixedChannels: mask = fixed; break;
          default: mask.assign(h, 0); break;
        }
        quantized.push_back(quantize_mixed(token, mask, cfg));
        le.salient_count += quantized.back().salient_count();
      }
      const Shape leading(x.shape.begin(), x.shape.end() - 1);
      const auto batch = encode_batch(quantized, x.shape, cfg);
      DenseTensor y = forward(batch, plan);
      const DenseTensor oracle = oracle_dequant_matmul(quantized, leading, qw);
      le.max_engine_deviation = max_relative_deviation(y.values, oracle.values);
      const auto rates = spike_rate(batch);
      le.spike_rate_low = rates.low;
      le.spike_rate_high = rates.high;
      le.salient_ratio = static_cast<double>(le.salient_count) / static_cast<double>(tokens * h);
      report.salient_count += le.salient_count;
      total_positions += tokens * h;
      report.max_engine_deviation = std::max(report.max_engine_deviation, le.max_engine_deviation);
      apply_activation(y, net.activation);
      report.layers.push_back(le);
      outputs.push_back(y);
      x = std::move(y);
    }
  }
  if (total_positions) report.salient_ratio = static_cast<double>(report.salient_count) / total_positions;

  for (std::size_t k = 0; k < outputs.size(); ++k) {
    double sq = 0.0, worst = 0.0;
    for (std::size_t e = 0; e < outputs[k].values.size(); ++e) {
      const double d = outputs[k].values[e] - reference[k].values[e];
      sq += d * d;
      worst = std::max(worst, std::abs(d));
    }
    report.layers[k].mse = sq / static_cast<double>(outputs[k].values.size());
    report.layers[k].max_abs = worst;
  }
  const auto& final_out = outputs.back();
  const auto& final_ref = reference.back();
  const std::size_t out_dim = final_out.shape.back();
  const std::size_t tokens = final_out.values.size() / out_dim;
  report.mse = report.layers.back().mse;
  report.max_abs = report.layers.back().max_abs;
  report.token_mse.resize(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    double sq = 0.0;
    for (std::size_t j = 0; j < out_dim; ++j) {
      const double d = final_out.values[t * out_dim + j] - final_ref.values[t * out_dim + j];
      sq += d * d;
    }
    report.token_mse[t] = sq / static_cast<double>(out_dim);
  }
  return report;
}

}  // namespace spikequant
