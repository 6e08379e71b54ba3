// toymodel.hpp - a small float network for exercising the full
// calibrate -> detect -> quantize -> encode -> spike-forward pipeline and
// measuring its error against the float reference.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spikequant/config.hpp"
#include "spikequant/saliency.hpp"
#include "spikequant/tensorio.hpp"

namespace spikequant {

enum class Activation { Identity, ReLU };

struct ToyNet {
  std::vector<std::size_t> dims;     // layer k maps dims[k] -> dims[k + 1]
  std::vector<DenseTensor> layers;   // [In, Out] weights
  Activation activation = Activation::Identity;
  // Controls how often and how strongly input tokens carry outliers:
  // 0 gives plain Gaussian tokens, 1 gives about 2.5% outliers per token.
  double tail = 1.0;
  std::uint64_t seed = 0;
};

ToyNet generate_toynet(std::uint64_t seed, const std::vector<std::size_t>& dims, double tail = 1.0,
                       Activation activation = Activation::Identity);

// [batch, seq, dims[0]] tokens: N(0, 1) plus outliers at positions drawn
// independently for every token.
DenseTensor sample_inputs(const ToyNet& net, std::uint64_t seed, std::size_t batch, std::size_t seq);

// Float forward; returns the output of every layer (after the activation).
std::vector<DenseTensor> float_forward(const ToyNet& net, const DenseTensor& inputs);

enum class MethodKind { Float, UniformW4A4, FixedChannels, SpikeQuant };

struct Method {
  MethodKind kind = MethodKind::Float;
  std::size_t fixed_channels = 0;  // FixedChannels only

  std::string label() const;
};

struct LayerError {
  double mse = 0.0;
  double max_abs = 0.0;
  std::size_t salient_count = 0;
  double salient_ratio = 0.0;          // salient positions / all positions at this layer's input
  double max_engine_deviation = 0.0;   // spiking engine vs dequantized oracle
  double spike_rate_low = 0.0;
  double spike_rate_high = 0.0;
};

struct ErrorReport {
  std::string method;
  int group_size = 0;
  double mad_r = 0.0;
  std::vector<LayerError> layers;
  double mse = 0.0;                 // end-to-end, against the float output
  double max_abs = 0.0;
  std::vector<double> token_mse;    // end-to-end, per token
  std::size_t salient_count = 0;
  double salient_ratio = 0.0;
  double max_engine_deviation = 0.0;

  std::string to_json() const;
  static std::string csv_header();
  std::string to_csv_row(std::uint64_t seed) const;
};

// Salient bars per layer ("L<k>", "linear") from the float-path activations
// of a calibration corpus; each batch entry counts as one pass.
SalientProfile calibrate_toynet(const ToyNet& net, const DenseTensor& calibration, const RunConfig& cfg);

// Calibration corpus used when none is supplied: calib_passes passes of 4
// tokens each, drawn with a seed derived from cfg.seed.
DenseTensor default_calibration(const ToyNet& net, const RunConfig& cfg);

ErrorReport run_pipeline(const ToyNet& net, const DenseTensor& inputs, const RunConfig& cfg, const Method& method,
                         const DenseTensor* calibration = nullptr);

}  // namespace spikequant
