// spike.hpp - time-to-first-spike coding of quantized activations.
//
// A code qa in [0, 2^b - 1] becomes at most one spike in a window of
// T = 2^b - 1 steps, fired at t = T - qa: larger codes fire earlier. qa = 0
// would fire at t = T where its weight (T - t) is zero, so it emits nothing.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "spikequant/config.hpp"
#include "spikequant/quant.hpp"
#include "spikequant/saliency.hpp"
#include "spikequant/tensorio.hpp"

namespace spikequant {

using SpikeTime = std::uint8_t;
inline constexpr SpikeTime kNoSpike = 0xFF;

constexpr int window_for_bits(int bits) { return (1 << bits) - 1; }

struct SpikeTrain {
  int window = 0;
  std::optional<int> first_spike_time;

  friend bool operator==(const SpikeTrain&, const SpikeTrain&) = default;
};

SpikeTrain encode(std::int32_t qa, int bits);
std::int32_t decode(const SpikeTrain& s);

// Packed single-byte forms used by batches and the engine.
SpikeTime encode_time(std::int32_t qa, int window);
std::int32_t decode_time(SpikeTime t, int window);

// Activation quantization params of one token, needed to read its spikes back
// as real values (and by the engine to set firing thresholds).
struct TokenScales {
  std::vector<QuantParams> normal_groups;
  QuantParams salient;
};

struct MixedSpikeBatch {
  Shape shape;  // [..., H]; every leading index is one token
  int bits_normal = 4;
  int bits_salient = 5;
  std::size_t group_size = 1;
  // One entry per position. kNoSpike at salient positions and at zero codes.
  std::vector<SpikeTime> normal_times;
  // One entry per salient position, in flat position order.
  std::vector<SpikeTime> salient_times;
  Mask mask;
  std::vector<TokenScales> token_scales;

  int window_low() const { return window_for_bits(bits_normal); }
  int window_high() const { return window_for_bits(bits_salient); }
  std::size_t hidden() const { return shape.back(); }
  std::size_t tokens() const { return hidden() ? normal_times.size() / hidden() : 0; }
  // Index into salient_times of each token's first salient position; size tokens() + 1.
  std::vector<std::size_t> salient_offsets() const;
  std::size_t spike_count() const;
};

MixedSpikeBatch encode_batch(std::span<const MixedQuantActivations> tokens, const Shape& shape,
                             const RunConfig& cfg);

// Inverse of encode_batch: recovers the per-token codes exactly.
std::vector<MixedQuantActivations> decode_batch(const MixedSpikeBatch& batch);

struct SpikeRates {
  double low = 0.0;
  double high = 0.0;
};

SpikeRates spike_rate(const MixedSpikeBatch& batch);

// Three tensors (<prefix>.normal.spkq, <prefix>.salient.spkq, <prefix>.mask.spkq)
// plus a <prefix>.spikes.cfg sidecar with windows and per-token scales.
void save_spike_batch(const MixedSpikeBatch& batch, const std::filesystem::path& prefix);
MixedSpikeBatch load_spike_batch(const std::filesystem::path& prefix);

}  // namespace spikequant
