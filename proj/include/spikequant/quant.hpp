// quant.hpp - scalar and group-wise asymmetric/symmetric quantization.
//
//   code  = clamp(round(x / scale) + zero_point, q_min, q_max)
//   x_hat = scale * (code - zero_point)
//
// round() is half-away-from-zero everywhere. The clipping range is the
// observed [min, max] of the values, widened to contain 0 so that real zero is
// exactly representable by an in-range integer zero point.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "spikequant/config.hpp"
#include "spikequant/tensorio.hpp"

namespace spikequant {

enum class QuantMode { Asymmetric, Symmetric };

struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  int bits = 4;
  std::int32_t q_min = 0;
  std::int32_t q_max = 15;
  QuantMode mode = QuantMode::Asymmetric;

  // Throws InvalidArgument when an invariant (scale > 0, range, zero point) fails.
  void validate() const;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

// Integer range for a bitwidth: [0, 2^b - 1] asymmetric, [-(2^(b-1)-1), 2^(b-1)-1] symmetric.
std::pair<std::int32_t, std::int32_t> code_range(int bits, QuantMode mode);

// Params for a constant/all-masked group: scale 1, zero point clamp(round(-value)).
QuantParams degenerate_params(double value, int bits, QuantMode mode);

QuantParams compute_params(std::span<const double> values, int bits, QuantMode mode);

std::int32_t quantize_value(double v, const QuantParams& p);
double dequantize_value(std::int32_t code, const QuantParams& p);

std::vector<std::int32_t> quantize(std::span<const double> values, const QuantParams& p);
std::vector<double> dequantize(std::span<const std::int32_t> codes, const QuantParams& p);

enum class GroupAxis {
  Hidden,    // last dimension of an [..., H] tensor; one params set per (row, group)
  InputDim,  // first dimension of an [In, Out] matrix; one params set per (group, column)
};

// Codes for a tensor quantized in runs of group_size consecutive elements
// along one axis. Params are indexed by group_slot().
struct GroupQuantTensor {
  Shape shape;
  GroupAxis axis = GroupAxis::Hidden;
  std::size_t group_size = 1;
  std::vector<std::int32_t> codes;
  std::vector<QuantParams> groups;
  // Slots of groups whose every element was excluded.
  std::vector<std::size_t> fully_masked_groups;

  std::size_t axis_length() const;
  std::size_t groups_per_line() const { return axis_length() / group_size; }
  std::size_t group_slot(std::size_t flat_index) const;
  const QuantParams& params_at(std::size_t flat_index) const { return groups[group_slot(flat_index)]; }
};

GroupQuantTensor quantize_grouped(std::span<const double> values, const Shape& shape, int bits,
                                  std::size_t group_size, GroupAxis axis,
                                  std::span<const std::uint8_t> exclude_mask = {},
                                  QuantMode mode = QuantMode::Asymmetric);

std::vector<double> dequantize_grouped(const GroupQuantTensor& q);

// One token of activations: low-bit group-wise codes for normal positions
// plus high-bit codes for salient positions, which share one per-token params.
struct MixedQuantActivations {
  GroupQuantTensor normal;
  std::vector<std::pair<std::size_t, std::int32_t>> salient_codes;  // (hidden index, code), ascending
  QuantParams salient_params;
  std::vector<std::uint8_t> mask;

  std::size_t hidden() const { return mask.size(); }
  std::size_t salient_count() const { return salient_codes.size(); }
};

MixedQuantActivations quantize_mixed(std::span<const double> token, std::span<const std::uint8_t> mask,
                                     const RunConfig& cfg);

std::vector<double> dequantize_mixed(const MixedQuantActivations& m);

}  // namespace spikequant
