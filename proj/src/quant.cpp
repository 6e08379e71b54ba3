#include "spikequant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spikequant/error.hpp"

namespace spikequant {
namespace {

void check_bits(int bits, QuantMode mode) {
  const int lo = mode == QuantMode::Symmetric ? 2 : 1;
  if (bits < lo || bits > 16) {
    throw Error(ErrorKind::InvalidArgument, "bits",
                "bitwidth " + std::to_string(bits) + " unsupported for this mode");
  }
}

std::int32_t clamp_round(double v, std::int32_t lo, std::int32_t hi) {
  return static_cast<std::int32_t>(std::clamp(std::round(v), static_cast<double>(lo), static_cast<double>(hi)));
}

}  // namespace

void QuantParams::validate() const {
  if (!(scale > 0) || !std::isfinite(scale)) {
    throw Error(ErrorKind::InvalidArgument, "scale", "scale must be positive and finite");
  }
  auto [lo, hi] = code_range(bits, mode);
  if (q_min != lo || q_max != hi) throw Error(ErrorKind::InvalidArgument, "q_min/q_max", "range inconsistent with bits");
  if (mode == QuantMode::Symmetric && zero_point != 0) {
    throw Error(ErrorKind::InvalidArgument, "zero_point", "symmetric quantization requires zero_point = 0");
  }
  if (zero_point < q_min || zero_point > q_max) {
    throw Error(ErrorKind::InvalidArgument, "zero_point", "zero_point outside [q_min, q_max]");
  }
}

std::pair<std::int32_t, std::int32_t> code_range(int bits, QuantMode mode) {
  check_bits(bits, mode);
  if (mode == QuantMode::Asymmetric) return {0, (std::int32_t{1} << bits) - 1};
  const std::int32_t hi = (std::int32_t{1} << (bits - 1)) - 1;
  return {-hi, hi};
}

QuantParams degenerate_params(double value, int bits, QuantMode mode) {
  auto [lo, hi] = code_range(bits, mode);
  QuantParams p{1.0, 0, bits, lo, hi, mode};
  if (mode == QuantMode::Asymmetric) p.zero_point = clamp_round(-value, lo, hi);
  return p;
}

QuantParams compute_params(std::span<const double> values, int bits, QuantMode mode) {
  if (values.empty()) throw Error(ErrorKind::InvalidArgument, "values", "cannot derive params from no values");
  double lo = 0.0;
  double hi = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "values", "NaN or Inf in quantization input");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  auto [q_min, q_max] = code_range(bits, mode);
  if (lo == hi) return degenerate_params(lo, bits, mode);

  QuantParams p{1.0, 0, bits, q_min, q_max, mode};
  if (mode == QuantMode::Asymmetric) {
    p.scale = (hi - lo) / static_cast<double>(q_max - q_min);
    p.zero_point = clamp_round(-lo / p.scale, q_min, q_max);
  } else {
    p.scale = std::max(std::abs(lo), std::abs(hi)) / static_cast<double>(q_max);
  }
  return p;
}

std::int32_t quantize_value(double v, const QuantParams& p) {
  if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "values", "NaN or Inf in quantization input");
  return clamp_round(std::round(v / p.scale) + p.zero_point, p.q_min, p.q_max);
}

double dequantize_value(std::int32_t code, const QuantParams& p) {
  if (code < p.q_min || code > p.q_max) {
    throw Error(ErrorKind::CodeOutOfRange, "codes",
                "code " + std::to_string(code) + " outside [" + std::to_string(p.q_min) + ", " +
                    std::to_string(p.q_max) + "]");
  }
  return p.scale * static_cast<double>(code - p.zero_point);
}

std::vector<std::int32_t> quantize(std::span<const double> values, const QuantParams& p) {
  std::vector<std::int32_t> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(quantize_value(v, p));
  return out;
}

std::vector<double> dequantize(std::span<const std::int32_t> codes, const QuantParams& p) {
  std::vector<double> out;
  out.reserve(codes.size());
  for (auto c : codes) out.push_back(dequantize_value(c, p));
  return out;
}

std::size_t GroupQuantTensor::axis_length() const {
  return axis == GroupAxis::Hidden ? shape.back() : shape.front();
}

std::size_t GroupQuantTensor::group_slot(std::size_t flat_index) const {
  if (axis == GroupAxis::Hidden) {
    const std::size_t hidden = shape.back();
    return (flat_index / hidden) * groups_per_line() + (flat_index % hidden) / group_size;
  }
  const std::size_t out = shape[1];
  return ((flat_index / out) / group_size) * out + flat_index % out;
}

GroupQuantTensor quantize_grouped(std::span<const double> values, const Shape& shape, int bits,
                                  std::size_t group_size, GroupAxis axis,
                                  std::span<const std::uint8_t> exclude_mask, QuantMode mode) {
  if (values.size() != element_count(shape) || shape.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "values",
                std::to_string(values.size()) + " values for shape " + shape_to_string(shape));
  }
  if (axis == GroupAxis::InputDim && shape.size() != 2) {
    throw Error(ErrorKind::ShapeMismatch, "shape", "InputDim grouping expects an [In, Out] matrix");
  }
  if (!exclude_mask.empty() && exclude_mask.size() != values.size()) {
    throw Error(ErrorKind::ShapeMismatch, "exclude_mask", "mask length differs from tensor size");
  }
  GroupQuantTensor q;
  q.shape = shape;
  q.axis = axis;
  q.group_size = group_size;
  const std::size_t length = q.axis_length();
  if (group_size == 0 || length % group_size != 0) {
    throw Error(ErrorKind::Divisibility, "group_size",
                "group_size " + std::to_string(group_size) + " does not divide axis length " +
                    std::to_string(length));
  }

  // Element indices of each group, in slot order.
  const std::size_t lines = values.size() / length;
  const std::size_t per_line = length / group_size;
  const std::size_t stride = axis == GroupAxis::Hidden ? 1 : shape[1];
  auto element = [&](std::size_t slot, std::size_t k) {
    if (axis == GroupAxis::Hidden) {
      const std::size_t line = slot / per_line;
      return line * length + (slot % per_line) * group_size + k;
    }
    const std::size_t g = slot / shape[1];
    const std::size_t j = slot % shape[1];
    return (g * group_size + k) * stride + j;
  };

  q.codes.assign(values.size(), 0);
  q.groups.reserve(lines * per_line);
  std::vector<double> subset;
  subset.reserve(group_size);
  for (std::size_t slot = 0; slot < lines * per_line; ++slot) {
    subset.clear();
    for (std::size_t k = 0; k < group_size; ++k) {
      const std::size_t e = element(slot, k);
      if (exclude_mask.empty() || !exclude_mask[e]) subset.push_back(values[e]);
    }
    QuantParams p;
    if (subset.empty()) {
      p = degenerate_params(0.0, bits, mode);
      q.fully_masked_groups.push_back(slot);
    } else {
      p = compute_params(subset, bits, mode);
    }
    for (std::size_t k = 0; k < group_size; ++k) {
      const std::size_t e = element(slot, k);
      const bool masked = !exclude_mask.empty() && exclude_mask[e];
      q.codes[e] = masked ? p.zero_point : quantize_value(values[e], p);
    }
    q.groups.push_back(p);
  }
  return q;
}

std::vector<double> dequantize_grouped(const GroupQuantTensor& q) {
  std::vector<double> out(q.codes.size());
  for (std::size_t e = 0; e < q.codes.size(); ++e) out[e] = dequantize_value(q.codes[e], q.params_at(e));
  return out;
}

MixedQuantActivations quantize_mixed(std::span<const double> token, std::span<const std::uint8_t> mask,
                                     const RunConfig& cfg) {
  if (mask.size() != token.size()) {
    throw Error(ErrorKind::ShapeMismatch, "mask",
                "mask length " + std::to_string(mask.size()) + " != H=" + std::to_string(token.size()));
  }
  MixedQuantActivations m;
  m.mask.assign(mask.begin(), mask.end());
  for (auto& b : m.mask) b = b ? 1 : 0;
  m.normal = quantize_grouped(token, Shape{token.size()}, cfg.bits_normal,
                              static_cast<std::size_t>(cfg.group_size), GroupAxis::Hidden, m.mask);

  std::vector<double> salient;
  for (std::size_t i = 0; i < token.size(); ++i) {
    if (m.mask[i]) salient.push_back(token[i]);
  }
  if (salient.empty()) {
    m.salient_params = degenerate_params(0.0, cfg.bits_salient, QuantMode::Asymmetric);
    return m;
  }
  m.salient_params = compute_params(salient, cfg.bits_salient, QuantMode::Asymmetric);
  m.salient_codes.reserve(salient.size());
  for (std::size_t i = 0; i < token.size(); ++i) {
    if (m.mask[i]) m.salient_codes.emplace_back(i, quantize_value(token[i], m.salient_params));
  }
  return m;
}

std::vector<double> dequantize_mixed(const MixedQuantActivations& m) {
  auto out = dequantize_grouped(m.normal);
  for (auto [index, code] : m.salient_codes) out[index] = dequantize_value(code, m.salient_params);
  return out;
}

}  // namespace spikequant
