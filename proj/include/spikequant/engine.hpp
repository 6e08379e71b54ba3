// engine.hpp - dequantization-free spiking linear transform.
//
// Within one quantization group g and output column j the dequantized product
//
//   sum_i (Qa_i - Za) Sa (Qw_ij - Zw) Sw
//     = Sa Sw * [ sum_i Qa_i (Qw_ij - Zw) + Za sum_i (Zw - Qw_ij) ]
//
// is computed by an integrate-and-fire neuron: each TTFS spike at time t adds
// (T - t)(Qw_ij - Zw) = Qa_i (Qw_ij - Zw) to an exact integer potential, the
// zero-point term arrives as a bias at t = T, and the threshold
// V_th = 1 / (Sa Sw) turns the potential into an integer spike count plus a
// fractional residual whose sum is exactly the dequantized output.
//
// Salient positions carry their own per-token (Sa, Za) and a longer window;
// they accumulate separately per weight group against V_th^s = 1 / (Sa^s Sw).
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spikequant/error.hpp"
#include "spikequant/quant.hpp"
#include "spikequant/spike.hpp"
#include "spikequant/tensorio.hpp"

namespace spikequant {

// Arithmetic hooks for the only real-valued step (the threshold division).
// Specialise for an exact rational type to evaluate the engine exactly.
template <class Real>
struct FireArithmetic {
  static Real from_int(std::int64_t v) { return static_cast<Real>(v); }
  static Real from_double(double v) { return static_cast<Real>(v); }
  static std::int64_t floor_to_int(const Real& q) { return static_cast<std::int64_t>(std::floor(q)); }
};

template <class Real>
struct BasicFireResult {
  std::int64_t s_int = 0;
  Real v_rest{};
  Real s_float{};
  Real output{};
};

using FireResult = BasicFireResult<double>;

// Floor convention: s_int = floor(v_acc / v_th), 0 <= s_float < 1, so
// negative potentials produce inhibitory (negative) spike counts.
template <class Real>
BasicFireResult<Real> fire_as(std::int64_t v_acc, const Real& v_th) {
  using A = FireArithmetic<Real>;
  BasicFireResult<Real> r;
  const Real acc = A::from_int(v_acc);
  const Real quotient = acc / v_th;
  r.s_int = A::floor_to_int(quotient);
  const Real whole = A::from_int(r.s_int);
  r.s_float = quotient - whole;
  r.v_rest = acc - whole * v_th;
  r.output = whole + r.s_float;
  return r;
}

FireResult fire(std::int64_t v_acc, double v_th);

// V_acc = sum_i (T - t_i)(Qw_i - Zw) + bias, integrated step by step over
// t = 0..T with the bias arriving at t = T. Positions holding kNoSpike do not
// contribute. Throws Overflow if the accumulator leaves int64.
std::int64_t if_accumulate_group(std::span<const SpikeTime> times, std::span<const std::int32_t> qw_column,
                                 int window, std::int32_t zw, std::int64_t bias);

// Same sum evaluated directly, without the time loop.
std::int64_t accumulate_closed_form(std::span<const SpikeTime> times, std::span<const std::int32_t> qw_column,
                                    int window, std::int32_t zw, std::int64_t bias);

// Integrate-and-fire neuron state: the exact integrated input and the net
// number of spikes emitted so far. The residual potential is
// potential - spikes_emitted * V_th.
struct IFState {
  std::int64_t potential = 0;
  std::int64_t spikes_emitted = 0;
};

struct IFTrace {
  IFState state;
  std::vector<std::int64_t> spikes_per_step;  // size T + 1; bursts and inhibitory spikes allowed
  FireResult result;
};

// Runs the neuron over t = 0..T, firing at every step as many spikes as the
// potential holds thresholds (negative counts when it has dropped below the
// last firing level). The spike total equals floor(V_acc / V_th).
IFTrace run_if_neuron(std::span<const SpikeTime> times, std::span<const std::int32_t> qw_column, int window,
                      std::int32_t zw, std::int64_t bias, double v_th);

// Weight side of a layer, prepared once: transposed codes and the per
// (group, column) zero-point sums sum_{i in g} (Zw - Qw_ij).
struct WeightPlan {
  GroupQuantTensor qweights;  // [In, Out], grouped along In
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t group_size = 0;
  std::size_t groups = 0;
  std::vector<std::int32_t> codes_t;     // [Out][In]
  std::vector<std::int64_t> zero_sums;   // [g * out + j]

  const QuantParams& params(std::size_t g, std::size_t j) const { return qweights.groups[g * out + j]; }
  std::span<const std::int32_t> column(std::size_t g, std::size_t j) const {
    return {codes_t.data() + j * in + g * group_size, group_size};
  }
};

std::shared_ptr<const WeightPlan> plan_weights(GroupQuantTensor qweights);

// A weight plan bound to one token's activation quantization.
struct SpikingLinearLayer {
  std::shared_ptr<const WeightPlan> weights;
  std::vector<QuantParams> act_groups;  // (Sa, Za) per group along H
  QuantParams salient;                  // (Sa^s, Za^s)
  std::vector<std::int64_t> precomputed_bias;     // [g * out + j] = Za(g) * sum_{i in g} (Zw - Qw_ij)
  std::vector<double> thresholds_normal;          // [g * out + j] = 1 / (Sa(g) Sw(g, j))
  std::vector<double> thresholds_salient;         // [g * out + j] = 1 / (Sa^s Sw(g, j))

  template <class Real>
  Real threshold_normal_as(std::size_t g, std::size_t j) const {
    using A = FireArithmetic<Real>;
    return A::from_int(1) / (A::from_double(act_groups[g].scale) * A::from_double(weights->params(g, j).scale));
  }
  template <class Real>
  Real threshold_salient_as(std::size_t g, std::size_t j) const {
    using A = FireArithmetic<Real>;
    return A::from_int(1) / (A::from_double(salient.scale) * A::from_double(weights->params(g, j).scale));
  }
};

SpikingLinearLayer prepare_layer(std::shared_ptr<const WeightPlan> weights, std::span<const QuantParams> act_groups,
                                 const QuantParams& salient);

namespace detail {

std::int64_t checked_add(std::int64_t a, std::int64_t b);
std::int64_t checked_mul(std::int64_t a, std::int64_t b);
void check_forward_shapes(const MixedSpikeBatch& batch, const WeightPlan& w);

}  // namespace detail

// Output for one token: Out values, each the sum over groups of the normal and
// salient neurons' S_int + S_float.
template <class Real>
std::vector<Real> forward_token_as(const MixedSpikeBatch& batch, std::size_t token,
                                   std::span<const std::size_t> salient_offsets, const SpikingLinearLayer& layer) {
  const WeightPlan& w = *layer.weights;
  const std::size_t h = batch.hidden();
  const int low = batch.window_low();
  const int high = batch.window_high();
  std::span<const SpikeTime> normal(batch.normal_times.data() + token * h, h);
  std::span<const std::uint8_t> mask(batch.mask.data() + token * h, h);

  // Salient spike times scattered to their positions; kNoSpike elsewhere.
  std::vector<SpikeTime> salient(h, kNoSpike);
  std::vector<std::uint8_t> group_has_salient(w.groups, 0);
  std::size_t cursor = salient_offsets[token];
  for (std::size_t i = 0; i < h; ++i) {
    if (!mask[i]) continue;
    salient[i] = batch.salient_times[cursor++];
    group_has_salient[i / w.group_size] = 1;
  }

  std::vector<Real> out(w.out, Real{});
  for (std::size_t g = 0; g < w.groups; ++g) {
    const auto g_normal = normal.subspan(g * w.group_size, w.group_size);
    const auto g_mask = mask.subspan(g * w.group_size, w.group_size);
    const std::span<const SpikeTime> g_salient(salient.data() + g * w.group_size, w.group_size);
    const std::int64_t za = layer.act_groups[g].zero_point;
    const std::int64_t zs = layer.salient.zero_point;
    for (std::size_t j = 0; j < w.out; ++j) {
      const auto qw = w.column(g, j);
      const std::int32_t zw = w.params(g, j).zero_point;
      const std::size_t slot = g * w.out + j;

      std::int64_t bias_normal = layer.precomputed_bias[slot];
      std::int64_t salient_zero_sum = 0;
      if (group_has_salient[g]) {
        for (std::size_t k = 0; k < w.group_size; ++k) {
          if (g_mask[k]) salient_zero_sum += static_cast<std::int64_t>(zw) - qw[k];
        }
        bias_normal = detail::checked_add(bias_normal, -detail::checked_mul(za, salient_zero_sum));
      }
      const std::int64_t v_normal = if_accumulate_group(g_normal, qw, low, zw, bias_normal);
      out[j] += fire_as<Real>(v_normal, layer.threshold_normal_as<Real>(g, j)).output;

      if (group_has_salient[g]) {
        const std::int64_t v_salient =
            if_accumulate_group(g_salient, qw, high, zw, detail::checked_mul(zs, salient_zero_sum));
        out[j] += fire_as<Real>(v_salient, layer.threshold_salient_as<Real>(g, j)).output;
      }
    }
  }
  return out;
}

template <class Real>
std::vector<Real> forward_as(const MixedSpikeBatch& batch, const std::shared_ptr<const WeightPlan>& weights) {
  detail::check_forward_shapes(batch, *weights);
  const auto offsets = batch.salient_offsets();
  std::vector<Real> out;
  out.reserve(batch.tokens() * weights->out);
  for (std::size_t tok = 0; tok < batch.tokens(); ++tok) {
    const auto& scales = batch.token_scales.at(tok);
    const auto layer = prepare_layer(weights, scales.normal_groups, scales.salient);
    auto y = forward_token_as<Real>(batch, tok, offsets, layer);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

// Output shape is the batch's leading dims followed by Out.
DenseTensor forward(const MixedSpikeBatch& batch, const std::shared_ptr<const WeightPlan>& weights);

// Ground truth: the dequantized ANN product, each activation with its own
// (scale, zero point) and each weight with its group's.
DenseTensor oracle_dequant_matmul(std::span<const MixedQuantActivations> tokens, const Shape& leading,
                                  const GroupQuantTensor& qweights);

// max |a - b| / (1 + |b|)
double max_relative_deviation(std::span<const double> a, std::span<const double> b);

}  // namespace spikequant
