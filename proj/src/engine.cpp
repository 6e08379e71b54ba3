#include "spikequant/engine.hpp"

#include <algorithm>
#include <array>

namespace spikequant {
namespace detail {

[[noreturn]] void overflow(const char* what) {
  throw Error(ErrorKind::Overflow, what, "accumulator exceeds 64 bits; a wider integer accumulator is required");
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) overflow("v_acc");
  return r;
}

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) overflow("v_acc");
  return r;
}

void check_forward_shapes(const MixedSpikeBatch& batch, const WeightPlan& w) {
  if (batch.hidden() != w.in) {
    throw Error(ErrorKind::ShapeMismatch, "H/In",
                "activation H=" + std::to_string(batch.hidden()) + " but weight In=" + std::to_string(w.in));
  }
  if (batch.group_size != w.group_size) {
    throw Error(ErrorKind::ShapeMismatch, "group_size",
                "activation group_size=" + std::to_string(batch.group_size) +
                    " but weight group_size=" + std::to_string(w.group_size));
  }
  if (batch.token_scales.size() != batch.tokens()) {
    throw Error(ErrorKind::ShapeMismatch, "token_scales", "one scale set per token required");
  }
}

}  // namespace detail

namespace {

void check_window(int window, std::size_t n_times, std::size_t n_weights) {
  if (window < 1 || window > 255) throw Error(ErrorKind::InvalidArgument, "window", "window must be in [1, 255]");
  if (n_times != n_weights) {
    throw Error(ErrorKind::ShapeMismatch, "qw_column", "spike and weight group lengths differ");
  }
}

std::int64_t contribution(SpikeTime t, std::int32_t qw, int window, std::int32_t zw) {
  if (t >= window) {
    throw Error(ErrorKind::CodeOutOfRange, "spike_time",
                "spike time " + std::to_string(t) + " outside window " + std::to_string(window));
  }
  return detail::checked_mul(window - static_cast<std::int64_t>(t), static_cast<std::int64_t>(qw) - zw);
}

// Per-step synaptic input: index t holds everything arriving at step t, with
// the bias folded into the last step.
std::array<std::int64_t, 256> step_inputs(std::span<const SpikeTime> times, std::span<const std::int32_t> qw,
                                          int window, std::int32_t zw, std::int64_t bias) {
  std::array<std::int64_t, 256> in{};
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] == kNoSpike) continue;
    in[times[k]] = detail::checked_add(in[times[k]], contribution(times[k], qw[k], window, zw));
  }
  in[static_cast<std::size_t>(window)] = detail::checked_add(in[static_cast<std::size_t>(window)], bias);
  return in;
}

}  // namespace

FireResult fire(std::int64_t v_acc, double v_th) {
  if (!(v_th > 0) || !std::isfinite(v_th)) {
    throw Error(ErrorKind::InvalidArgument, "v_th", "threshold must be positive and finite");
  }
  constexpr std::int64_t kExact = std::int64_t{1} << 53;
  if (v_acc > kExact || v_acc < -kExact) {
    throw Error(ErrorKind::Overflow, "v_acc", "potential not exactly representable in binary64");
  }
  return fire_as<double>(v_acc, v_th);
}

std::int64_t if_accumulate_group(std::span<const SpikeTime> times, std::span<const std::int32_t> qw_column,
                                 int window, std::int32_t zw, std::int64_t bias) {
  check_window(window, times.size(), qw_column.size());
  const auto in = step_inputs(times, qw_column, window, zw, bias);
  std::int64_t v = 0;
  for (int t = 0; t <= window; ++t) v = detail::checked_add(v, in[static_cast<std::size_t>(t)]);
  return v;
}

std::int64_t accumulate_closed_form(std::span<const SpikeTime> times, std::span<const std::int32_t> qw_column,
                                    int window, std::int32_t zw, std::int64_t bias) {
  check_window(window, times.size(), qw_column.size());
  std::int64_t v = bias;
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] != kNoSpike) v = detail::checked_add(v, contribution(times[k], qw_column[k], window, zw));
  }
  return v;
}

IFTrace run_if_neuron(std::span<const SpikeTime> times, std::span<const std::int32_t> qw_column, int window,
                      std::int32_t zw, std::int64_t bias, double v_th) {
  check_window(window, times.size(), qw_column.size());
  if (!(v_th > 0) || !std::isfinite(v_th)) {
    throw Error(ErrorKind::InvalidArgument, "v_th", "threshold must be positive and finite");
  }
  const auto in = step_inputs(times, qw_column, window, zw, bias);
  IFTrace trace;
  trace.spikes_per_step.assign(static_cast<std::size_t>(window) + 1, 0);
  for (int t = 0; t <= window; ++t) {
    trace.state.potential = detail::checked_add(trace.state.potential, in[static_cast<std::size_t>(t)]);
    // Fire while the residual holds a whole threshold; inhibit while it is negative.
    const std::int64_t level = static_cast<std::int64_t>(std::floor(static_cast<double>(trace.state.potential) / v_th));
    const std::int64_t fired = level - trace.state.spikes_emitted;
    trace.spikes_per_step[static_cast<std::size_t>(t)] = fired;
    trace.state.spikes_emitted = level;
  }
  trace.result = fire(trace.state.potential, v_th);
  return trace;
}

std::shared_ptr<const WeightPlan> plan_weights(GroupQuantTensor qweights) {
  if (qweights.axis != GroupAxis::InputDim || qweights.shape.size() != 2) {
    throw Error(ErrorKind::ShapeMismatch, "qweights", "weights must be an [In, Out] tensor grouped along In");
  }
  auto plan = std::make_shared<WeightPlan>();
  plan->in = qweights.shape[0];
  plan->out = qweights.shape[1];
  plan->group_size = qweights.group_size;
  plan->groups = plan->in / plan->group_size;
  plan->codes_t.resize(plan->in * plan->out);
  for (std::size_t i = 0; i < plan->in; ++i) {
    for (std::size_t j = 0; j < plan->out; ++j) plan->codes_t[j * plan->in + i] = qweights.codes[i * plan->out + j];
  }
  plan->qweights = std::move(qweights);
  plan->zero_sums.assign(plan->groups * plan->out, 0);
  for (std::size_t g = 0; g < plan->groups; ++g) {
    for (std::size_t j = 0; j < plan->out; ++j) {
      const std::int64_t zw = plan->params(g, j).zero_point;
      std::int64_t sum = 0;
      for (auto q : plan->column(g, j)) sum = detail::checked_add(sum, zw - q);
      plan->zero_sums[g * plan->out + j] = sum;
    }
  }
  return plan;
}

SpikingLinearLayer prepare_layer(std::shared_ptr<const WeightPlan> weights, std::span<const QuantParams> act_groups,
                                 const QuantParams& salient) {
  if (act_groups.size() != weights->groups) {
    throw Error(ErrorKind::ShapeMismatch, "act_groups",
                std::to_string(act_groups.size()) + " activation groups vs " + std::to_string(weights->groups) +
                    " weight groups");
  }
  auto positive = [](double s) { return s > 0 && std::isfinite(s); };
  for (const auto& p : act_groups) {
    if (!positive(p.scale)) throw Error(ErrorKind::InvalidArgument, "Sa", "activation scale must be positive");
  }
  if (!positive(salient.scale)) throw Error(ErrorKind::InvalidArgument, "Sa_s", "salient scale must be positive");

  SpikingLinearLayer layer;
  layer.act_groups.assign(act_groups.begin(), act_groups.end());
  layer.salient = salient;
  const std::size_t slots = weights->groups * weights->out;
  layer.precomputed_bias.resize(slots);
  layer.thresholds_normal.resize(slots);
  layer.thresholds_salient.resize(slots);
  for (std::size_t g = 0; g < weights->groups; ++g) {
    for (std::size_t j = 0; j < weights->out; ++j) {
      const std::size_t slot = g * weights->out + j;
      const double sw = weights->params(g, j).scale;
      if (!positive(sw)) throw Error(ErrorKind::InvalidArgument, "Sw", "weight scale must be positive");
      layer.precomputed_bias[slot] = detail::checked_mul(act_groups[g].zero_point, weights->zero_sums[slot]);
      layer.thresholds_normal[slot] = 1.0 / (act_groups[g].scale * sw);
      layer.thresholds_salient[slot] = 1.0 / (salient.scale * sw);
      if (!positive(layer.thresholds_normal[slot]) || !positive(layer.thresholds_salient[slot])) {
        throw Error(ErrorKind::InvalidArgument, "V_th", "threshold is not positive and finite");
      }
    }
  }
  layer.weights = std::move(weights);
  return layer;
}

DenseTensor forward(const MixedSpikeBatch& batch, const std::shared_ptr<const WeightPlan>& weights) {
  DenseTensor out;
  out.shape.assign(batch.shape.begin(), batch.shape.end() - 1);
  out.shape.push_back(weights->out);
  out.values = forward_as<double>(batch, weights);
  return out;
}

DenseTensor oracle_dequant_matmul(std::span<const MixedQuantActivations> tokens, const Shape& leading,
                                  const GroupQuantTensor& qweights) {
  if (qweights.shape.size() != 2) throw Error(ErrorKind::ShapeMismatch, "qweights", "weights must be [In, Out]");
  const std::size_t in = qweights.shape[0];
  const std::size_t out_dim = qweights.shape[1];
  if (element_count(leading) != tokens.size() && !(leading.empty() && tokens.size() == 1)) {
    throw Error(ErrorKind::ShapeMismatch, "leading", "leading dims do not match token count");
  }
  DenseTensor out;
  out.shape = leading;
  out.shape.push_back(out_dim);
  out.values.assign(tokens.size() * out_dim, 0.0);

  std::vector<double> a(in);
  for (std::size_t tok = 0; tok < tokens.size(); ++tok) {
    const auto& m = tokens[tok];
    if (m.hidden() != in) {
      throw Error(ErrorKind::ShapeMismatch, "H/In",
                  "activation H=" + std::to_string(m.hidden()) + " but weight In=" + std::to_string(in));
    }
    // (Qa - Za) * Sa per element, each with its own params.
    for (std::size_t i = 0; i < in; ++i) {
      const auto& p = m.normal.params_at(i);
      a[i] = static_cast<double>(m.normal.codes[i] - p.zero_point) * p.scale;
    }
    for (auto [i, code] : m.salient_codes) {
      a[i] = static_cast<double>(code - m.salient_params.zero_point) * m.salient_params.scale;
    }
    for (std::size_t j = 0; j < out_dim; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) {
        const std::size_t e = i * out_dim + j;
        const auto& w = qweights.params_at(e);
        acc += a[i] * (static_cast<double>(qweights.codes[e] - w.zero_point) * w.scale);
      }
      out.values[tok * out_dim + j] = acc;
    }
  }
  return out;
}

double max_relative_deviation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "outputs", "output sizes differ");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]) / (1.0 + std::abs(b[k])));
  return worst;
}

}  // namespace spikequant
