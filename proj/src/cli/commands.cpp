#include "cli/commands.hpp"

#include <cmath>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cli/manifest.hpp"
#include "spikequant/config.hpp"
#include "spikequant/energy.hpp"
#include "spikequant/engine.hpp"
#include "spikequant/error.hpp"
#include "spikequant/quant.hpp"
#include "spikequant/saliency.hpp"
#include "spikequant/spike.hpp"
#include "spikequant/tensorio.hpp"
#include "spikequant/toymodel.hpp"

namespace spikequant::cli {
namespace {

using json = nlohmann::ordered_json;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  double tolerance = 1e-9;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  apply_env_overrides(cfg, process_env);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

json bound(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Writes `text` to `path`, or to `out` when no path was given.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text_file(path, text);
  }
}

void record(RunManifest manifest, const RunConfig& cfg, const std::string& report) {
  if (report.empty()) return;
  manifest.config = cfg;
  manifest.timestamp = utc_timestamp();
  write_manifest(manifest, report);
}

// ---- calibrate ----

struct CalibrateOptions {
  std::vector<std::string> inputs;
  std::string layer = "L0";
  std::string module = "linear";
};

int cmd_calibrate(const GlobalOptions& g, const CalibrateOptions& o, std::ostream& out) {
  if (g.out.empty()) throw Error(ErrorKind::InvalidArgument, "--out", "calibrate needs an output profile path");
  const RunConfig cfg = resolve_config(g);
  RunManifest manifest;
  manifest.command = "calibrate";
  std::vector<CalibrationSample> stream;
  for (const auto& path : o.inputs) {
    const auto t = DenseTensor::from(read_tensor(path));
    manifest.add_input(path);
    const std::size_t h = t.shape.back();
    CalibrationSample s{o.layer, o.module, {}};
    for (std::size_t r = 0; r < t.values.size() / h; ++r) {
      s.tokens.emplace_back(t.values.begin() + static_cast<std::ptrdiff_t>(r * h),
                            t.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * h));
    }
    stream.push_back(std::move(s));
  }
  CalibrationSummary summary;
  const auto profile = calibrate(stream, MadConfig{cfg.mad_c, cfg.mad_r}, cfg.calib_passes, &summary);
  save_profile(profile, g.out);
  record(manifest, cfg, g.out);

  json j;
  j["samples_used"] = summary.samples_used;
  j["samples_skipped"] = summary.samples_skipped;
  j["degenerate_tokens"] = summary.degenerate_tokens;
  j["modules"] = json::array();
  for (const auto& [key, bar] : profile.entries()) {
    j["modules"].push_back({{"layer", key.first},
                            {"module", key.second},
                            {"pos_bar", bound(bar.pos_bar)},
                            {"neg_bar", bound(bar.neg_bar)},
                            {"pos_count", bar.pos_count},
                            {"neg_count", bar.neg_count}});
  }
  out << j.dump(2) << '\n';
  return kOk;
}

// ---- infer ----

struct InferOptions {
  std::string weights;
  std::string activations;
  std::string profile;
  std::string layer = "L0";
  std::string module = "linear";
};

int cmd_infer(const GlobalOptions& g, const InferOptions& o, std::ostream& out, std::ostream& err) {
  if (g.out.empty()) throw Error(ErrorKind::InvalidArgument, "--out", "infer needs an output prefix");
  const RunConfig cfg = resolve_config(g);
  RunManifest manifest;
  manifest.command = "infer";

  const auto w = DenseTensor::from(read_tensor(o.weights));
  manifest.add_input(o.weights);
  const auto x = DenseTensor::from(read_tensor(o.activations));
  manifest.add_input(o.activations);
  if (w.shape.size() != 2) throw Error(ErrorKind::ShapeMismatch, "weights", "weights must be [In, Out]");
  const std::size_t h = x.shape.back();
  if (h != w.shape[0]) {
    throw Error(ErrorKind::ShapeMismatch, "H/In",
                "activation H=" + std::to_string(h) + " but weight In=" + std::to_string(w.shape[0]));
  }
  cfg.validate_hidden(h);

  std::optional<SalientBar> bar;
  if (!o.profile.empty()) {
    bar = load_profile(o.profile).at(o.layer, o.module);
    manifest.add_input(o.profile);
  }

  const auto gs = static_cast<std::size_t>(cfg.group_size);
  auto qw = quantize_grouped(w.values, w.shape, cfg.bits_normal, gs, GroupAxis::InputDim);
  const auto plan = plan_weights(qw);

  const std::size_t tokens = x.values.size() / h;
  std::vector<MixedQuantActivations> quantized;
  quantized.reserve(tokens);
  std::size_t salient = 0;
  for (std::size_t t = 0; t < tokens; ++t) {
    std::span<const double> token(x.values.data() + t * h, h);
    const Mask mask = bar ? detect_online(token, *bar) : Mask(h, 0);
    quantized.push_back(quantize_mixed(token, mask, cfg));
    salient += quantized.back().salient_count();
  }
  const Shape leading(x.shape.begin(), x.shape.end() - 1);
  const auto batch = encode_batch(quantized, x.shape, cfg);
  const auto snn = forward(batch, plan);
  const auto oracle = oracle_dequant_matmul(quantized, leading, qw);
  const double deviation = max_relative_deviation(snn.values, oracle.values);
  const bool pass = deviation <= g.tolerance;
  const auto rates = spike_rate(batch);

  const std::string prefix = g.out;
  write_tensor(snn.to_f32(), prefix + ".snn.spkq");
  write_tensor(oracle.to_f32(), prefix + ".oracle.spkq");

  json j;
  j["tokens"] = tokens;
  j["hidden"] = h;
  j["out"] = w.shape[1];
  j["group_size"] = cfg.group_size;
  j["bits_normal"] = cfg.bits_normal;
  j["bits_salient"] = cfg.bits_salient;
  j["salient_count"] = salient;
  j["salient_ratio"] = static_cast<double>(salient) / static_cast<double>(tokens * h);
  j["spike_count"] = batch.spike_count();
  j["spike_rate_low"] = rates.low;
  j["spike_rate_high"] = rates.high;
  j["max_relative_deviation"] = deviation;
  j["tolerance"] = g.tolerance;
  j["pass"] = pass;
  const std::string report = j.dump(2) + "\n";
  write_text_file(prefix + ".report.json", report);
  record(manifest, cfg, prefix + ".report.json");
  out << report;
  if (!pass) {
    err << "verification failed: max relative deviation " << format_real(deviation) << " exceeds tolerance "
        << format_real(g.tolerance) << '\n';
    return kVerificationFailed;
  }
  return kOk;
}

// ---- ablate ----

struct AblateOptions {
  int seeds = 3;
  std::size_t batch = 4;
  std::size_t seq = 16;
  double tail = 1.0;
  std::vector<std::size_t> dims{512, 512, 512};
};

struct AblationRow {
  Method method;
  int group_size;
  double mad_r;
};

int cmd_ablate(const GlobalOptions& g, const AblateOptions& o, std::ostream& out, std::ostream& err) {
  const RunConfig base = resolve_config(g);
  if (o.seeds < 1) throw Error(ErrorKind::InvalidArgument, "--seeds", "need at least one seed");
  const std::size_t k = std::max<std::size_t>(1, o.dims.front() / 32);
  const std::vector<AblationRow> rows = {
      {{MethodKind::UniformW4A4, 0}, 256, base.mad_r},
      {{MethodKind::UniformW4A4, 0}, 128, base.mad_r},
      {{MethodKind::FixedChannels, k}, 128, base.mad_r},
      {{MethodKind::SpikeQuant, 0}, 256, 3.5},
      {{MethodKind::SpikeQuant, 0}, 128, 3.5},
      {{MethodKind::SpikeQuant, 0}, 128, 5.0},
  };
  std::ostringstream csv;
  csv << ErrorReport::csv_header() << '\n';
  double worst = 0.0;
  for (int s = 0; s < o.seeds; ++s) {
    const std::uint64_t seed = base.seed + static_cast<std::uint64_t>(s);
    const ToyNet net = generate_toynet(seed, o.dims, o.tail);
    const DenseTensor inputs = sample_inputs(net, seed + 1, o.batch, o.seq);
    for (const auto& row : rows) {
      RunConfig cfg = base;
      cfg.seed = seed;
      cfg.group_size = row.group_size;
      cfg.mad_r = row.mad_r;
      const auto report = run_pipeline(net, inputs, cfg, row.method);
      worst = std::max(worst, report.max_engine_deviation);
      csv << report.to_csv_row(seed) << '\n';
    }
  }
  emit(g.out, csv.str(), out);
  RunManifest manifest;
  manifest.command = "ablate";
  record(manifest, base, g.out);
  if (worst > g.tolerance) {
    err << "verification failed: engine deviation " << format_real(worst) << " exceeds tolerance "
        << format_real(g.tolerance) << '\n';
    return kVerificationFailed;
  }
  return kOk;
}

// ---- energy ----

struct EnergyOptions {
  std::string dims;
  std::string method = "all";
  std::string csv;
  bool acc_only = false;
};

int cmd_energy(const GlobalOptions& g, const EnergyOptions& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  RunManifest manifest;
  manifest.command = "energy";
  EnergyInput input = load_energy_input(o.dims);
  manifest.add_input(o.dims);

  std::vector<EnergyMethod> methods;
  if (o.method == "all") {
    methods = {EnergyMethod::Typical, EnergyMethod::Mixed, EnergyMethod::Spike};
  } else {
    methods = {parse_energy_method(o.method)};
  }
  EnergySelectors sel;
  sel.spike_acc_only = o.acc_only;

  std::vector<EnergyReport> reports;
  for (auto m : methods) reports.push_back(model_energy(input.layers, input.table, m, sel));

  std::string text;
  if (reports.size() == 1) {
    text = reports.front().to_json();
  } else {
    json j = json::array();
    for (const auto& r : reports) j.push_back(json::parse(r.to_json()));
    text = j.dump(2) + "\n";
  }
  emit(g.out, text, out);
  record(manifest, cfg, g.out);

  if (!o.csv.empty()) {
    std::ostringstream os;
    os << "method,e_compute,e_data,e_total\n";
    for (const auto& r : reports) {
      os << r.method << ',' << format_real(r.e_compute) << ',' << format_real(r.e_data) << ','
         << format_real(r.e_total) << '\n';
    }
    write_text_file(o.csv, os.str());
  }
  return kOk;
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw Error(ErrorKind::InvalidArgument, "--dims", "bad size '" + item + "'");
    dims.push_back(v);
  }
  return dims;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixed-precision spiking quantization toolkit", "spikequant"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "Run config file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out", g.out, "Output path (or prefix, for infer)");
  app.add_option("--tolerance", g.tolerance, "Equivalence tolerance (relative)")->check(CLI::PositiveNumber);

  CalibrateOptions co;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit salient bars from activation tensors");
  calibrate_cmd->add_option("inputs", co.inputs, "Activation tensor files, one pass each")->required();
  calibrate_cmd->add_option("--layer", co.layer, "Layer id recorded in the profile");
  calibrate_cmd->add_option("--module", co.module, "Module id recorded in the profile");

  InferOptions io;
  auto* infer_cmd = app.add_subcommand("infer", "Spiking forward of one linear layer, checked against the oracle");
  infer_cmd->add_option("--weights", io.weights, "[In, Out] weight tensor")->required();
  infer_cmd->add_option("--activations", io.activations, "[..., H] activation tensor")->required();
  infer_cmd->add_option("--profile", io.profile, "Salient profile; without it every position is normal");
  infer_cmd->add_option("--layer", io.layer, "Profile layer id");
  infer_cmd->add_option("--module", io.module, "Profile module id");

  AblateOptions ao;
  std::string dims_text;
  auto* ablate_cmd = app.add_subcommand("ablate", "Error ablation on the synthetic toy model");
  ablate_cmd->add_option("--seeds", ao.seeds, "Number of consecutive seeds");
  ablate_cmd->add_option("--batch", ao.batch, "Input batch size");
  ablate_cmd->add_option("--seq", ao.seq, "Input sequence length");
  ablate_cmd->add_option("--tail", ao.tail, "Outlier strength of the synthetic inputs");
  ablate_cmd->add_option("--dims", dims_text, "Comma-separated layer sizes");

  EnergyOptions eo;
  auto* energy_cmd = app.add_subcommand("energy", "Closed-form energy report");
  energy_cmd->add_option("--dims", eo.dims, "Layer dims file")->required();
  energy_cmd->add_option("--method", eo.method, "typical, mixed, spike or all");
  energy_cmd->add_option("--csv", eo.csv, "Also write a per-method CSV summary");
  energy_cmd->add_flag("--acc-only", eo.acc_only, "Charge spike events the accumulate only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*calibrate_cmd) return cmd_calibrate(g, co, out);
    if (*infer_cmd) return cmd_infer(g, io, out, err);
    if (*ablate_cmd) {
      if (!dims_text.empty()) ao.dims = parse_dims(dims_text);
      return cmd_ablate(g, ao, out, err);
    }
    if (*energy_cmd) return cmd_energy(g, eo, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace spikequant::cli
