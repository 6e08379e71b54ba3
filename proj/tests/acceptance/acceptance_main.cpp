// Acceptance gate: one line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "spikequant/energy.hpp"
#include "spikequant/engine.hpp"
#include "spikequant/quant.hpp"
#include "spikequant/saliency.hpp"
#include "spikequant/spike.hpp"
#include "spikequant/tensorio.hpp"
#include "spikequant/toymodel.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace spikequant;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---- 1: engine equals the dequantized product ----

struct Instance {
  std::size_t h, out, gs, tokens;
  RunConfig cfg;
};

struct Built {
  GroupQuantTensor qw;
  std::shared_ptr<const WeightPlan> plan;
  std::vector<MixedQuantActivations> acts;
  MixedSpikeBatch batch;
};

Built build(std::mt19937_64& rng, const Instance& in) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rate = unit(rng) < 0.1 ? (unit(rng) < 0.5 ? 0.0 : 1.0) : 0.05 * unit(rng);
  auto inst = oracle::random_instance(rng, in.tokens, in.h, in.out, rate);
  // Half the instances also flag random ordinary positions.
  if (unit(rng) < 0.5) {
    for (auto& m : inst.masks) m = m || unit(rng) < 0.03;
  }
  Built b;
  b.qw = quantize_grouped(inst.weights, {in.h, in.out}, in.cfg.bits_normal, in.gs, GroupAxis::InputDim);
  b.plan = plan_weights(b.qw);
  for (std::size_t t = 0; t < in.tokens; ++t) {
    b.acts.push_back(quantize_mixed(std::span(inst.tokens).subspan(t * in.h, in.h),
                                    std::span(inst.masks).subspan(t * in.h, in.h), in.cfg));
  }
  b.batch = encode_batch(b.acts, {in.tokens, in.h}, in.cfg);
  return b;
}

Instance random_shape(std::mt19937_64& rng, std::size_t h, std::size_t gs) {
  std::uniform_int_distribution<int> out(1, 8), tokens(1, 2), low(2, 4), extra(0, 3);
  Instance in{h, static_cast<std::size_t>(out(rng)), gs, static_cast<std::size_t>(tokens(rng)), RunConfig{}};
  in.cfg.group_size = static_cast<int>(gs);
  in.cfg.bits_normal = low(rng);
  in.cfg.bits_salient = std::min(8, in.cfg.bits_normal + extra(rng));
  return in;
}

Outcome criterion_1() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  const struct {
    std::size_t h, gs, count;
  } plan[] = {{8, 4, 4000}, {128, 4, 1500}, {128, 128, 2500}, {512, 4, 500}, {512, 128, 1500}};
  std::size_t instances = 0;
  double worst = 0.0;
  for (const auto& p : plan) {
    for (std::size_t k = 0; k < p.count; ++k) {
      const auto b = build(rng, random_shape(rng, p.h, p.gs));
      const auto y = forward(b.batch, b.plan);
      const auto ref = oracle_dequant_matmul(b.acts, {b.acts.size()}, b.qw);
      worst = std::max(worst, max_relative_deviation(y.values, ref.values));
      ++instances;
    }
  }
  if (worst > 1e-9) return fail("max relative deviation " + fmt(worst) + " > 1e-9");

  std::size_t exact = 0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t h = k % 2 ? 8 : 16;
    const auto b = build(rng, random_shape(rng, h, 4));
    const auto y = forward_as<Rational>(b.batch, b.plan);
    for (std::size_t t = 0; t < b.acts.size(); ++t) {
      const auto ref = oracle::exact_matmul(b.acts[t], b.qw);
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (y[t * ref.size() + j] != ref[j]) return fail("rational instance " + std::to_string(k) + " deviates");
      }
    }
    ++exact;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs >= 120) return fail("runtime " + fmt(secs) + " s");
  return {true, std::to_string(instances) + " instances, max rel dev " + fmt(worst) + "; " + std::to_string(exact) +
                    " rational instances exact; " + fmt(secs) + " s"};
}

// ---- 2: decomposition and step order ----

Outcome criterion_2() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::int64_t> acc(-(std::int64_t{1} << 40), std::int64_t{1} << 40);
  std::uniform_real_distribution<double> log_th(-12.0, 12.0);
  for (int k = 0; k < 20000; ++k) {
    const std::int64_t v = k % 7 == 0 ? k % 3 - 1 : acc(rng);
    const double th = std::exp2(log_th(rng));
    const auto r = fire_as<Rational>(v, Rational(th));
    if (Rational(r.s_int) + r.s_float != Rational(v) / Rational(th) || r.s_float < 0 || r.s_float >= 1) {
      return fail("decomposition broken at v=" + std::to_string(v));
    }
    const auto d = fire(v, th);
    if (d.s_float < 0 || d.s_float >= 1) return fail("binary64 s_float out of [0, 1)");
  }

  // Exhaustive 4-bit activation codes for groups of up to 4 positions, against
  // every weight column for n <= 3 and a fixed sweep of columns for n = 4.
  std::uint64_t checked = 0;
  std::vector<std::vector<std::int32_t>> sweep;
  std::uniform_int_distribution<int> code(0, 15);
  for (int c = 0; c < 12; ++c) {
    std::vector<std::int32_t> col(4);
    for (auto& q : col) q = c == 0 ? 0 : c == 1 ? 15 : code(rng);
    sweep.push_back(col);
  }
  for (std::size_t n = 1; n <= 4; ++n) {
    std::size_t combos = 1;
    for (std::size_t i = 0; i < n; ++i) combos *= 16;
    std::vector<SpikeTime> times(n);
    std::vector<std::int32_t> qw(n);
    for (std::size_t a = 0; a < combos; ++a) {
      for (std::size_t i = 0, x = a; i < n; ++i, x /= 16) times[i] = encode_time(static_cast<int>(x % 16), 15);
      auto check = [&](std::int32_t zw, std::int64_t bias) {
        ++checked;
        return if_accumulate_group(times, qw, 15, zw, bias) == accumulate_closed_form(times, qw, 15, zw, bias);
      };
      if (n <= 3) {
        for (std::size_t w = 0; w < combos; ++w) {
          for (std::size_t i = 0, x = w; i < n; ++i, x /= 16) qw[i] = static_cast<std::int32_t>(x % 16);
          for (std::int32_t zw : {0, 7, 15}) {
            if (!check(zw, zw * 3 - 20)) return fail("time loop != closed form");
          }
        }
      } else {
        for (const auto& col : sweep) {
          std::copy_n(col.begin(), n, qw.begin());
          for (std::int32_t zw = 0; zw < 16; ++zw) {
            if (!check(zw, 5 - zw)) return fail("time loop != closed form");
          }
        }
      }
    }
  }
  for (int k = 0; k < 5000; ++k) {
    const int window = window_for_bits(1 + k % 8);
    const std::size_t n = 1 + k % 64;
    std::uniform_int_distribution<int> a(0, window);
    std::vector<SpikeTime> times(n);
    std::vector<std::int32_t> qw(n);
    for (std::size_t i = 0; i < n; ++i) times[i] = encode_time(a(rng), window), qw[i] = code(rng);
    const std::int32_t zw = code(rng);
    if (if_accumulate_group(times, qw, window, zw, -k) != accumulate_closed_form(times, qw, window, zw, -k)) {
      return fail("time loop != closed form on random group");
    }
    ++checked;
  }
  return {true, "20000 decompositions exact; " + std::to_string(checked) + " step-order comparisons equal"};
}

// ---- 3: TTFS ----

Outcome criterion_3() {
  std::size_t codes = 0;
  for (int bits = 1; bits <= 8; ++bits) {
    const int window = window_for_bits(bits);
    for (int q = 0; q <= window; ++q, ++codes) {
      const auto s = encode(q, bits);
      if (decode(s) != q || decode_time(encode_time(q, window), window) != q) return fail("round trip at q=" + std::to_string(q));
      if (s.first_spike_time.has_value() != (q != 0)) return fail("zero code emitted a spike");
      for (int r = 1; r < q; ++r) {
        if (!(*encode(q, bits).first_spike_time < *encode(r, bits).first_spike_time)) return fail("not monotone");
      }
    }
  }
  std::mt19937_64 rng(3);
  for (int k = 0; k < 200; ++k) {
    const auto b = build(rng, random_shape(rng, 32, 8));
    std::size_t nonzero = 0;
    for (const auto& m : b.acts) {
      for (std::size_t i = 0; i < m.hidden(); ++i) nonzero += !m.mask[i] && m.normal.codes[i] != 0;
      for (auto [i, c] : m.salient_codes) nonzero += c != 0;
    }
    if (b.batch.spike_count() != nonzero) return fail("spike count != nonzero codes");
  }
  return {true, std::to_string(codes) + " codes over bits 1-8 round-trip and order; 200 batch counts match"};
}

// ---- 4: MAD ----

Outcome criterion_4() {
  const std::vector<double> example = {1, 2, 3, 4, 100};
  if (mad_detect(example, MadConfig{}) != Mask{0, 0, 0, 0, 1}) return fail("worked example");
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(1, 96), small(-2, 2), kind(0, 3);
  std::cauchy_distribution<double> cauchy(0.0, 1.0);
  std::size_t even = 0, constant = 0, flagged = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> x(static_cast<std::size_t>(len(rng)));
    const int kd = kind(rng);
    const double c = cauchy(rng);
    for (auto& v : x) v = kd == 0 ? c : kd == 1 ? small(rng) : cauchy(rng);
    if (kd == 3 && x.size() > 2) x[1] = x[0];  // an explicit tie
    even += x.size() % 2 == 0;
    constant += kd == 0;
    const auto got = mad_detect(x, MadConfig{});
    if (got != oracle::mad_mask(x, 1.4826, 3.5)) return fail("vector " + std::to_string(k) + " differs");
    for (auto m : got) flagged += m;
  }
  return {true, "1000 vectors (" + std::to_string(even) + " even, " + std::to_string(constant) + " constant, " +
                    std::to_string(flagged) + " flags) match; [1,2,3,4,100] flags index 4"};
}

// ---- 5: round-trip bound ----

Outcome criterion_5() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t checked = 0;
  for (int bits = 1; bits <= 8; ++bits) {
    for (int k = 0; k < 500; ++k) {
      const double centre = (unit(rng) - 0.5) * std::exp2(20 * unit(rng) - 10);
      const double spread = std::exp2(20 * unit(rng) - 10);
      std::vector<double> group(1 + k % 32);
      for (auto& v : group) v = centre + spread * (unit(rng) - 0.5);
      const auto p = compute_params(group, bits, QuantMode::Asymmetric);
      const double lo = std::min(0.0, *std::min_element(group.begin(), group.end()));
      const double hi = std::max(0.0, *std::max_element(group.begin(), group.end()));
      for (int s = 0; s < 64; ++s) {
        const double x = s < static_cast<int>(group.size()) ? group[s] : lo + (hi - lo) * unit(rng);
        const double back = dequantize_value(quantize_value(x, p), p);
        const double mag = std::max({std::abs(x), std::abs(back), p.scale});
        const double ulp = std::nextafter(mag, std::numeric_limits<double>::infinity()) - mag;
        if (std::abs(back - x) > p.scale / 2 + 4 * ulp) {
          return fail("bits=" + std::to_string(bits) + " x=" + fmt(x) + " error " + fmt(std::abs(back - x)));
        }
        ++checked;
      }
    }
  }
  return {true, std::to_string(checked) + " in-range values within scale/2 + 4 ulp over bits 1-8"};
}

// ---- 6: mixed-precision dominance ----

Outcome criterion_6() {
  RunConfig cfg;
  const auto net = generate_toynet(6, {512, 512, 512}, 1.0);
  const auto x = sample_inputs(net, 7, 8, 32);
  const auto uniform = run_pipeline(net, x, cfg, Method{MethodKind::UniformW4A4, 0});
  const auto fixed = run_pipeline(net, x, cfg, Method{MethodKind::FixedChannels, 16});
  const auto spike = run_pipeline(net, x, cfg, Method{MethodKind::SpikeQuant, 0});
  std::size_t wins = 0;
  for (std::size_t t = 0; t < spike.token_mse.size(); ++t) wins += spike.token_mse[t] <= uniform.token_mse[t];
  const double share = static_cast<double>(wins) / static_cast<double>(spike.token_mse.size());
  const std::string detail = fmt(100 * share) + "% of " + std::to_string(spike.token_mse.size()) +
                             " tokens; mse spike " + fmt(spike.mse) + ", uniform " + fmt(uniform.mse) + ", fixed " +
                             fmt(fixed.mse) + "; salient ratio " + fmt(spike.layers[0].salient_ratio);
  if (share < 0.95) return fail("SpikeQuant token-MSE <= uniform on only " + detail);
  if (fixed.mse < spike.mse) return fail("FixedChannels beats SpikeQuant: " + detail);
  return {true, "SpikeQuant token-MSE <= uniform on " + detail};
}

// ---- 7: energy ----

Outcome criterion_7() {
  std::ifstream in(std::string(SPIKEQUANT_TEST_DATA_DIR) + "/energy_cases.json");
  if (!in) return fail("energy_cases.json missing");
  const auto cases = nlohmann::json::parse(in).at("cases");
  const EnergyTable t;
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto& j = c.at("dims");
    LayerDims d;
    d.B = j.at("B"), d.S = j.at("S"), d.H = d.In = j.at("H"), d.Out = j.at("Out");
    d.b_w = j.at("b_w"), d.b_a = j.at("b_a"), d.b_a_high = j.at("b_a_high"), d.b_a_low = j.at("b_a_low");
    d.gamma = j.at("gamma"), d.T_high = j.at("T_high"), d.T_low = j.at("T_low");
    d.S_r_high = j.at("S_r_high"), d.S_r_low = j.at("S_r_low");
    const std::pair<const char*, EnergyReport> reports[] = {
        {"typical", energy_typical(d, t)}, {"mixed", energy_mixed(d, t)}, {"spike", energy_spike(d, t)}};
    for (const auto& [name, r] : reports) {
      for (const char* key : {"e_compute", "e_data", "e_total"}) {
        const double want = c.at(name).at(key);
        const double got = key[2] == 'c' ? r.e_compute : key[2] == 'd' ? r.e_data : r.e_total;
        worst = std::max(worst, want == 0 ? std::abs(got) : std::abs(got - want) / std::abs(want));
      }
    }
  }
  if (cases.size() < 50 || worst > 1e-12) return fail("oracle deviation " + fmt(worst));

  // Degenerate identities, compared with ==.
  LayerDims d;
  d.B = 2, d.S = 16, d.H = d.In = 128, d.Out = 96;
  d.gamma = 0;
  const auto m0 = energy_mixed(d, t), q0 = energy_typical(d, t, MacUnit::Mac4_4_32);
  d.gamma = d.H;
  LayerDims all_high = d;
  all_high.b_a = d.b_a_high;
  const auto mh = energy_mixed(d, t), qh = energy_typical(all_high, t, MacUnit::Mac4_8_32);
  d.gamma = 0, d.T_low = 8, d.S_r_low = 0.125;
  EnergyTable sub = t;
  sub.mac_4_4_32 = t.acc_4 + t.mac_4_4_32;
  LayerDims one_bit = d;
  one_bit.b_a = 1;
  const auto s1 = energy_spike(d, t), q1 = energy_typical(one_bit, sub);
  if (m0.e_compute != q0.e_compute || m0.e_data != q0.e_data) return fail("gamma = 0 identity");
  if (mh.e_compute != qh.e_compute || mh.e_data != qh.e_data) return fail("gamma = H identity");
  if (s1.e_compute != q1.e_compute || s1.e_data != q1.e_data) return fail("T * S_r = 1 identity");

  // Ordering on a toy block: rates and gamma measured from the spiking
  // pipeline on a two-layer ReLU MLP (B=1, S=8, H=Out=128).
  RunConfig cfg;
  const auto net = generate_toynet(7, {128, 128, 128}, 1.0, Activation::ReLU);
  const auto x = sample_inputs(net, 8, 1, 8);
  const auto run = run_pipeline(net, x, cfg, Method{MethodKind::SpikeQuant, 0});
  std::vector<LayerDims> block;
  for (std::size_t k = 0; k < run.layers.size(); ++k) {
    LayerDims l;
    l.name = "L" + std::to_string(k);
    l.B = 1, l.S = 8, l.H = l.In = 128, l.Out = 128;
    l.gamma = std::round(static_cast<double>(run.layers[k].salient_count) / 8.0);
    l.S_r_low = run.layers[k].spike_rate_low;
    l.S_r_high = run.layers[k].spike_rate_high;
    block.push_back(l);
  }
  std::vector<LayerDims> baseline = block;
  for (auto& l : baseline) l.b_a = 8;  // W4A8 baseline on the 4-8-32 MAC
  EnergySelectors sel;
  sel.typical = MacUnit::Mac4_8_32;
  const double es = model_energy(block, t, EnergyMethod::Spike, sel).e_total;
  const double em = model_energy(block, t, EnergyMethod::Mixed, sel).e_total;
  const double eq = model_energy(baseline, t, EnergyMethod::Typical, sel).e_total;
  const std::string order = "E_s " + fmt(es) + " < E_m " + fmt(em) + " < E_q " + fmt(eq) + " (T_low*S_r_low " +
                            fmt(15 * block[0].S_r_low) + ", " + fmt(15 * block[1].S_r_low) + ")";
  if (!(es < em && em < eq)) return fail("ordering violated: " + order);
  return {true, std::to_string(cases.size()) + " oracle cases within " + fmt(worst) +
                    "; identities exact; " + order};
}

// ---- 8: determinism ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome criterion_8() {
  const fs::path dir = fs::temp_directory_path() / "spikequant_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string tool = SPIKEQUANT_CLI_PATH;

  std::mt19937_64 rng(8);
  std::normal_distribution<float> normal(0.f, 1.f);
  std::vector<float> acts(16 * 128), weights(128 * 32);
  for (auto& v : acts) v = normal(rng);
  for (std::size_t t = 0; t < 16; ++t) acts[t * 128 + (t * 13) % 128] = t % 2 ? -30.f : 30.f;
  for (auto& v : weights) v = 0.1f * normal(rng);
  write_tensor(Tensor::from_f32({16, 128}, acts), dir / "acts.spkq");
  write_tensor(Tensor::from_f32({128, 32}, weights), dir / "w.spkq");
  write_text_file(dir / "dims.cfg", "q.B = 1\nq.S = 8\nq.H = 128\nq.In = 128\nq.Out = 128\nq.gamma = 4\n"
                                    "up.B = 1\nup.S = 8\nup.H = 128\nup.In = 128\nup.Out = 344\nup.gamma = 3\n");

  std::vector<std::string> outputs[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path r = dir / ("run" + std::to_string(run));
    fs::create_directories(r);
    const std::string d = dir.string(), o = r.string();
    const std::string commands[] = {
        tool + " --seed 5 calibrate " + d + "/acts.spkq --out " + o + "/profile.cfg > " + o + "/calibrate.json",
        tool + " --seed 5 infer --weights " + d + "/w.spkq --activations " + d + "/acts.spkq --profile " + o +
            "/profile.cfg --out " + o + "/infer > /dev/null",
        tool + " --seed 5 ablate --seeds 2 --dims 256,128 --out " + o + "/ablate.csv",
        tool + " --seed 5 energy --dims " + d + "/dims.cfg --out " + o + "/energy.json --csv " + o + "/energy.csv",
    };
    for (const auto& cmd : commands) {
      if (std::system(cmd.c_str()) != 0) return fail("command failed: " + cmd);
    }
    for (const char* f : {"calibrate.json", "profile.cfg", "infer.report.json", "infer.snn.spkq", "infer.oracle.spkq",
                          "ablate.csv", "energy.json", "energy.csv"}) {
      if (!fs::exists(r / f)) return fail(std::string("missing output ") + f);
      outputs[run].push_back(slurp(r / f));
    }
    if (!fs::exists(r / "ablate.csv.manifest.json")) return fail("manifest not written");
  }
  for (std::size_t k = 0; k < outputs[0].size(); ++k) {
    if (outputs[0][k] != outputs[1][k]) return fail("output " + std::to_string(k) + " differs between runs");
  }
  fs::remove_all(dir);
  return {true, "calibrate, infer, ablate, energy: " + std::to_string(outputs[0].size()) +
                    " report files byte-identical across two runs"};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"1 engine == dequantized matmul", criterion_1},
      {"2 fire decomposition and step order", criterion_2},
      {"3 TTFS encode/decode", criterion_3},
      {"4 MAD oracle", criterion_4},
      {"5 quantization round-trip bound", criterion_5},
      {"6 mixed-precision dominance", criterion_6},
      {"7 energy model", criterion_7},
      {"8 CLI determinism", criterion_8},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    std::printf("[%s] criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
