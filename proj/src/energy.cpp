#include "spikequant/energy.hpp"

#include <cmath>
#include <map>

#include <json.hpp>

#include "spikequant/config.hpp"
#include "spikequant/error.hpp"
#include "spikequant/tensorio.hpp"

namespace spikequant {
namespace {

struct PathCost {
  double compute = 0.0;
  double read = 0.0;
  double move = 0.0;
  double data() const { return read + move; }
};

EnergyReport make_report(std::string method, std::vector<EnergyTerm> terms, double compute, double data) {
  EnergyReport r;
  r.method = std::move(method);
  r.e_compute = compute;
  r.e_data = data;
  r.e_total = compute + data;
  r.breakdown = std::move(terms);
  return r;
}

// One quantized path over `channels` hidden channels, each moving `move_units`
// bits-or-events and charging `op_energy` per output contribution.
PathCost path_cost(const LayerDims& d, const EnergyTable& t, double channels, double op_energy, double move_units) {
  PathCost c;
  c.compute = d.B * d.S * d.Out * channels * op_energy;
  c.read = channels * d.Out * d.b_w * t.read_per_bit;
  c.move = d.B * d.S * channels * move_units * t.move_per_bit;
  return c;
}

std::vector<EnergyTerm> path_terms(const std::string& prefix, const PathCost& c) {
  return {{prefix + "compute", c.compute}, {prefix + "read", c.read}, {prefix + "move", c.move}};
}

bool is_count(double v) { return v >= 0 && std::isfinite(v) && v == std::floor(v); }

double* layer_field(LayerDims& d, const std::string& key) {
  static const std::map<std::string, double LayerDims::*> fields = {
      {"B", &LayerDims::B},           {"S", &LayerDims::S},
      {"H", &LayerDims::H},           {"In", &LayerDims::In},
      {"Out", &LayerDims::Out},       {"b_w", &LayerDims::b_w},
      {"b_a", &LayerDims::b_a},       {"b_a_high", &LayerDims::b_a_high},
      {"b_a_low", &LayerDims::b_a_low}, {"gamma", &LayerDims::gamma},
      {"T_high", &LayerDims::T_high}, {"T_low", &LayerDims::T_low},
      {"S_r_high", &LayerDims::S_r_high}, {"S_r_low", &LayerDims::S_r_low},
  };
  auto it = fields.find(key);
  return it == fields.end() ? nullptr : &(d.*(it->second));
}

double* table_field(EnergyTable& t, const std::string& key) {
  static const std::map<std::string, double EnergyTable::*> fields = {
      {"acc_4", &EnergyTable::acc_4},           {"acc_5", &EnergyTable::acc_5},
      {"mac_4_4_32", &EnergyTable::mac_4_4_32}, {"mac_4_5_32", &EnergyTable::mac_4_5_32},
      {"mac_4_8_32", &EnergyTable::mac_4_8_32}, {"mac_1_16_32", &EnergyTable::mac_1_16_32},
      {"mac_2_16_32", &EnergyTable::mac_2_16_32}, {"mac_3_16_32", &EnergyTable::mac_3_16_32},
      {"read_per_bit", &EnergyTable::read_per_bit}, {"move_per_bit", &EnergyTable::move_per_bit},
  };
  auto it = fields.find(key);
  return it == fields.end() ? nullptr : &(t.*(it->second));
}

}  // namespace

MacUnit parse_mac_unit(std::string_view name) {
  if (name == "mac_4_4_32") return MacUnit::Mac4_4_32;
  if (name == "mac_4_5_32") return MacUnit::Mac4_5_32;
  if (name == "mac_4_8_32") return MacUnit::Mac4_8_32;
  if (name == "mac_1_16_32") return MacUnit::Mac1_16_32;
  if (name == "mac_2_16_32") return MacUnit::Mac2_16_32;
  if (name == "mac_3_16_32") return MacUnit::Mac3_16_32;
  throw Error(ErrorKind::InvalidArgument, "mac", "unknown MAC selector '" + std::string(name) + "'");
}

std::string_view to_string(MacUnit unit) {
  switch (unit) {
    case MacUnit::Mac4_4_32: return "mac_4_4_32";
    case MacUnit::Mac4_5_32: return "mac_4_5_32";
    case MacUnit::Mac4_8_32: return "mac_4_8_32";
    case MacUnit::Mac1_16_32: return "mac_1_16_32";
    case MacUnit::Mac2_16_32: return "mac_2_16_32";
    case MacUnit::Mac3_16_32: return "mac_3_16_32";
  }
  return "?";
}

double EnergyTable::mac(MacUnit unit) const {
  switch (unit) {
    case MacUnit::Mac4_4_32: return mac_4_4_32;
    case MacUnit::Mac4_5_32: return mac_4_5_32;
    case MacUnit::Mac4_8_32: return mac_4_8_32;
    case MacUnit::Mac1_16_32: return mac_1_16_32;
    case MacUnit::Mac2_16_32: return mac_2_16_32;
    case MacUnit::Mac3_16_32: return mac_3_16_32;
  }
  throw Error(ErrorKind::InvalidArgument, "mac", "unknown MAC selector");
}

void EnergyTable::validate() const {
  for (double v : {acc_4, acc_5, mac_4_4_32, mac_4_5_32, mac_4_8_32, mac_1_16_32, mac_2_16_32, mac_3_16_32,
                   read_per_bit, move_per_bit}) {
    if (!(v > 0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidConfig, "energy_table", "constants must be positive");
  }
}

EnergyTable EnergyTable::named(std::string_view name) {
  if (name == "default") return EnergyTable{};
  throw Error(ErrorKind::InvalidConfig, "energy_table", "unknown table '" + std::string(name) + "'");
}

void LayerDims::validate() const {
  auto need = [&](bool ok, const char* field, const char* what) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, name + "." + field, what);
  };
  for (auto [v, f] : {std::pair{B, "B"}, {S, "S"}, {H, "H"}, {In, "In"}, {Out, "Out"}, {b_w, "b_w"}, {b_a, "b_a"},
                      {b_a_high, "b_a_high"}, {b_a_low, "b_a_low"}, {gamma, "gamma"}, {T_high, "T_high"},
                      {T_low, "T_low"}}) {
    need(is_count(v), f, "must be a non-negative integer");
  }
  need(In == H, "In", "the modeled linear layer needs In == H");
  need(gamma <= H, "gamma", "must satisfy 0 <= gamma <= H");
  need(S_r_high >= 0 && S_r_high <= 1, "S_r_high", "rate must lie in [0, 1]");
  need(S_r_low >= 0 && S_r_low <= 1, "S_r_low", "rate must lie in [0, 1]");
}

EnergyMethod parse_energy_method(std::string_view name) {
  if (name == "typical") return EnergyMethod::Typical;
  if (name == "mixed") return EnergyMethod::Mixed;
  if (name == "spike") return EnergyMethod::Spike;
  throw Error(ErrorKind::InvalidArgument, "method", "unknown energy method '" + std::string(name) + "'");
}

std::string_view to_string(EnergyMethod method) {
  switch (method) {
    case EnergyMethod::Typical: return "typical";
    case EnergyMethod::Mixed: return "mixed";
    case EnergyMethod::Spike: return "spike";
  }
  return "?";
}

EnergyReport energy_typical(const LayerDims& d, const EnergyTable& t, MacUnit mac) {
  d.validate();
  const double compute = d.B * d.S * d.Out * d.H * t.mac(mac);
  const double read = d.In * d.Out * d.b_w * t.read_per_bit;
  const double move = d.B * d.S * d.H * d.b_a * t.move_per_bit;
  return make_report("typical", {{"compute", compute}, {"read", read}, {"move", move}}, compute, read + move);
}

EnergyReport energy_mixed(const LayerDims& d, const EnergyTable& t, const EnergySelectors& sel) {
  d.validate();
  const auto high = path_cost(d, t, d.gamma, t.mac(sel.mixed_high), d.b_a_high);
  const auto low = path_cost(d, t, d.H - d.gamma, t.mac(sel.mixed_low), d.b_a_low);
  auto terms = path_terms("high.", high);
  auto low_terms = path_terms("low.", low);
  terms.insert(terms.end(), low_terms.begin(), low_terms.end());
  return make_report("mixed", std::move(terms), high.compute + low.compute, high.data() + low.data());
}

EnergyReport energy_spike(const LayerDims& d, const EnergyTable& t, const EnergySelectors& sel) {
  d.validate();
  // Each position emits T * S_r spike events; every event is one accumulate
  // (plus MAC, as the cost model charges) and one single-bit move.
  const double events_high = d.T_high * d.S_r_high;
  const double events_low = d.T_low * d.S_r_low;
  const double op_high = t.acc_5 + (sel.spike_acc_only ? 0.0 : t.mac(sel.spike_high));
  const double op_low = t.acc_4 + (sel.spike_acc_only ? 0.0 : t.mac(sel.spike_low));
  const auto high = path_cost(d, t, d.gamma, events_high * op_high, events_high);
  const auto low = path_cost(d, t, d.H - d.gamma, events_low * op_low, events_low);
  auto terms = path_terms("high.", high);
  auto low_terms = path_terms("low.", low);
  terms.insert(terms.end(), low_terms.begin(), low_terms.end());
  return make_report("spike", std::move(terms), high.compute + low.compute, high.data() + low.data());
}

EnergyReport model_energy(const std::vector<LayerDims>& layers, const EnergyTable& t, EnergyMethod method,
                          const EnergySelectors& sel) {
  if (layers.empty()) throw Error(ErrorKind::InvalidArgument, "layers", "model_energy needs at least one layer");
  EnergyReport total;
  total.method = std::string(to_string(method));
  for (const auto& d : layers) {
    EnergyReport r;
    switch (method) {
      case EnergyMethod::Typical: r = energy_typical(d, t, sel.typical); break;
      case EnergyMethod::Mixed: r = energy_mixed(d, t, sel); break;
      case EnergyMethod::Spike: r = energy_spike(d, t, sel); break;
    }
    total.e_compute += r.e_compute;
    total.e_data += r.e_data;
    for (auto& term : r.breakdown) total.breakdown.push_back({d.name + "." + term.label, term.value});
  }
  total.e_total = total.e_compute + total.e_data;
  return total;
}

std::string EnergyReport::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["e_compute"] = e_compute;
  j["e_data"] = e_data;
  j["e_total"] = e_total;
  j["breakdown"] = nlohmann::ordered_json::array();
  for (const auto& term : breakdown) j["breakdown"].push_back({{"label", term.label}, {"value", term.value}});
  return j.dump(2) + "\n";
}

EnergyInput parse_energy_input(std::string_view text, const std::string& source) {
  EnergyInput input;
  std::vector<std::string> order;
  std::map<std::string, LayerDims> layers;
  for (const auto& kv : parse_key_values(text, source)) {
    if (kv.key == "energy_table") {
      input.table = EnergyTable::named(kv.value);
      continue;
    }
    if (double* f = table_field(input.table, kv.key)) {
      *f = parse_real(kv, source);
      continue;
    }
    std::string layer = "layer";
    std::string key = kv.key;
    if (auto dot = kv.key.rfind('.'); dot != std::string::npos) {
      layer = kv.key.substr(0, dot);
      key = kv.key.substr(dot + 1);
    }
    auto [it, fresh] = layers.try_emplace(layer);
    if (fresh) {
      it->second.name = layer;
      order.push_back(layer);
    }
    double* f = layer_field(it->second, key);
    if (!f) throw ParseError(source, kv.line, "unknown dims key '" + kv.key + "'");
    *f = parse_real(kv, source);
  }
  if (order.empty()) throw ParseError(source, 1, "no layer dims given");
  for (const auto& name : order) {
    auto& d = layers[name];
    d.validate();
    input.layers.push_back(d);
  }
  input.table.validate();
  return input;
}

EnergyInput load_energy_input(const std::filesystem::path& path) {
  return parse_energy_input(read_text_file(path), path.string());
}

}  // namespace spikequant
