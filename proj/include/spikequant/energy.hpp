// energy.hpp - closed-form energy of one linear transform under typical,
// mixed-precision and TTFS spiking quantization. Energies are unitless ratios
// normalised to a 4-bit accumulate = 1.00.
//
//   E = E_compute + E_data
//   typical:  B S Out H E_MAC                     + In Out b_w E_read + B S H b_a E_move
//   mixed:    high path over gamma channels       + low path over (H - gamma) channels
//   spike:    B S Out n T S_r (E_ACC + E_MAC)     + n Out b_w E_read  + B S n T S_r E_move
//             per path, n = gamma (high) or H - gamma (low)
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace spikequant {

enum class MacUnit { Mac4_4_32, Mac4_5_32, Mac4_8_32, Mac1_16_32, Mac2_16_32, Mac3_16_32 };

MacUnit parse_mac_unit(std::string_view name);
std::string_view to_string(MacUnit unit);

struct EnergyTable {
  double acc_4 = 1.00;
  double acc_5 = 1.18;
  double mac_4_4_32 = 8.66;
  double mac_4_5_32 = 9.24;
  double mac_4_8_32 = 10.94;
  double mac_1_16_32 = 10.89;
  double mac_2_16_32 = 11.46;
  double mac_3_16_32 = 13.28;
  double read_per_bit = 6.04;
  double move_per_bit = 11.04;

  double mac(MacUnit unit) const;
  void validate() const;

  static EnergyTable named(std::string_view name);
};

// Which units each path charges. Defaults: typical W4A4 -> 4-4-32, mixed
// high path -> 4-8-32, spiking salient path -> ACC5 + MAC 4-5-32, spiking
// normal path -> ACC4 + MAC 4-4-32.
struct EnergySelectors {
  MacUnit typical = MacUnit::Mac4_4_32;
  MacUnit mixed_high = MacUnit::Mac4_8_32;
  MacUnit mixed_low = MacUnit::Mac4_4_32;
  MacUnit spike_high = MacUnit::Mac4_5_32;
  MacUnit spike_low = MacUnit::Mac4_4_32;
  bool spike_acc_only = false;  // drop the MAC term inside (E_ACC + E_MAC)
};

struct LayerDims {
  std::string name = "layer";
  double B = 1, S = 1, H = 1, In = 1, Out = 1;
  double b_w = 4, b_a = 4, b_a_high = 8, b_a_low = 4;
  double gamma = 0;
  double T_high = 31, T_low = 15;
  double S_r_high = 1.0 / 31, S_r_low = 1.0 / 15;

  void validate() const;
};

struct EnergyTerm {
  std::string label;
  double value = 0.0;
};

struct EnergyReport {
  std::string method;
  double e_compute = 0.0;
  double e_data = 0.0;
  double e_total = 0.0;
  std::vector<EnergyTerm> breakdown;

  std::string to_json() const;
};

enum class EnergyMethod { Typical, Mixed, Spike };

EnergyMethod parse_energy_method(std::string_view name);
std::string_view to_string(EnergyMethod method);

EnergyReport energy_typical(const LayerDims& d, const EnergyTable& t, MacUnit mac = MacUnit::Mac4_4_32);
EnergyReport energy_mixed(const LayerDims& d, const EnergyTable& t, const EnergySelectors& sel = {});
EnergyReport energy_spike(const LayerDims& d, const EnergyTable& t, const EnergySelectors& sel = {});

// Sum over layers; per-layer terms are kept in the breakdown with the layer
// name as a prefix.
EnergyReport model_energy(const std::vector<LayerDims>& layers, const EnergyTable& t, EnergyMethod method,
                          const EnergySelectors& sel = {});

// Dims file: the shared key-value grammar. Unprefixed keys describe one layer;
// `<name>.<key>` lines describe several. Keys matching EnergyTable fields
// override the table.
struct EnergyInput {
  std::vector<LayerDims> layers;
  EnergyTable table;
};

EnergyInput parse_energy_input(std::string_view text, const std::string& source = "<dims>");
EnergyInput load_energy_input(const std::filesystem::path& path);

}  // namespace spikequant
