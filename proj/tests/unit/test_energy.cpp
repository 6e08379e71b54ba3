#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "spikequant/energy.hpp"
#include "spikequant/error.hpp"

using namespace spikequant;

namespace {

LayerDims unit_dims() {
  LayerDims d;
  d.B = d.S = d.H = d.In = d.Out = 1;
  return d;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST(Energy, TypicalWorkedExample) {
  const auto r = energy_typical(unit_dims(), EnergyTable{});
  EXPECT_DOUBLE_EQ(r.e_compute, 8.66);
  EXPECT_DOUBLE_EQ(r.e_data, 68.32);
  EXPECT_DOUBLE_EQ(r.e_total, 76.98);
  EXPECT_EQ(r.e_total, r.e_compute + r.e_data);
}

TEST(Energy, MixedWorkedExample) {
  // B = S = Out = 1, H = 2, gamma = 1: one channel on each path.
  LayerDims d = unit_dims();
  d.H = d.In = 2;
  d.gamma = 1;
  const auto r = energy_mixed(d, EnergyTable{});
  EXPECT_NEAR(r.e_compute, 10.94 + 8.66, 1e-12);
  EXPECT_NEAR(r.e_data, (4 * 6.04 + 8 * 11.04) + (4 * 6.04 + 4 * 11.04), 1e-12);
}

TEST(Energy, MatchesFrozenRationalOracle) {
  std::ifstream in(std::string(SPIKEQUANT_TEST_DATA_DIR) + "/energy_cases.json");
  ASSERT_TRUE(in);
  const auto cases = nlohmann::json::parse(in).at("cases");
  ASSERT_EQ(cases.size(), 50u);
  const EnergyTable t;
  for (const auto& c : cases) {
    const auto& j = c.at("dims");
    LayerDims d;
    d.B = j.at("B");
    d.S = j.at("S");
    d.H = d.In = j.at("H");
    d.Out = j.at("Out");
    d.b_w = j.at("b_w");
    d.b_a = j.at("b_a");
    d.b_a_high = j.at("b_a_high");
    d.b_a_low = j.at("b_a_low");
    d.gamma = j.at("gamma");
    d.T_high = j.at("T_high");
    d.T_low = j.at("T_low");
    d.S_r_high = j.at("S_r_high");
    d.S_r_low = j.at("S_r_low");
    const std::pair<const char*, EnergyReport> reports[] = {
        {"typical", energy_typical(d, t)}, {"mixed", energy_mixed(d, t)}, {"spike", energy_spike(d, t)}};
    for (const auto& [name, r] : reports) {
      const auto& want = c.at(name);
      EXPECT_LE(rel(r.e_compute, want.at("e_compute")), 1e-12) << name;
      EXPECT_LE(rel(r.e_data, want.at("e_data")), 1e-12) << name;
      EXPECT_LE(rel(r.e_total, want.at("e_total")), 1e-12) << name;
    }
  }
}

TEST(Energy, DegenerateGammaMatchesTypical) {
  LayerDims d;
  d.B = 2, d.S = 16, d.H = d.In = 128, d.Out = 96, d.gamma = 0;
  const EnergyTable t;
  const auto low = energy_mixed(d, t);
  const auto typ = energy_typical(d, t, MacUnit::Mac4_4_32);
  EXPECT_EQ(low.e_compute, typ.e_compute);
  EXPECT_EQ(low.e_data, typ.e_data);

  d.gamma = d.H;
  LayerDims high = d;
  high.b_a = d.b_a_high;
  const auto all_high = energy_mixed(d, t);
  const auto typ_high = energy_typical(high, t, MacUnit::Mac4_8_32);
  EXPECT_EQ(all_high.e_compute, typ_high.e_compute);
  EXPECT_EQ(all_high.e_data, typ_high.e_data);
}

TEST(Energy, SpikeAtOneEventPerPositionIsSubstitutedTypical) {
  LayerDims d;
  d.B = 3, d.S = 8, d.H = d.In = 64, d.Out = 32, d.gamma = 0;
  d.T_low = 4, d.S_r_low = 0.25;
  EnergyTable t;
  const auto s = energy_spike(d, t);
  // Typical with E_MAC -> E_ACC + E_MAC and b_a -> 1.
  EnergyTable sub = t;
  sub.mac_4_4_32 = t.acc_4 + t.mac_4_4_32;
  LayerDims one_bit = d;
  one_bit.b_a = 1;
  const auto q = energy_typical(one_bit, sub);
  EXPECT_EQ(s.e_compute, q.e_compute);
  EXPECT_EQ(s.e_data, q.e_data);
}

TEST(Energy, ZeroRatesLeaveOnlyWeightReads) {
  LayerDims d;
  d.B = 2, d.S = 4, d.H = d.In = 16, d.Out = 8, d.gamma = 3;
  d.S_r_high = d.S_r_low = 0;
  const auto r = energy_spike(d, EnergyTable{});
  EXPECT_EQ(r.e_compute, 0.0);
  EXPECT_DOUBLE_EQ(r.e_data, 16 * 8 * 4 * 6.04);
}

TEST(Energy, LinearityAndAggregation) {
  LayerDims d;
  d.B = 1, d.S = 8, d.H = d.In = 32, d.Out = 16, d.gamma = 2;
  const EnergyTable t;
  LayerDims twice = d;
  twice.B = 2;
  const auto a = energy_typical(d, t);
  const auto b = energy_typical(twice, t);
  EXPECT_EQ(b.e_compute, 2 * a.e_compute);
  EXPECT_EQ(b.breakdown[1].value, a.breakdown[1].value);  // weight reads do not scale with B
  EXPECT_EQ(b.breakdown[2].value, 2 * a.breakdown[2].value);

  const auto one = model_energy({d}, t, EnergyMethod::Spike);
  const auto two = model_energy({d, d}, t, EnergyMethod::Spike);
  EXPECT_EQ(one.e_total, energy_spike(d, t).e_total);
  EXPECT_EQ(two.e_total, 2 * one.e_total);
  EXPECT_EQ(two.breakdown.size(), 12u);
  EXPECT_THROW(model_energy({}, t, EnergyMethod::Typical), Error);
}

TEST(Energy, FullRateSpikingDoesNotBeatMixedOnToyDims) {
  // With every code nonzero each position pays (E_ACC + E_MAC) per output,
  // which exceeds E_MAC; savings then come only from the 1-bit moves.
  LayerDims d;
  d.B = 1, d.S = 8, d.H = d.In = 128, d.Out = 128, d.gamma = 4;
  const EnergyTable t;
  EXPECT_GT(energy_spike(d, t).e_total, energy_mixed(d, t).e_total);
  d.S_r_low = 0.5 / 15;
  EXPECT_LT(energy_spike(d, t).e_total, energy_mixed(d, t).e_total);
}

TEST(Energy, DimsValidation) {
  LayerDims d;
  d.H = 4, d.In = 8;
  EXPECT_THROW(d.validate(), Error);
  d.In = 4, d.gamma = 5;
  EXPECT_THROW(d.validate(), Error);
  d.gamma = 1, d.S_r_low = 1.5;
  EXPECT_THROW(d.validate(), Error);
  d.S_r_low = 0.1, d.B = 1.5;
  EXPECT_THROW(d.validate(), Error);
}

TEST(Energy, DimsFileGrammar) {
  const auto in = parse_energy_input("B = 1\nS = 8\nH = 128\nIn = 128\nOut = 128\ngamma = 4\nmove_per_bit = 10\n");
  ASSERT_EQ(in.layers.size(), 1u);
  EXPECT_EQ(in.layers[0].Out, 128);
  EXPECT_EQ(in.table.move_per_bit, 10.0);

  const auto multi = parse_energy_input("q.H = 64\nq.In = 64\nk.H = 32\nk.In = 32\n");
  ASSERT_EQ(multi.layers.size(), 2u);
  EXPECT_EQ(multi.layers[0].name, "q");
  EXPECT_EQ(multi.layers[1].H, 32);

  try {
    parse_energy_input("H = 4\nIn = 4\nwidth = 3\n", "dims.cfg");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(Energy, ReportJsonKeys) {
  const auto j = nlohmann::json::parse(energy_typical(unit_dims(), EnergyTable{}).to_json());
  for (const char* k : {"method", "e_compute", "e_data", "e_total", "breakdown"}) EXPECT_TRUE(j.contains(k)) << k;
}
