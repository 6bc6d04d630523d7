#include "circa/garble.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <vector>

namespace {

using circa::BooleanCircuit;
using circa::build_adder;
using circa::build_comparator;
using circa::build_mux;
using circa::CircuitBuilder;
using circa::cost;
using circa::decode_outputs;
using circa::eval;
using circa::eval_plain;
using circa::FaultMode;
using circa::FieldParams;
using circa::from_bits;
using circa::garble;
using circa::GarbleResult;
using circa::IntegrityError;
using circa::ReluVariant;
using circa::select_label;
using circa::synth;
using circa::to_bits;
using circa::WireLabel;

using ActiveInputs = std::vector<std::pair<std::uint32_t, WireLabel>>;

std::shared_ptr<const BooleanCircuit> shared(BooleanCircuit c) {
  return std::make_shared<const BooleanCircuit>(std::move(c));
}

/// Active labels for a full assignment: constants plus every input bundle.
ActiveInputs label_assignment(const GarbleResult& g,
                              const std::map<std::string, std::vector<bool>>& values) {
  ActiveInputs act;
  act.push_back({BooleanCircuit::kConstZero, g.const_zero_label});
  act.push_back({BooleanCircuit::kConstOne, g.const_one_label});
  for (const auto& [name, bits] : values) {
    const auto& pairs = g.input_labels.at(name);
    const auto& wires = g.gc.circuit->find_bundle(name)->wires;
    for (std::size_t i = 0; i < bits.size(); ++i)
      act.push_back({wires[i], select_label(pairs[i], bits[i])});
  }
  return act;
}

std::vector<bool> garbled_run(const GarbleResult& g,
                              const std::map<std::string, std::vector<bool>>& values) {
  return decode_outputs(eval(g.gc, label_assignment(g, values)), g.gc.decode_map);
}

TEST(Garble, XorOnlyCircuitHasNoTables) {
  CircuitBuilder cb;
  auto a = cb.input("a", 4);
  cb.set_outputs({cb.xor_gate(a[0], a[1]), cb.xor_gate(a[2], a[3])});
  GarbleResult g = garble(shared(cb.build()), 1);
  EXPECT_TRUE(g.gc.tables.empty());
  EXPECT_EQ(serialize_garbled(g.gc).size(), 2u * 16);
}

TEST(Garble, DeterministicPerSeed) {
  auto c = shared(build_adder(4));
  GarbleResult g1 = garble(c, 77);
  GarbleResult g2 = garble(c, 77);
  GarbleResult g3 = garble(c, 78);
  EXPECT_EQ(serialize_garbled(g1.gc), serialize_garbled(g2.gc));
  EXPECT_EQ(g1.input_labels.at("a")[0].l0, g2.input_labels.at("a")[0].l0);
  EXPECT_EQ(g1.gc.seed_commitment, g2.gc.seed_commitment);
  EXPECT_NE(serialize_garbled(g1.gc), serialize_garbled(g3.gc));
  EXPECT_NE(g1.gc.seed_commitment, g3.gc.seed_commitment);
}

TEST(Garble, IdentityCircuitPassesLabelsThrough) {
  CircuitBuilder cb;
  auto a = cb.input("a", 3);
  cb.set_outputs(a);
  GarbleResult g = garble(shared(cb.build()), 5);
  auto bits = std::vector<bool>{true, false, true};
  auto out = eval(g.gc, label_assignment(g, {{"a", bits}}));
  for (int i = 0; i < 3; ++i)
    EXPECT_EQ(out[i], select_label(g.input_labels.at("a")[i], bits[i]));
  EXPECT_EQ(garbled_run(g, {{"a", bits}}), bits);
}

TEST(Garble, RoundTripExhaustiveFragments) {
  struct Case {
    BooleanCircuit c;
    std::vector<std::pair<std::string, int>> bundles;
  };
  std::vector<Case> cases;
  cases.push_back({build_adder(3), {{"a", 3}, {"b", 3}}});
  cases.push_back({build_comparator(4, false), {{"a", 4}, {"b", 4}}});
  cases.push_back({build_comparator(4, true), {{"a", 4}, {"b", 4}}});
  cases.push_back({build_mux(3), {{"s", 1}, {"a", 3}, {"b", 3}}});
  for (auto& cs : cases) {
    int total_bits = 0;
    for (auto& [_, w] : cs.bundles) total_bits += w;
    auto sc = shared(std::move(cs.c));
    GarbleResult g = garble(sc, 123);
    for (std::uint64_t v = 0; v < (1ULL << total_bits); ++v) {
      std::map<std::string, std::vector<bool>> in;
      int off = 0;
      for (auto& [name, w] : cs.bundles) {
        in[name] = to_bits(v >> off, w);
        off += w;
      }
      ASSERT_EQ(garbled_run(g, in), eval_plain(*sc, in));
    }
  }
}

BooleanCircuit random_circuit(std::mt19937_64& gen, int width, int num_gates) {
  CircuitBuilder cb;
  auto in = cb.input("a", width);
  std::vector<std::uint32_t> pool = in;
  pool.push_back(cb.const_zero());
  pool.push_back(cb.const_one());
  for (int i = 0; i < num_gates; ++i) {
    std::uint32_t x = pool[gen() % pool.size()];
    std::uint32_t y = pool[gen() % pool.size()];
    switch (gen() % 3) {
      case 0: pool.push_back(cb.xor_gate(x, y)); break;
      case 1: pool.push_back(cb.and_gate(x, y)); break;
      default: pool.push_back(cb.not_gate(x)); break;
    }
  }
  std::vector<std::uint32_t> outs;
  int n_out = 1 + static_cast<int>(gen() % 8);
  for (int i = 0; i < n_out; ++i) outs.push_back(pool[gen() % pool.size()]);
  cb.set_outputs(outs);
  return cb.build();
}

TEST(Garble, RandomCircuitsAgreeWithPlainEval) {
  std::mt19937_64 gen(909);
  for (int trial = 0; trial < 200; ++trial) {
    int width = 1 + static_cast<int>(gen() % 10);
    auto sc = shared(random_circuit(gen, width, 1 + static_cast<int>(gen() % 64)));
    GarbleResult g = garble(sc, gen());
    for (int rep = 0; rep < 20; ++rep) {
      std::map<std::string, std::vector<bool>> in{{"a", to_bits(gen(), width)}};
      ASSERT_EQ(garbled_run(g, in), eval_plain(*sc, in)) << "trial " << trial;
    }
  }
}

TEST(Garble, SynthesizedVariantsRoundTrip) {
  FieldParams fp = FieldParams::make(509);
  std::mt19937_64 gen(910);
  for (ReluVariant variant :
       {ReluVariant::kReluFull, ReluVariant::kSignNaive, ReluVariant::kSignStoch}) {
    int k = variant == ReluVariant::kSignStoch ? 2 : 0;
    auto sc = shared(synth({fp.m, k, FaultMode::kPosZero, variant}, fp));
    GarbleResult g = garble(sc, 4242);
    for (std::uint64_t x = 0; x < fp.p; x += 7) {
      std::map<std::string, std::vector<bool>> in;
      std::uint64_t xc = gen() % fp.p;
      std::uint64_t r = gen() % fp.p;
      if (variant == ReluVariant::kSignStoch) {
        std::uint64_t t = gen() % fp.p;
        in["server_share_bits"] = to_bits((x + t) % fp.p, fp.m);
        in["client_neg_share_bits"] = to_bits(t, fp.m);
      } else {
        in["server_share_bits"] = to_bits((x + fp.p - xc) % fp.p, fp.m);
        in["client_share_bits"] = to_bits(xc, fp.m);
      }
      if (variant == ReluVariant::kReluFull) {
        in["r_bits"] = to_bits(r, fp.m);
      } else {
        in["neg_r_bits"] = to_bits((fp.p - r) % fp.p, fp.m);
        in["one_minus_r_bits"] = to_bits((1 + fp.p - r) % fp.p, fp.m);
      }
      ASSERT_EQ(garbled_run(g, in), eval_plain(*sc, in))
          << relu_variant_name(variant) << " x=" << x;
    }
  }
}

TEST(Garble, TamperedOutputLabelFailsDecode) {
  auto sc = shared(build_adder(4));
  GarbleResult g = garble(sc, 55);
  auto in = std::map<std::string, std::vector<bool>>{{"a", to_bits(3, 4)}, {"b", to_bits(9, 4)}};
  auto labels = eval(g.gc, label_assignment(g, in));
  labels[2].b[5] ^= 0x40;
  EXPECT_THROW(decode_outputs(labels, g.gc.decode_map), IntegrityError);
}

TEST(Garble, TamperedTableFailsDecode) {
  // A flipped ciphertext byte only enters evaluation when the active label's
  // color selects that table row, so sweep all inputs: every affected input
  // must be detected, and at least one input must be affected.
  auto sc = shared(build_adder(4));
  GarbleResult g = garble(sc, 56);
  g.gc.tables[1].te.b[0] ^= 0x80;
  g.gc.tables[1].tg.b[0] ^= 0x80;
  int detected = 0;
  for (std::uint64_t v = 0; v < 256; ++v) {
    auto in = std::map<std::string, std::vector<bool>>{{"a", to_bits(v & 15, 4)},
                                                       {"b", to_bits(v >> 4, 4)}};
    try {
      auto bits = decode_outputs(eval(g.gc, label_assignment(g, in)), g.gc.decode_map);
      EXPECT_EQ(bits, eval_plain(*sc, in)) << "undetected corruption at v=" << v;
    } catch (const IntegrityError&) {
      ++detected;
    }
  }
  EXPECT_GT(detected, 0);
}

TEST(Garble, DecodeIsBijectionPerWire) {
  CircuitBuilder cb;
  auto a = cb.input("a", 2);
  cb.set_outputs({cb.and_gate(a[0], a[1])});
  GarbleResult g = garble(shared(cb.build()), 77);
  std::map<bool, WireLabel> seen;
  for (int v = 0; v < 4; ++v) {
    auto in = std::map<std::string, std::vector<bool>>{{"a", to_bits(v, 2)}};
    auto labels = eval(g.gc, label_assignment(g, in));
    bool bit = decode_outputs(labels, g.gc.decode_map)[0];
    EXPECT_EQ(bit, v == 3);
    auto it = seen.find(bit);
    if (it == seen.end())
      seen[bit] = labels[0];
    else
      EXPECT_EQ(it->second, labels[0]);
  }
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_NE(seen[false], seen[true]);
}

TEST(Garble, SerializedSizeMatchesCostModel) {
  std::mt19937_64 gen(911);
  for (int trial = 0; trial < 50; ++trial) {
    auto sc = shared(random_circuit(gen, 6, 40));
    GarbleResult g = garble(sc, gen());
    auto cc = cost(*sc);
    EXPECT_EQ(serialize_garbled(g.gc, false).size(), cc.and_count * 32);
    EXPECT_EQ(serialize_garbled(g.gc, true).size(), cc.estimated_garbled_bytes);
  }
}

TEST(Garble, SeedAvalancheOnTables) {
  FieldParams fp = FieldParams::make(509);
  auto sc = shared(synth({fp.m, 0, FaultMode::kPosZero, ReluVariant::kSignNaive}, fp));
  std::uint64_t base_seed = 0xFEEDFACE;
  auto base = serialize_garbled(garble(sc, base_seed).gc, false);
  double total_frac = 0;
  const int kFlips = 16;
  for (int bit = 0; bit < kFlips; ++bit) {
    auto other = serialize_garbled(garble(sc, base_seed ^ (1ULL << (4 * bit))).gc, false);
    ASSERT_EQ(base.size(), other.size());
    std::uint64_t diff = 0;
    for (std::size_t i = 0; i < base.size(); ++i)
      diff += __builtin_popcount(base[i] ^ other[i]);
    total_frac += static_cast<double>(diff) / (8.0 * base.size());
  }
  EXPECT_GE(total_frac / kFlips, 0.45);
}

TEST(Garble, EvalInputErrors) {
  auto sc = shared(build_adder(4));
  GarbleResult g = garble(sc, 12);
  ActiveInputs incomplete{{BooleanCircuit::kConstZero, g.const_zero_label}};
  EXPECT_THROW(eval(g.gc, incomplete), std::invalid_argument);
  EXPECT_THROW(decode_outputs({WireLabel{}}, g.gc.decode_map), std::invalid_argument);
}

TEST(Garble, ParseTablesRoundTrip) {
  auto sc = shared(build_adder(4));
  GarbleResult g = garble(sc, 13);
  auto bytes = serialize_garbled(g.gc, false);
  auto tables = circa::parse_tables(bytes.data(), bytes.size());
  ASSERT_EQ(tables.size(), g.gc.tables.size());
  for (std::size_t i = 0; i < tables.size(); ++i) {
    EXPECT_EQ(tables[i].tg, g.gc.tables[i].tg);
    EXPECT_EQ(tables[i].te, g.gc.tables[i].te);
  }
  EXPECT_THROW(circa::parse_tables(bytes.data(), bytes.size() - 1), circa::ProtocolError);
}

}  // namespace
