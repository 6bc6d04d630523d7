#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "circa/field.hpp"
#include "circa/stochastic.hpp"

namespace circa {

enum class GateOp : std::uint8_t { kXor, kAnd, kNot };

/// One gate; out is the wire it defines. b is ignored for NOT.
struct Gate {
  GateOp op;
  std::uint32_t out;
  std::uint32_t a;
  std::uint32_t b;
};

/// Named ordered group of input wires, least significant bit first.
struct Bundle {
  std::string name;
  std::vector<std::uint32_t> wires;
};

/// Pure boolean circuit over wire ids. Wires 0 and 1 are the constants 0 and
/// 1; input wires and gate outputs are allocated after them. Gates are stored
/// in definition order, so the list is already a topological order.
struct BooleanCircuit {
  static constexpr std::uint32_t kConstZero = 0;
  static constexpr std::uint32_t kConstOne = 1;

  std::uint32_t num_wires = 2;
  std::vector<Gate> gates;
  std::vector<Bundle> inputs;
  std::vector<std::uint32_t> outputs;

  const Bundle* find_bundle(const std::string& name) const {
    for (const Bundle& b : inputs)
      if (b.name == name) return &b;
    return nullptr;
  }

  /// Enforces the structural invariants: every gate reads only wires defined
  /// earlier, defines a fresh wire, and input bundles are disjoint.
  void validate() const {
    std::vector<bool> defined(num_wires, false);
    defined[kConstZero] = defined[kConstOne] = true;
    std::set<std::uint32_t> input_wires;
    std::set<std::string> names;
    for (const Bundle& bundle : inputs) {
      if (!names.insert(bundle.name).second)
        throw std::invalid_argument("duplicate input bundle name: " + bundle.name);
      for (std::uint32_t w : bundle.wires) {
        if (w >= num_wires) throw std::invalid_argument("bundle wire out of range");
        if (!input_wires.insert(w).second)
          throw std::invalid_argument("input bundles overlap at wire " + std::to_string(w));
        if (defined[w]) throw std::invalid_argument("input wire collides with a constant");
        defined[w] = true;
      }
    }
    for (const Gate& g : gates) {
      if (g.a >= num_wires || !defined[g.a]) throw std::invalid_argument("gate reads undefined wire");
      if (g.op != GateOp::kNot && (g.b >= num_wires || !defined[g.b]))
        throw std::invalid_argument("gate reads undefined wire");
      if (g.out >= num_wires || defined[g.out])
        throw std::invalid_argument("gate output wire redefined");
      defined[g.out] = true;
    }
    for (std::uint32_t w : outputs)
      if (w >= num_wires || !defined[w]) throw std::invalid_argument("output wire undefined");
  }

  /// Debug dump. Grammar: version line; "const <zero> <one>"; one
  /// "input <name> <wire ids...>" per bundle; "output <wire ids...>"; then
  /// "GATE <id> <XOR|AND|NOT> <in1> [<in2>]" in topological order.
  std::string dump() const {
    std::ostringstream os;
    os << "# circa-circuit v1\n";
    os << "const " << kConstZero << ' ' << kConstOne << '\n';
    for (const Bundle& b : inputs) {
      os << "input " << b.name;
      for (std::uint32_t w : b.wires) os << ' ' << w;
      os << '\n';
    }
    os << "output";
    for (std::uint32_t w : outputs) os << ' ' << w;
    os << '\n';
    for (const Gate& g : gates) {
      os << "GATE " << g.out << ' ';
      switch (g.op) {
        case GateOp::kXor: os << "XOR " << g.a << ' ' << g.b; break;
        case GateOp::kAnd: os << "AND " << g.a << ' ' << g.b; break;
        case GateOp::kNot: os << "NOT " << g.a; break;
      }
      os << '\n';
    }
    return os.str();
  }
};

struct CircuitCost {
  std::uint64_t and_count = 0;
  std::uint64_t xor_count = 0;
  std::uint64_t not_count = 0;
  std::uint64_t estimated_garbled_bytes = 0;
};

/// Gate census plus the half-gates byte model: 2 ciphertexts per AND, free
/// XOR/NOT, one decode entry per output wire.
inline CircuitCost cost(const BooleanCircuit& c, std::size_t label_bytes = 16) {
  CircuitCost cc;
  for (const Gate& g : c.gates) {
    switch (g.op) {
      case GateOp::kXor: ++cc.xor_count; break;
      case GateOp::kAnd: ++cc.and_count; break;
      case GateOp::kNot: ++cc.not_count; break;
    }
  }
  cc.estimated_garbled_bytes = cc.and_count * 2 * label_bytes + c.outputs.size() * label_bytes;
  return cc;
}

/// Incremental circuit construction. All fragment helpers are pure gate
/// emission; they never touch bundles, so callers control input layout.
class CircuitBuilder {
 public:
  using Wires = std::vector<std::uint32_t>;

  struct Sum {
    Wires bits;
    std::uint32_t carry;  // carry-out for add, borrow-out for sub
  };

  CircuitBuilder() = default;

  std::uint32_t const_zero() const { return BooleanCircuit::kConstZero; }
  std::uint32_t const_one() const { return BooleanCircuit::kConstOne; }

  Wires input(const std::string& name, int width) {
    if (width < 1) throw std::invalid_argument("input bundle width must be >= 1");
    Wires w(width);
    for (int i = 0; i < width; ++i) w[i] = fresh();
    c_.inputs.push_back({name, w});
    return w;
  }

  std::uint32_t xor_gate(std::uint32_t a, std::uint32_t b) {
    std::uint32_t o = fresh();
    c_.gates.push_back({GateOp::kXor, o, a, b});
    return o;
  }

  std::uint32_t and_gate(std::uint32_t a, std::uint32_t b) {
    std::uint32_t o = fresh();
    c_.gates.push_back({GateOp::kAnd, o, a, b});
    return o;
  }

  std::uint32_t not_gate(std::uint32_t a) {
    std::uint32_t o = fresh();
    c_.gates.push_back({GateOp::kNot, o, a, 0});
    return o;
  }

  /// Constant bit pattern, LSB first, built purely from the constant wires.
  Wires constant(std::uint64_t value, int width) const {
    Wires w(width);
    for (int i = 0; i < width; ++i)
      w[i] = (value >> i) & 1 ? const_one() : const_zero();
    return w;
  }

  /// Ripple-carry adder, 1 AND per bit via c' = ((a^c) & (b^c)) ^ c.
  Sum ripple_add(const Wires& a, const Wires& b, std::uint32_t carry_in) {
    require_same_width(a, b);
    Sum s;
    s.bits.resize(a.size());
    std::uint32_t c = carry_in;
    for (std::size_t i = 0; i < a.size(); ++i) {
      std::uint32_t ac = xor_gate(a[i], c);
      std::uint32_t bc = xor_gate(b[i], c);
      s.bits[i] = xor_gate(ac, b[i]);
      c = xor_gate(and_gate(ac, bc), c);
    }
    s.carry = c;
    return s;
  }

  /// a - b as a + ~b + 1; carry field holds the borrow (1 iff a < b).
  Sum ripple_sub(const Wires& a, const Wires& b) {
    require_same_width(a, b);
    Wires nb(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) nb[i] = not_gate(b[i]);
    Sum s = ripple_add(a, nb, const_one());
    s.carry = not_gate(s.carry);
    return s;
  }

  /// [a <= b]: carry-out of b + ~a + 1. Carry chain only, 1 AND per bit.
  std::uint32_t cmp_le(const Wires& a, const Wires& b) {
    require_same_width(a, b);
    std::uint32_t c = const_one();
    for (std::size_t i = 0; i < a.size(); ++i) {
      std::uint32_t na = not_gate(a[i]);
      std::uint32_t xc = xor_gate(b[i], c);
      std::uint32_t yc = xor_gate(na, c);
      c = xor_gate(and_gate(xc, yc), c);
    }
    return c;
  }

  /// [a < b] = not [b <= a].
  std::uint32_t cmp_lt(const Wires& a, const Wires& b) { return not_gate(cmp_le(b, a)); }

  /// sel ? a : b, per bit b ^ (sel & (a^b)).
  Wires mux(std::uint32_t sel, const Wires& a, const Wires& b) {
    require_same_width(a, b);
    Wires out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      out[i] = xor_gate(b[i], and_gate(sel, xor_gate(a[i], b[i])));
    return out;
  }

  void set_outputs(const Wires& w) { c_.outputs = w; }

  BooleanCircuit build() {
    c_.validate();
    return std::move(c_);
  }

 private:
  std::uint32_t fresh() { return c_.num_wires++; }

  static void require_same_width(const Wires& a, const Wires& b) {
    if (a.size() != b.size() || a.empty())
      throw std::invalid_argument("fragment operand widths must match and be nonzero");
  }

  BooleanCircuit c_;
};

/// Standalone fragment circuits with inputs "a"/"b" (and "s" for the mux),
/// mainly for oracle tests against integer arithmetic.
inline BooleanCircuit build_adder(int m) {
  if (m < 1) throw std::invalid_argument("adder width must be >= 1");
  CircuitBuilder cb;
  auto a = cb.input("a", m);
  auto b = cb.input("b", m);
  CircuitBuilder::Sum s = cb.ripple_add(a, b, cb.const_zero());
  auto out = s.bits;
  out.push_back(s.carry);
  cb.set_outputs(out);
  return cb.build();
}

inline BooleanCircuit build_subtractor(int m) {
  if (m < 1) throw std::invalid_argument("subtractor width must be >= 1");
  CircuitBuilder cb;
  auto a = cb.input("a", m);
  auto b = cb.input("b", m);
  CircuitBuilder::Sum s = cb.ripple_sub(a, b);
  auto out = s.bits;
  out.push_back(s.carry);
  cb.set_outputs(out);
  return cb.build();
}

inline BooleanCircuit build_comparator(int m, bool strict) {
  if (m < 1) throw std::invalid_argument("comparator width must be >= 1");
  CircuitBuilder cb;
  auto a = cb.input("a", m);
  auto b = cb.input("b", m);
  cb.set_outputs({strict ? cb.cmp_lt(a, b) : cb.cmp_le(a, b)});
  return cb.build();
}

inline BooleanCircuit build_mux(int m) {
  if (m < 1) throw std::invalid_argument("mux width must be >= 1");
  CircuitBuilder cb;
  auto s = cb.input("s", 1);
  auto a = cb.input("a", m);
  auto b = cb.input("b", m);
  cb.set_outputs(cb.mux(s[0], a, b));
  return cb.build();
}

/// Which of the three ReLU/sign constructions to synthesize, at what width
/// and truncation.
struct SignCircuitSpec {
  int m = 0;
  int k = 0;
  FaultMode mode = FaultMode::kPosZero;
  ReluVariant variant = ReluVariant::kSignStoch;
};

namespace detail {

/// shares -> x mod p: full add with carry, subtract p at width m+1, select.
inline CircuitBuilder::Wires modular_add(CircuitBuilder& cb, const CircuitBuilder::Wires& a,
                                         const CircuitBuilder::Wires& b, std::uint64_t p) {
  int m = static_cast<int>(a.size());
  CircuitBuilder::Sum sum = cb.ripple_add(a, b, cb.const_zero());
  CircuitBuilder::Wires wide = sum.bits;
  wide.push_back(sum.carry);
  CircuitBuilder::Sum diff = cb.ripple_sub(wide, cb.constant(p, m + 1));
  CircuitBuilder::Wires kept(sum.bits.begin(), sum.bits.end());
  CircuitBuilder::Wires reduced(diff.bits.begin(), diff.bits.begin() + m);
  // borrow set means sum < p, keep the raw sum; otherwise take sum - p
  return cb.mux(diff.carry, kept, reduced);
}

/// value - r mod p, subtract-then-correct: on borrow add p back.
inline CircuitBuilder::Wires modular_sub(CircuitBuilder& cb, const CircuitBuilder::Wires& a,
                                         const CircuitBuilder::Wires& b, std::uint64_t p) {
  int m = static_cast<int>(a.size());
  CircuitBuilder::Sum diff = cb.ripple_sub(a, b);
  CircuitBuilder::Sum fixed = cb.ripple_add(diff.bits, cb.constant(p, m), cb.const_zero());
  return cb.mux(diff.carry, fixed.bits, diff.bits);
}

}  // namespace detail

/// Synthesize one ReLU/sign circuit.
///
/// ReluFull: x = <x>_s + <x>_c mod p; zero unless x < p/2; subtract the
/// output mask r mod p. Output is the server's next share ReLU(x) - r.
///
/// SignNaive: same exact x, compare against p/2, select 1-r or -r.
///
/// SignStoch: compare floor(<x>_s, k bits dropped) against floor(p - <x>_c)
/// the same way (<= for PosZero, < for NegPass), select -r on the negative
/// branch, 1-r otherwise. Only the top m-k wires of the two share bundles
/// feed gates.
inline BooleanCircuit synth(const SignCircuitSpec& spec, const FieldParams& fp) {
  if (spec.m != fp.m) throw std::invalid_argument("synth: spec width does not match field");
  if (spec.k < 0 || spec.k >= spec.m) throw std::invalid_argument("synth: k out of range");
  if (spec.variant != ReluVariant::kSignStoch && spec.k != 0)
    throw std::invalid_argument("synth: k must be 0 for this variant");
  const int m = spec.m;
  const std::uint64_t half = fp.half;
  CircuitBuilder cb;

  if (spec.variant == ReluVariant::kReluFull) {
    auto s_bits = cb.input("server_share_bits", m);
    auto c_bits = cb.input("client_share_bits", m);
    auto r_bits = cb.input("r_bits", m);
    auto x = detail::modular_add(cb, s_bits, c_bits, fp.p);
    std::uint32_t is_pos = cb.cmp_lt(x, cb.constant(half, m));
    auto relu = cb.mux(is_pos, x, cb.constant(0, m));
    cb.set_outputs(detail::modular_sub(cb, relu, r_bits, fp.p));
    return cb.build();
  }

  if (spec.variant == ReluVariant::kSignNaive) {
    auto s_bits = cb.input("server_share_bits", m);
    auto c_bits = cb.input("client_share_bits", m);
    auto neg_r = cb.input("neg_r_bits", m);
    auto one_minus_r = cb.input("one_minus_r_bits", m);
    auto x = detail::modular_add(cb, s_bits, c_bits, fp.p);
    std::uint32_t is_pos = cb.cmp_lt(x, cb.constant(half, m));
    cb.set_outputs(cb.mux(is_pos, one_minus_r, neg_r));
    return cb.build();
  }

  auto s_bits = cb.input("server_share_bits", m);
  auto t_bits = cb.input("client_neg_share_bits", m);
  auto neg_r = cb.input("neg_r_bits", m);
  auto one_minus_r = cb.input("one_minus_r_bits", m);
  CircuitBuilder::Wires s_hi(s_bits.begin() + spec.k, s_bits.end());
  CircuitBuilder::Wires t_hi(t_bits.begin() + spec.k, t_bits.end());
  std::uint32_t negative = spec.mode == FaultMode::kPosZero ? cb.cmp_le(s_hi, t_hi)
                                                            : cb.cmp_lt(s_hi, t_hi);
  cb.set_outputs(cb.mux(negative, neg_r, one_minus_r));
  return cb.build();
}

/// Topological reference evaluation; inputs keyed by bundle name, LSB first.
inline std::vector<bool> eval_plain(const BooleanCircuit& c,
                                    const std::map<std::string, std::vector<bool>>& inputs) {
  std::vector<std::uint8_t> val(c.num_wires, 0);
  val[BooleanCircuit::kConstOne] = 1;
  for (const Bundle& b : c.inputs) {
    auto it = inputs.find(b.name);
    if (it == inputs.end()) throw std::invalid_argument("missing input bundle: " + b.name);
    if (it->second.size() != b.wires.size())
      throw std::invalid_argument("input bundle width mismatch: " + b.name);
    for (std::size_t i = 0; i < b.wires.size(); ++i) val[b.wires[i]] = it->second[i] ? 1 : 0;
  }
  if (inputs.size() != c.inputs.size())
    throw std::invalid_argument("unexpected extra input bundles");
  for (const Gate& g : c.gates) {
    switch (g.op) {
      case GateOp::kXor: val[g.out] = val[g.a] ^ val[g.b]; break;
      case GateOp::kAnd: val[g.out] = val[g.a] & val[g.b]; break;
      case GateOp::kNot: val[g.out] = val[g.a] ^ 1; break;
    }
  }
  std::vector<bool> out(c.outputs.size());
  for (std::size_t i = 0; i < c.outputs.size(); ++i) out[i] = val[c.outputs[i]] != 0;
  return out;
}

/// uint64 <-> LSB-first bit vector helpers for bundle assignment.
inline std::vector<bool> to_bits(std::uint64_t v, int width) {
  std::vector<bool> b(width);
  for (int i = 0; i < width; ++i) b[i] = (v >> i) & 1;
  return b;
}

inline std::uint64_t from_bits(const std::vector<bool>& bits) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) v |= 1ULL << i;
  return v;
}

}  // namespace circa
