#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "circa/circuit.hpp"
#include "circa/errors.hpp"
#include "circa/rng.hpp"

namespace circa {

/// 128-bit wire token. The low bit of byte 0 is the point-and-permute color.
struct WireLabel {
  std::array<std::uint8_t, 16> b{};

  bool color() const { return b[0] & 1; }

  WireLabel& operator^=(const WireLabel& o) {
    for (int i = 0; i < 16; ++i) b[i] ^= o.b[i];
    return *this;
  }

  friend WireLabel operator^(WireLabel a, const WireLabel& o) { return a ^= o; }
  friend bool operator==(const WireLabel&, const WireLabel&) = default;
};

namespace detail {

/// Fixed-key AES-128 used as the garbling PRF in a Davies-Meyer shape:
/// H(x, tweak) = AES(x ^ T) ^ (x ^ T). The key is a public constant; security
/// rests on the wire labels, per the usual free-XOR modeling.
class FixedKeyAes {
 public:
  static void encrypt_block(const std::uint8_t in[16], std::uint8_t out[16]) {
    thread_local CtxHolder holder;
    int outl = 0;
    if (EVP_EncryptUpdate(holder.ctx, out, &outl, in, 16) != 1 || outl != 16)
      throw std::runtime_error("AES block encryption failed");
  }

 private:
  struct CtxHolder {
    EVP_CIPHER_CTX* ctx;
    CtxHolder() {
      static const std::uint8_t kKey[16] = {'c', 'i', 'r', 'c', 'a', '-', 'g', 'c',
                                            '-', 'p', 'r', 'f', '-', 'v', '1', 0};
      ctx = EVP_CIPHER_CTX_new();
      if (ctx == nullptr || EVP_EncryptInit_ex(ctx, EVP_aes_128_ecb(), nullptr, kKey, nullptr) != 1)
        throw std::runtime_error("AES context init failed");
      EVP_CIPHER_CTX_set_padding(ctx, 0);
    }
    ~CtxHolder() { EVP_CIPHER_CTX_free(ctx); }
  };
};

/// Tweak domains keep gate-row hashes and output-decode hashes disjoint.
constexpr std::uint8_t kTweakGate = 0x00;
constexpr std::uint8_t kTweakDecode = 0x01;

inline WireLabel hash_label(const WireLabel& x, std::uint64_t index, std::uint8_t domain) {
  WireLabel t = x;
  for (int i = 0; i < 8; ++i) t.b[i] ^= static_cast<std::uint8_t>(index >> (8 * i));
  t.b[8] ^= domain;
  WireLabel out;
  FixedKeyAes::encrypt_block(t.b.data(), out.b.data());
  return out ^ t;
}

inline WireLabel random_label(SplitMix64& rng) {
  WireLabel l;
  std::uint64_t lo = rng.next(), hi = rng.next();
  std::memcpy(l.b.data(), &lo, 8);
  std::memcpy(l.b.data() + 8, &hi, 8);
  return l;
}

}  // namespace detail

/// The two half-gate ciphertexts of one AND gate.
struct GarbledGate {
  WireLabel tg;
  WireLabel te;
};

/// Truncated hashes of an output wire's two valid labels. Whoever holds this
/// can translate labels to bits and detect forged labels; the evaluator never
/// sees it.
struct OutputDecodeEntry {
  std::array<std::uint8_t, 8> h0{};
  std::array<std::uint8_t, 8> h1{};
};

struct GarbledCircuit {
  std::shared_ptr<const BooleanCircuit> circuit;
  std::vector<GarbledGate> tables;          // one entry per AND gate, in gate order
  std::vector<OutputDecodeEntry> decode_map;  // empty on the evaluator side
  std::uint64_t seed_commitment = 0;
};

struct InputLabelPair {
  WireLabel l0;
  WireLabel l1;
};

inline const WireLabel& select_label(const InputLabelPair& p, bool bit) { return bit ? p.l1 : p.l0; }

/// Everything garble() hands back: the circuit material, both labels of every
/// input wire (keyed by bundle), and the active labels of the two constant
/// wires, which travel to the evaluator like input labels.
struct GarbleResult {
  GarbledCircuit gc;
  std::map<std::string, std::vector<InputLabelPair>> input_labels;
  WireLabel const_zero_label;
  WireLabel const_one_label;
};

inline GarbleResult garble(std::shared_ptr<const BooleanCircuit> circuit, std::uint64_t seed) {
  const BooleanCircuit& c = *circuit;
  c.validate();
  SplitMix64 rng(mix_seed(seed, 0x6A4B1EULL));

  WireLabel delta = detail::random_label(rng);
  delta.b[0] |= 1;  // color bit of delta is always set, so colors of L0/L1 differ

  std::vector<WireLabel> false_label(c.num_wires);
  false_label[BooleanCircuit::kConstZero] = detail::random_label(rng);
  false_label[BooleanCircuit::kConstOne] = detail::random_label(rng);
  for (const Bundle& bundle : c.inputs)
    for (std::uint32_t w : bundle.wires) false_label[w] = detail::random_label(rng);

  GarbleResult res;
  res.gc.circuit = circuit;
  res.gc.seed_commitment = mix_seed(seed, 0xC0331ULL);
  std::uint64_t j = 0;
  for (const Gate& g : c.gates) {
    switch (g.op) {
      case GateOp::kXor:
        false_label[g.out] = false_label[g.a] ^ false_label[g.b];
        break;
      case GateOp::kNot:
        false_label[g.out] = false_label[g.a] ^ delta;
        break;
      case GateOp::kAnd: {
        const WireLabel& a0 = false_label[g.a];
        const WireLabel& b0 = false_label[g.b];
        WireLabel a1 = a0 ^ delta;
        WireLabel b1 = b0 ^ delta;
        WireLabel ha0 = detail::hash_label(a0, 2 * j, detail::kTweakGate);
        WireLabel ha1 = detail::hash_label(a1, 2 * j, detail::kTweakGate);
        WireLabel hb0 = detail::hash_label(b0, 2 * j + 1, detail::kTweakGate);
        WireLabel hb1 = detail::hash_label(b1, 2 * j + 1, detail::kTweakGate);
        GarbledGate gg;
        gg.tg = ha0 ^ ha1;
        if (b0.color()) gg.tg ^= delta;
        WireLabel wg0 = ha0;
        if (a0.color()) wg0 ^= gg.tg;
        gg.te = hb0 ^ hb1 ^ a0;
        WireLabel we0 = hb0;
        if (b0.color()) we0 ^= gg.te ^ a0;
        false_label[g.out] = wg0 ^ we0;
        res.gc.tables.push_back(gg);
        ++j;
        break;
      }
    }
  }

  for (std::size_t i = 0; i < c.outputs.size(); ++i) {
    const WireLabel& l0 = false_label[c.outputs[i]];
    WireLabel l1 = l0 ^ delta;
    WireLabel h0 = detail::hash_label(l0, i, detail::kTweakDecode);
    WireLabel h1 = detail::hash_label(l1, i, detail::kTweakDecode);
    OutputDecodeEntry e;
    std::memcpy(e.h0.data(), h0.b.data(), 8);
    std::memcpy(e.h1.data(), h1.b.data(), 8);
    res.gc.decode_map.push_back(e);
  }

  for (const Bundle& bundle : c.inputs) {
    std::vector<InputLabelPair>& pairs = res.input_labels[bundle.name];
    pairs.reserve(bundle.wires.size());
    for (std::uint32_t w : bundle.wires)
      pairs.push_back({false_label[w], false_label[w] ^ delta});
  }
  res.const_zero_label = false_label[BooleanCircuit::kConstZero];
  res.const_one_label = false_label[BooleanCircuit::kConstOne] ^ delta;
  return res;
}

/// Evaluate on active labels. `inputs` must cover the two constant wires and
/// every input wire some gate or output actually reads; unread wires may be
/// omitted (the truncated variants never read their low share wires).
inline std::vector<WireLabel> eval(const GarbledCircuit& gc,
                                   const std::vector<std::pair<std::uint32_t, WireLabel>>& inputs) {
  const BooleanCircuit& c = *gc.circuit;
  std::vector<WireLabel> label(c.num_wires);
  std::vector<std::uint8_t> have(c.num_wires, 0);
  for (const auto& [w, l] : inputs) {
    if (w >= c.num_wires) throw std::invalid_argument("eval: input label for unknown wire");
    label[w] = l;
    have[w] = 1;
  }
  auto need = [&](std::uint32_t w) -> const WireLabel& {
    if (!have[w]) throw std::invalid_argument("eval: missing label for wire " + std::to_string(w));
    return label[w];
  };
  std::uint64_t j = 0;
  for (const Gate& g : c.gates) {
    switch (g.op) {
      case GateOp::kXor:
        label[g.out] = need(g.a) ^ need(g.b);
        break;
      case GateOp::kNot:
        label[g.out] = need(g.a);  // garbler swapped the roles; token is reused
        break;
      case GateOp::kAnd: {
        if (j >= gc.tables.size()) throw std::invalid_argument("eval: garbled table too short");
        const GarbledGate& gg = gc.tables[j];
        const WireLabel& a = need(g.a);
        const WireLabel& b = need(g.b);
        WireLabel w = detail::hash_label(a, 2 * j, detail::kTweakGate);
        if (a.color()) w ^= gg.tg;
        w ^= detail::hash_label(b, 2 * j + 1, detail::kTweakGate);
        if (b.color()) w ^= gg.te ^ a;
        label[g.out] = w;
        ++j;
        break;
      }
    }
    have[g.out] = 1;
  }
  if (j != gc.tables.size()) throw std::invalid_argument("eval: garbled table too long");
  std::vector<WireLabel> out;
  out.reserve(c.outputs.size());
  for (std::uint32_t w : c.outputs) out.push_back(need(w));
  return out;
}

/// Translate output labels to plaintext bits against the decode map. A label
/// matching neither valid hash is a forgery or desync.
inline std::vector<bool> decode_outputs(const std::vector<WireLabel>& labels,
                                        const std::vector<OutputDecodeEntry>& decode_map) {
  if (labels.size() != decode_map.size())
    throw std::invalid_argument("decode: label count does not match decode map");
  std::vector<bool> bits(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    WireLabel h = detail::hash_label(labels[i], i, detail::kTweakDecode);
    if (std::memcmp(h.b.data(), decode_map[i].h0.data(), 8) == 0)
      bits[i] = false;
    else if (std::memcmp(h.b.data(), decode_map[i].h1.data(), 8) == 0)
      bits[i] = true;
    else
      throw IntegrityError("output label failed decode-map check at wire index " +
                           std::to_string(i));
  }
  return bits;
}

/// Wire format: AND tables in gate order (TG then TE, 16 B each), then, when
/// included, the decode map (h0 then h1, 8 B each per output wire).
inline std::vector<std::uint8_t> serialize_garbled(const GarbledCircuit& gc,
                                                   bool include_decode = true) {
  std::vector<std::uint8_t> out;
  out.reserve(gc.tables.size() * 32 + (include_decode ? gc.decode_map.size() * 16 : 0));
  for (const GarbledGate& g : gc.tables) {
    out.insert(out.end(), g.tg.b.begin(), g.tg.b.end());
    out.insert(out.end(), g.te.b.begin(), g.te.b.end());
  }
  if (include_decode) {
    for (const OutputDecodeEntry& e : gc.decode_map) {
      out.insert(out.end(), e.h0.begin(), e.h0.end());
      out.insert(out.end(), e.h1.begin(), e.h1.end());
    }
  }
  return out;
}

inline std::vector<GarbledGate> parse_tables(const std::uint8_t* data, std::size_t len) {
  if (len % 32 != 0) throw ProtocolError("garbled table bytes not a multiple of 32");
  std::vector<GarbledGate> tables(len / 32);
  for (std::size_t i = 0; i < tables.size(); ++i) {
    std::memcpy(tables[i].tg.b.data(), data + 32 * i, 16);
    std::memcpy(tables[i].te.b.data(), data + 32 * i + 16, 16);
  }
  return tables;
}

}  // namespace circa
