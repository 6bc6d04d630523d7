#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "circa/circuit.hpp"
#include "circa/errors.hpp"
#include "circa/field.hpp"
#include "circa/garble.hpp"
#include "circa/nn.hpp"
#include "circa/rng.hpp"
#include "circa/sharing.hpp"
#include "circa/stochastic.hpp"
#include "circa/transport.hpp"

namespace circa {

/// Everything a two-party session must agree on, plus the per-party secret
/// seeds. The config hash covers only the shared fields; seeds stay private.
struct SessionConfig {
  FieldParams fp;
  StochasticReluConfig relu;  // k, fault mode, and the mask-derivation seed
  ReluVariant variant = ReluVariant::kSignStoch;
  bool rescale_enabled = false;
  std::uint64_t client_seed = 0;
  std::uint64_t server_seed = 0;
  std::uint64_t dealer_seed = 0;
};

/// The circuit every ReLU of this session uses. Non-stochastic variants pin
/// k to 0; synth() rejects anything else.
inline SignCircuitSpec circuit_spec(const SessionConfig& cfg) {
  SignCircuitSpec s;
  s.m = cfg.fp.m;
  s.k = cfg.variant == ReluVariant::kSignStoch ? cfg.relu.k : 0;
  s.mode = cfg.relu.mode;
  s.variant = cfg.variant;
  return s;
}

inline std::array<std::uint8_t, 32> config_hash(const SessionConfig& cfg) {
  WireWriter w;
  static const char kTag[] = "circa-session-v1";
  w.bytes(reinterpret_cast<const std::uint8_t*>(kTag), sizeof(kTag) - 1);
  w.u64(cfg.fp.p);
  w.u8(static_cast<std::uint8_t>(cfg.variant));
  w.u8(static_cast<std::uint8_t>(cfg.relu.mode));
  w.u32(static_cast<std::uint32_t>(cfg.relu.k));
  w.u8(cfg.rescale_enabled ? 1 : 0);
  std::array<std::uint8_t, 32> md{};
  unsigned int len = 0;
  if (EVP_Digest(w.buf.data(), w.buf.size(), md.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != 32)
    throw std::runtime_error("config hash digest failed");
  return md;
}

/// Both parties send their hash and check the peer's. Any difference aborts
/// the session before secret-dependent traffic starts.
inline void exchange_config_hash(const SessionConfig& cfg, Channel& ch) {
  std::array<std::uint8_t, 32> mine = config_hash(cfg);
  WireWriter w;
  w.bytes(mine.data(), mine.size());
  ch.send_frame(FrameType::kConfigHash, w);
  Frame f = ch.expect_frame(FrameType::kConfigHash);
  if (f.payload.size() != mine.size() ||
      !std::equal(mine.begin(), mine.end(), f.payload.begin())) {
    try {
      ch.send_abort();
    } catch (const ProtocolError&) {
    }
    throw ProtocolError("config hash mismatch: parties disagree on session parameters");
  }
}

// ---------------------------------------------------------------------------
// Offline material.
// ---------------------------------------------------------------------------

/// Weight-free view of the model the client walks: layer kinds plus the
/// share-local parameters (rescale bits, pool geometry).
enum class LayerKind : std::uint8_t { kLinear = 0, kRelu = 1, kAvgPool = 2, kFlatten = 3 };

struct LayerMeta {
  LayerKind kind = LayerKind::kLinear;
  int f = 0;
  std::size_t window = 0;
  std::size_t stride = 0;
};

inline std::vector<LayerMeta> architecture_of(const Model& model) {
  std::vector<LayerMeta> arch;
  for (const Layer& layer : model.layers) {
    LayerMeta meta;
    if (const auto* l = std::get_if<Conv2D>(&layer)) {
      meta.kind = LayerKind::kLinear;
      meta.f = l->scale.f;
    } else if (const auto* l = std::get_if<FullyConnected>(&layer)) {
      meta.kind = LayerKind::kLinear;
      meta.f = l->scale.f;
    } else if (const auto* l = std::get_if<AvgPool>(&layer)) {
      meta.kind = LayerKind::kAvgPool;
      meta.window = l->window;
      meta.stride = l->stride;
    } else if (std::holds_alternative<Flatten>(layer)) {
      meta.kind = LayerKind::kFlatten;
    } else {
      meta.kind = LayerKind::kRelu;
    }
    arch.push_back(meta);
  }
  return arch;
}

/// Client-side offline inputs of the ReLU circuit, in circuit input order,
/// with the first wire index that actually feeds gates (the stochastic
/// comparator never reads the k low share wires).
struct BundleSlice {
  const char* name;
  int lo;
};

inline std::vector<BundleSlice> client_bundles(ReluVariant v, int k) {
  switch (v) {
    case ReluVariant::kReluFull:
      return {{"client_share_bits", 0}, {"r_bits", 0}};
    case ReluVariant::kSignNaive:
      return {{"client_share_bits", 0}, {"neg_r_bits", 0}, {"one_minus_r_bits", 0}};
    case ReluVariant::kSignStoch:
      return {{"client_neg_share_bits", k}, {"neg_r_bits", 0}, {"one_minus_r_bits", 0}};
  }
  throw std::invalid_argument("unknown relu variant");
}

/// Active labels the dealer hands the client per activation: the two constant
/// wires first, then every used wire of every client bundle.
inline std::size_t client_labels_per_act(ReluVariant v, int m, int k) {
  std::size_t n = 2;
  for (const BundleSlice& b : client_bundles(v, k)) n += static_cast<std::size_t>(m - b.lo);
  return n;
}

/// The client's offline-known circuit input per bundle, aligned with
/// client_bundles order. x_c is the client's share of the ReLU input.
inline std::vector<std::uint64_t> client_bundle_values(ReluVariant v, FieldElement x_c,
                                                       FieldElement r_v, FieldElement r_next,
                                                       const FieldParams& fp) {
  const FieldElement one{1};
  switch (v) {
    case ReluVariant::kReluFull:
      return {x_c.v, r_next.v};
    case ReluVariant::kSignNaive:
      return {x_c.v, fp.neg(r_v).v, fp.sub(one, r_v).v};
    case ReluVariant::kSignStoch:
      return {fp.neg(x_c).v, fp.neg(r_v).v, fp.sub(one, r_v).v};
  }
  throw std::invalid_argument("unknown relu variant");
}

/// One ReLU layer of client material. labels[j] is ordered: const0, const1,
/// then the client bundles as in client_bundles. Sign variants carry the
/// Beaver shares and the output-mask share r_v; all variants carry r_next,
/// the client's share of the layer output.
struct ClientReluLayer {
  std::vector<std::vector<GarbledGate>> tables;
  std::vector<std::vector<WireLabel>> labels;
  std::vector<FieldElement> r_v;
  std::vector<BeaverTripleShare> triples;
  std::vector<FieldElement> r_next;
};

struct ClientMaterial {
  std::vector<std::size_t> input_shape;
  std::vector<LayerMeta> arch;
  Tensor input_mask;                 // r_1; the client sends x_0 - r_1
  std::vector<Tensor> linear_share;  // adopted share per linear layer, pre-rescale
  std::vector<ClientReluLayer> relus;
  bool consumed = false;
};

/// One ReLU layer of server material: the full garbling per activation plus
/// the server Beaver shares and the dealer-folded client opening offsets
/// cd = <x>_c - <a>_c and ce = r_v - <b>_c.
struct ServerReluLayer {
  std::vector<GarbleResult> garbled;
  std::vector<BeaverTripleShare> triples;
  std::vector<FieldElement> cd;
  std::vector<FieldElement> ce;
};

struct ServerMaterial {
  std::vector<Tensor> linear_offset;  // s_i per linear layer
  std::vector<ServerReluLayer> relus;
  bool consumed = false;
};

struct OfflineResult {
  ClientMaterial client;
  ServerMaterial server;
};

namespace detail {

inline std::uint64_t garble_seed(const SessionConfig& cfg, std::size_t ordinal, std::size_t act) {
  return mix_seed(mix_seed(cfg.server_seed, 0x6A51000000000000ULL ^ ordinal), act);
}

inline Tensor linear_core(const Layer& layer, const Tensor& x, const FieldParams& fp,
                          bool include_bias) {
  if (const auto* l = std::get_if<Conv2D>(&layer)) return conv2d_forward(*l, x, fp);
  if (const auto* l = std::get_if<FullyConnected>(&layer)) return fc_forward(*l, x, fp, include_bias);
  throw std::invalid_argument("not a linear layer");
}

}  // namespace detail

/// Dealer phase. Simulates the HE linear precomputation and the OT label
/// delivery: the client ends with its full share trajectory (every adopted
/// share, every ReLU output mask) and the active labels of its offline-known
/// circuit inputs; the server ends with the linear offsets s_i and one
/// garbling per ReLU activation. Whenever a linear layer feeds a ReLU
/// directly (possibly through Flatten) and no rescale intervenes, the
/// dealer pins the client's share of the ReLU input to -t with
/// t = derive_mask(relu seed, ordinal, index), which makes the online
/// protocol reproduce infer_stochastic bit for bit.
inline OfflineResult offline_phase(const Model& model, const SessionConfig& cfg, Dealer& dealer) {
  if (model.fp.p != cfg.fp.p) throw ModelError("offline: model and config use different fields");
  if (dealer.field().p != cfg.fp.p) throw ModelError("offline: dealer uses a different field");
  validate_model(model);
  const FieldParams& fp = cfg.fp;
  const SignCircuitSpec spec = circuit_spec(cfg);
  auto circuit = std::make_shared<const BooleanCircuit>(synth(spec, fp));
  const std::vector<BundleSlice> cbs = client_bundles(spec.variant, spec.k);
  const bool beaver = spec.variant != ReluVariant::kReluFull;

  OfflineResult out;
  out.client.input_shape = model.input_shape;
  out.client.arch = architecture_of(model);

  std::vector<int> relu_ord(model.layers.size(), -1);
  {
    int o = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i)
      if (std::holds_alternative<Relu>(model.layers[i])) relu_ord[i] = o++;
  }

  auto dealer_tensor = [&](const std::vector<std::size_t>& shape) {
    Tensor t = Tensor::zeros(shape);
    for (FieldElement& e : t.data) e = dealer.random_element();
    return t;
  };
  // share target for the value produced just before layer `pos`: the derived
  // -t vector when that value reaches a ReLU through at most Flatten layers
  auto derived_target = [&](std::size_t pos,
                            const std::vector<std::size_t>& shape) -> std::optional<Tensor> {
    std::size_t j = pos;
    while (j < model.layers.size() && std::holds_alternative<Flatten>(model.layers[j])) ++j;
    if (j >= model.layers.size() || !std::holds_alternative<Relu>(model.layers[j]))
      return std::nullopt;
    Tensor t = Tensor::zeros(shape);
    for (std::size_t idx = 0; idx < t.data.size(); ++idx)
      t.data[idx] = fp.neg(derive_mask(cfg.relu.seed, static_cast<std::uint64_t>(relu_ord[j]),
                                       idx, fp));
    return t;
  };

  std::vector<std::size_t> shape = model.input_shape;
  Tensor c_share;  // the client's share of the current value, replayed exactly
  if (std::optional<Tensor> tgt = derived_target(0, shape))
    c_share = std::move(*tgt);
  else
    c_share = dealer_tensor(shape);
  out.client.input_mask = c_share;

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    LayerMeta meta = out.client.arch[i];
    if (meta.kind == LayerKind::kLinear) {
      Tensor lin = detail::linear_core(layer, c_share, fp, false);
      shape = layer_output_shape(layer, shape, i);
      const bool shifted = cfg.rescale_enabled && meta.f > 0;
      std::optional<Tensor> tgt = shifted ? std::nullopt : derived_target(i + 1, shape);
      Tensor adopt = tgt ? std::move(*tgt) : dealer_tensor(shape);
      Tensor offset = Tensor::zeros(shape);
      for (std::size_t j = 0; j < offset.data.size(); ++j)
        offset.data[j] = fp.sub(lin.data[j], adopt.data[j]);
      out.server.linear_offset.push_back(std::move(offset));
      out.client.linear_share.push_back(adopt);
      c_share = std::move(adopt);
      if (shifted) c_share = rescale_tensor(c_share, meta.f, fp);
    } else if (meta.kind == LayerKind::kAvgPool) {
      const AvgPool& l = std::get<AvgPool>(layer);
      c_share = divide_rounded(sum_pool_forward(l, c_share, fp),
                               static_cast<std::int64_t>(l.window * l.window), fp);
      shape = layer_output_shape(layer, shape, i);
    } else if (meta.kind == LayerKind::kFlatten) {
      c_share.shape = {c_share.data.size()};
      shape = {c_share.data.size()};
    } else {
      const std::size_t n = c_share.data.size();
      std::optional<Tensor> tgt = derived_target(i + 1, shape);
      Tensor next = tgt ? std::move(*tgt) : dealer_tensor(shape);

      ClientReluLayer cl;
      ServerReluLayer sl;
      cl.tables.reserve(n);
      cl.labels.reserve(n);
      cl.r_next = std::vector<FieldElement>(next.data.begin(), next.data.end());
      for (std::size_t j = 0; j < n; ++j) {
        const FieldElement x_c = c_share.data[j];
        FieldElement r_v{0};
        if (beaver) {
          r_v = dealer.random_element();
          auto [tc, ts] = dealer.triple();
          sl.cd.push_back(fp.sub(x_c, tc.a));
          sl.ce.push_back(fp.sub(r_v, tc.b));
          cl.triples.push_back(tc);
          sl.triples.push_back(ts);
          cl.r_v.push_back(r_v);
        }
        GarbleResult g =
            garble(circuit, detail::garble_seed(cfg, static_cast<std::size_t>(relu_ord[i]), j));
        std::vector<WireLabel> labels;
        labels.reserve(client_labels_per_act(spec.variant, spec.m, spec.k));
        labels.push_back(g.const_zero_label);
        labels.push_back(g.const_one_label);
        std::vector<std::uint64_t> vals =
            client_bundle_values(spec.variant, x_c, r_v, next.data[j], fp);
        for (std::size_t bi = 0; bi < cbs.size(); ++bi) {
          const std::vector<InputLabelPair>& pairs = g.input_labels.at(cbs[bi].name);
          for (int w = cbs[bi].lo; w < spec.m; ++w)
            labels.push_back(select_label(pairs[static_cast<std::size_t>(w)],
                                          (vals[bi] >> w) & 1));
        }
        cl.labels.push_back(std::move(labels));
        cl.tables.push_back(g.gc.tables);
        sl.garbled.push_back(std::move(g));
      }
      out.client.relus.push_back(std::move(cl));
      out.server.relus.push_back(std::move(sl));
      c_share = std::move(next);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Online phase.
// ---------------------------------------------------------------------------

/// Server half of a linear layer: weights and bias on the server share plus
/// the dealer offset. The client's half is the precomputed adopted share, so
/// linear layers cost no online traffic.
inline Tensor online_linear_server(const Layer& layer, const Tensor& s_in, const Tensor& offset,
                                   const FieldParams& fp, std::size_t layer_idx) {
  Tensor lin = detail::linear_core(layer, s_in, fp, true);
  if (offset.data.size() != lin.data.size())
    throw ProtocolError("linear layer " + std::to_string(layer_idx) +
                        ": dealer offset length mismatch");
  for (std::size_t j = 0; j < lin.data.size(); ++j)
    lin.data[j] = fp.add(lin.data[j], offset.data[j]);
  return lin;
}

/// Server half of one ReLU layer: send the active labels of the share bits,
/// decode the returned output labels, then (sign variants) publish the folded
/// Beaver openings and absorb the client's rebase delta. Returns the server
/// share of the layer output.
inline Tensor online_relu_server(ServerReluLayer& unit, const Tensor& s_in,
                                 const SessionConfig& cfg, std::size_t ordinal, Channel& ch) {
  const FieldParams& fp = cfg.fp;
  const SignCircuitSpec spec = circuit_spec(cfg);
  const int lo = spec.variant == ReluVariant::kSignStoch ? spec.k : 0;
  const std::size_t n = s_in.data.size();
  const std::string ctx = "relu layer " + std::to_string(ordinal);
  if (unit.garbled.size() != n) throw ProtocolError(ctx + ": material does not fit activations");

  WireWriter lw;
  lw.u32(static_cast<std::uint32_t>(n));
  for (std::size_t j = 0; j < n; ++j) {
    const std::vector<InputLabelPair>& pairs =
        unit.garbled[j].input_labels.at("server_share_bits");
    const std::uint64_t s = s_in.data[j].v;
    for (int w = lo; w < spec.m; ++w) {
      const WireLabel& l = select_label(pairs[static_cast<std::size_t>(w)], (s >> w) & 1);
      lw.bytes(l.b.data(), l.b.size());
    }
  }
  ch.send_frame(FrameType::kGcLabels, lw);

  Frame f = ch.expect_frame(FrameType::kGcOutputLabels);
  WireReader r(f.payload);
  if (r.u32() != n) throw ProtocolError(ctx + ": output label count mismatch");
  Tensor out = Tensor::zeros(s_in.shape);
  std::vector<FieldElement> v_s(n);
  const std::size_t outs_n = unit.garbled[0].gc.circuit->outputs.size();
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<WireLabel> outs(outs_n);
    for (WireLabel& l : outs) r.bytes(l.b.data(), l.b.size());
    std::vector<bool> bits;
    try {
      bits = decode_outputs(outs, unit.garbled[j].gc.decode_map);
    } catch (const IntegrityError& e) {
      try {
        ch.send_abort();
      } catch (const ProtocolError&) {
      }
      throw IntegrityError(ctx + " activation " + std::to_string(j) + ": " + e.what());
    }
    const std::uint64_t val = from_bits(bits);
    if (val >= fp.p)
      throw ProtocolError(ctx + " activation " + std::to_string(j) +
                          ": decoded value outside the field");
    if (spec.variant == ReluVariant::kReluFull)
      out.data[j] = {val};
    else
      v_s[j] = {val};
  }
  r.expect_done();
  if (spec.variant == ReluVariant::kReluFull) return out;

  WireWriter bw;
  bw.u32(static_cast<std::uint32_t>(n));
  std::vector<BeaverOpening> opens(n);
  for (std::size_t j = 0; j < n; ++j) {
    BeaverOpening mine = beaver_open(unit.triples[j], s_in.data[j], v_s[j], fp);
    opens[j].d = fp.add(mine.d, unit.cd[j]);
    opens[j].e = fp.add(mine.e, unit.ce[j]);
    bw.fe(opens[j].d);
    bw.fe(opens[j].e);
  }
  ch.send_frame(FrameType::kBeaverOpen, bw);

  Frame df = ch.expect_frame(FrameType::kLinearMasked);
  WireReader dr(df.payload);
  std::vector<FieldElement> delta = dr.fe_vec();
  dr.expect_done();
  if (delta.size() != n) throw ProtocolError(ctx + ": rebase delta length mismatch");
  for (std::size_t j = 0; j < n; ++j) {
    FieldElement z_s = beaver_finalize(unit.triples[j], opens[j].d, opens[j].e, true, fp);
    out.data[j] = fp.add(z_s, delta[j]);
  }
  return out;
}

/// Client half of one ReLU layer: receive the server's share labels, evaluate
/// every garbling with the offline labels, return the output labels, then
/// (sign variants) finish the Beaver multiply and send the rebase delta.
/// Returns the client's share of the layer output, which is r_next.
inline Tensor online_relu_client(ClientReluLayer& unit,
                                 std::shared_ptr<const BooleanCircuit> circuit,
                                 const Tensor& c_in, const SessionConfig& cfg, std::size_t ordinal,
                                 Channel& ch) {
  const FieldParams& fp = cfg.fp;
  const SignCircuitSpec spec = circuit_spec(cfg);
  const int lo = spec.variant == ReluVariant::kSignStoch ? spec.k : 0;
  const std::size_t n = c_in.data.size();
  const std::string ctx = "relu layer " + std::to_string(ordinal);
  if (unit.r_next.size() != n || unit.labels.size() != n || unit.tables.size() != n)
    throw ProtocolError(ctx + ": material does not fit activations");
  const std::vector<BundleSlice> cbs = client_bundles(spec.variant, spec.k);
  const Bundle* server_bundle = circuit->find_bundle("server_share_bits");
  if (server_bundle == nullptr) throw ProtocolError(ctx + ": circuit misses the server bundle");
  const std::size_t per_act = static_cast<std::size_t>(spec.m - lo);

  Frame f = ch.expect_frame(FrameType::kGcLabels);
  WireReader r(f.payload);
  if (r.u32() != n) throw ProtocolError(ctx + ": server label count mismatch");

  WireWriter ow;
  ow.u32(static_cast<std::uint32_t>(n));
  for (std::size_t j = 0; j < n; ++j) {
    GarbledCircuit gc;
    gc.circuit = circuit;
    gc.tables = unit.tables[j];
    std::vector<std::pair<std::uint32_t, WireLabel>> assignment;
    assignment.reserve(unit.labels[j].size() + per_act);
    assignment.emplace_back(BooleanCircuit::kConstZero, unit.labels[j][0]);
    assignment.emplace_back(BooleanCircuit::kConstOne, unit.labels[j][1]);
    std::size_t pos = 2;
    for (const BundleSlice& b : cbs) {
      const Bundle* bundle = circuit->find_bundle(b.name);
      if (bundle == nullptr) throw ProtocolError(ctx + ": circuit misses bundle " + b.name);
      for (int w = b.lo; w < spec.m; ++w) {
        if (pos >= unit.labels[j].size()) throw ProtocolError(ctx + ": client labels truncated");
        assignment.emplace_back(bundle->wires[static_cast<std::size_t>(w)],
                                unit.labels[j][pos++]);
      }
    }
    for (int w = lo; w < spec.m; ++w) {
      WireLabel l;
      r.bytes(l.b.data(), l.b.size());
      assignment.emplace_back(server_bundle->wires[static_cast<std::size_t>(w)], l);
    }
    std::vector<WireLabel> outs;
    try {
      outs = eval(gc, assignment);
    } catch (const std::invalid_argument& e) {
      try {
        ch.send_abort();
      } catch (const ProtocolError&) {
      }
      throw ProtocolError(ctx + " activation " + std::to_string(j) + ": " + e.what());
    }
    for (const WireLabel& l : outs) ow.bytes(l.b.data(), l.b.size());
  }
  r.expect_done();
  ch.send_frame(FrameType::kGcOutputLabels, ow);

  Tensor out = Tensor::zeros(c_in.shape);
  std::copy(unit.r_next.begin(), unit.r_next.end(), out.data.begin());
  if (spec.variant == ReluVariant::kReluFull) return out;

  Frame bf = ch.expect_frame(FrameType::kBeaverOpen);
  WireReader br(bf.payload);
  if (br.u32() != n) throw ProtocolError(ctx + ": beaver opening count mismatch");
  WireWriter dw;
  std::vector<FieldElement> delta(n);
  for (std::size_t j = 0; j < n; ++j) {
    FieldElement d = br.fe();
    FieldElement e = br.fe();
    // the client's own opening shares were folded into the dealer offsets;
    // opening here only enforces single use
    beaver_open(unit.triples[j], c_in.data[j], unit.r_v[j], fp);
    FieldElement z_c = beaver_finalize(unit.triples[j], d, e, false, fp);
    delta[j] = fp.sub(z_c, unit.r_next[j]);
  }
  br.expect_done();
  dw.fe_vec(delta);
  ch.send_frame(FrameType::kLinearMasked, dw);
  return out;
}

namespace detail {

template <class Fn>
auto with_abort(Channel& ch, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ProtocolError&) {
    throw;  // transport already aborted where needed
  } catch (...) {
    try {
      ch.send_abort();
    } catch (const ProtocolError&) {
    }
    throw;
  }
}

}  // namespace detail

/// Client role of the whole pipeline. Sends the masked input, walks the
/// architecture consuming its material, and reconstructs the logits from the
/// server's final share. Material is single use.
inline Tensor run_inference_client(ClientMaterial& mat, const SessionConfig& cfg,
                                   const Tensor& input, Channel& ch) {
  if (mat.consumed) throw ProtocolError("client material already consumed");
  mat.consumed = true;
  const FieldParams& fp = cfg.fp;
  if (input.shape != mat.input_shape || input.data.size() != input.numel())
    throw ModelError("client input shape does not match the session model");
  for (const FieldElement& e : input.data)
    if (e.v >= fp.p) throw ModelError("client input element not a field member");
  auto circuit = std::make_shared<const BooleanCircuit>(synth(circuit_spec(cfg), fp));

  return detail::with_abort(ch, [&]() -> Tensor {
    exchange_config_hash(cfg, ch);
    WireWriter w;
    {
      std::vector<FieldElement> masked(input.data.size());
      for (std::size_t j = 0; j < masked.size(); ++j)
        masked[j] = fp.sub(input.data[j], mat.input_mask.data[j]);
      w.fe_vec(masked);
    }
    ch.send_frame(FrameType::kLinearMasked, w);

    Tensor c_share = mat.input_mask;
    std::size_t li = 0, ro = 0;
    for (const LayerMeta& meta : mat.arch) {
      switch (meta.kind) {
        case LayerKind::kLinear:
          if (li >= mat.linear_share.size())
            throw ProtocolError("client material misses linear layer " + std::to_string(li));
          c_share = mat.linear_share[li++];
          if (cfg.rescale_enabled && meta.f > 0) c_share = rescale_tensor(c_share, meta.f, fp);
          break;
        case LayerKind::kAvgPool: {
          AvgPool l{meta.window, meta.stride};
          c_share = divide_rounded(sum_pool_forward(l, c_share, fp),
                                   static_cast<std::int64_t>(l.window * l.window), fp);
          break;
        }
        case LayerKind::kFlatten:
          c_share.shape = {c_share.data.size()};
          break;
        case LayerKind::kRelu:
          if (ro >= mat.relus.size())
            throw ProtocolError("client material misses relu layer " + std::to_string(ro));
          c_share = online_relu_client(mat.relus[ro], circuit, c_share, cfg, ro, ch);
          ++ro;
          break;
      }
    }

    Frame f = ch.expect_frame(FrameType::kLogits);
    WireReader r(f.payload);
    std::vector<FieldElement> s = r.fe_vec();
    r.expect_done();
    if (s.size() != c_share.data.size()) throw ProtocolError("logits share length mismatch");
    Tensor logits = c_share;
    for (std::size_t j = 0; j < s.size(); ++j) logits.data[j] = fp.add(c_share.data[j], s[j]);
    return logits;
  });
}

/// Server role: receives the masked input, runs every layer on its share, and
/// ships its logits share. Returns that share (the server never learns the
/// logits). Material is single use.
inline Tensor run_inference_server(const Model& model, ServerMaterial& mat,
                                   const SessionConfig& cfg, Channel& ch) {
  if (mat.consumed) throw ProtocolError("server material already consumed");
  mat.consumed = true;
  if (model.fp.p != cfg.fp.p) throw ModelError("server model and config use different fields");
  const FieldParams& fp = cfg.fp;

  return detail::with_abort(ch, [&]() -> Tensor {
    exchange_config_hash(cfg, ch);
    Frame f = ch.expect_frame(FrameType::kLinearMasked);
    WireReader r(f.payload);
    std::vector<FieldElement> masked = r.fe_vec();
    r.expect_done();
    Tensor s_share = Tensor::zeros(model.input_shape);
    if (masked.size() != s_share.data.size())
      throw ProtocolError("masked input length does not match the model");
    for (std::size_t j = 0; j < masked.size(); ++j) {
      if (masked[j].v >= fp.p) throw ProtocolError("masked input element not a field member");
      s_share.data[j] = masked[j];
    }

    std::size_t li = 0, ro = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      const Layer& layer = model.layers[i];
      if (const auto* l = std::get_if<AvgPool>(&layer)) {
        s_share = divide_rounded(sum_pool_forward(*l, s_share, fp),
                                 static_cast<std::int64_t>(l->window * l->window), fp);
      } else if (std::holds_alternative<Flatten>(layer)) {
        s_share.shape = {s_share.data.size()};
      } else if (std::holds_alternative<Relu>(layer)) {
        if (ro >= mat.relus.size())
          throw ProtocolError("server material misses relu layer " + std::to_string(ro));
        s_share = online_relu_server(mat.relus[ro], s_share, cfg, ro, ch);
        ++ro;
      } else {
        if (li >= mat.linear_offset.size())
          throw ProtocolError("server material misses linear layer " + std::to_string(li));
        int fbits = std::holds_alternative<Conv2D>(layer) ? std::get<Conv2D>(layer).scale.f
                                                          : std::get<FullyConnected>(layer).scale.f;
        s_share = online_linear_server(layer, s_share, mat.linear_offset[li], fp, li);
        ++li;
        if (cfg.rescale_enabled && fbits > 0) s_share = rescale_tensor(s_share, fbits, fp);
      }
    }

    WireWriter w;
    w.fe_vec(std::vector<FieldElement>(s_share.data.begin(), s_share.data.end()));
    ch.send_frame(FrameType::kLogits, w);
    return s_share;
  });
}

/// Online messages for one inference: the two config hashes, the masked
/// input, per ReLU layer two (ReluFull) or four frames, and the logits.
inline std::size_t online_frame_count(const std::vector<LayerMeta>& arch, ReluVariant variant) {
  std::size_t frames = 4;  // two config hashes, masked input, logits
  for (const LayerMeta& m : arch)
    if (m.kind == LayerKind::kRelu) frames += variant == ReluVariant::kReluFull ? 2 : 4;
  return frames;
}

// ---------------------------------------------------------------------------
// Client material over the wire. The dealer lives in the server process; the
// client's share of the offline output travels as OfflineMaterial frames:
// one header frame, then one frame per ReLU layer with tables and labels.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_tensor(WireWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) w.u64(d);
  w.fe_vec(std::vector<FieldElement>(t.data.begin(), t.data.end()));
}

inline Tensor read_tensor(WireReader& r, const FieldParams& fp) {
  Tensor t;
  std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 4) throw ProtocolError("material tensor rank out of range");
  t.shape.resize(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint64_t d = r.u64();
    if (d == 0 || d > detail::kMaxTensorElems) throw ProtocolError("material tensor dim out of range");
    t.shape[i] = static_cast<std::size_t>(d);
  }
  std::vector<FieldElement> data = r.fe_vec();
  if (data.size() != t.numel()) throw ProtocolError("material tensor size mismatch");
  for (const FieldElement& e : data)
    if (e.v >= fp.p) throw ProtocolError("material tensor element not a field member");
  t.data = std::move(data);
  return t;
}

inline void write_fe_list(WireWriter& w, const std::vector<FieldElement>& v) { w.fe_vec(v); }

inline std::vector<FieldElement> read_fe_list(WireReader& r, const FieldParams& fp,
                                              std::size_t expect) {
  std::vector<FieldElement> v = r.fe_vec();
  if (v.size() != expect) throw ProtocolError("material vector length mismatch");
  for (const FieldElement& e : v)
    if (e.v >= fp.p) throw ProtocolError("material element not a field member");
  return v;
}

}  // namespace detail

inline void send_client_material(const ClientMaterial& mat, const SessionConfig& cfg,
                                 Channel& ch) {
  const bool beaver = cfg.variant != ReluVariant::kReluFull;
  WireWriter h;
  h.u8(1);  // material format version
  h.u32(static_cast<std::uint32_t>(mat.input_shape.size()));
  for (std::size_t d : mat.input_shape) h.u64(d);
  h.u32(static_cast<std::uint32_t>(mat.arch.size()));
  for (const LayerMeta& m : mat.arch) {
    h.u8(static_cast<std::uint8_t>(m.kind));
    h.u32(static_cast<std::uint32_t>(m.f));
    h.u64(m.window);
    h.u64(m.stride);
  }
  detail::write_tensor(h, mat.input_mask);
  h.u32(static_cast<std::uint32_t>(mat.linear_share.size()));
  for (const Tensor& t : mat.linear_share) detail::write_tensor(h, t);
  h.u32(static_cast<std::uint32_t>(mat.relus.size()));
  for (const ClientReluLayer& rl : mat.relus) {
    h.u32(static_cast<std::uint32_t>(rl.r_next.size()));
    detail::write_fe_list(h, rl.r_next);
    if (beaver) {
      detail::write_fe_list(h, rl.r_v);
      std::vector<FieldElement> a(rl.triples.size()), b(rl.triples.size()), c(rl.triples.size());
      for (std::size_t j = 0; j < rl.triples.size(); ++j) {
        a[j] = rl.triples[j].a;
        b[j] = rl.triples[j].b;
        c[j] = rl.triples[j].c;
      }
      detail::write_fe_list(h, a);
      detail::write_fe_list(h, b);
      detail::write_fe_list(h, c);
    }
  }
  ch.send_frame(FrameType::kOfflineMaterial, h);

  for (std::size_t ri = 0; ri < mat.relus.size(); ++ri) {
    const ClientReluLayer& rl = mat.relus[ri];
    WireWriter w;
    w.u32(static_cast<std::uint32_t>(ri));
    w.u32(static_cast<std::uint32_t>(rl.tables.size()));
    w.u32(rl.tables.empty() ? 0 : static_cast<std::uint32_t>(rl.tables[0].size()));
    w.u32(rl.labels.empty() ? 0 : static_cast<std::uint32_t>(rl.labels[0].size()));
    for (std::size_t j = 0; j < rl.tables.size(); ++j) {
      for (const GarbledGate& g : rl.tables[j]) {
        w.bytes(g.tg.b.data(), g.tg.b.size());
        w.bytes(g.te.b.data(), g.te.b.size());
      }
      for (const WireLabel& l : rl.labels[j]) w.bytes(l.b.data(), l.b.size());
    }
    ch.send_frame(FrameType::kOfflineMaterial, w);
  }
}

inline ClientMaterial recv_client_material(const SessionConfig& cfg, Channel& ch) {
  const FieldParams& fp = cfg.fp;
  const SignCircuitSpec spec = circuit_spec(cfg);
  const bool beaver = cfg.variant != ReluVariant::kReluFull;
  BooleanCircuit circuit = synth(spec, fp);
  const std::size_t want_tables = cost(circuit).and_count;
  const std::size_t want_labels = client_labels_per_act(spec.variant, spec.m, spec.k);

  ClientMaterial mat;
  Frame hf = ch.expect_frame(FrameType::kOfflineMaterial);
  WireReader h(hf.payload);
  if (h.u8() != 1) throw ProtocolError("unsupported material format version");
  std::uint32_t rank = h.u32();
  if (rank == 0 || rank > 4) throw ProtocolError("material input rank out of range");
  for (std::uint32_t i = 0; i < rank; ++i)
    mat.input_shape.push_back(static_cast<std::size_t>(h.u64()));
  std::uint32_t layers = h.u32();
  for (std::uint32_t i = 0; i < layers; ++i) {
    LayerMeta m;
    std::uint8_t kind = h.u8();
    if (kind > 3) throw ProtocolError("material layer kind out of range");
    m.kind = static_cast<LayerKind>(kind);
    m.f = static_cast<int>(h.u32());
    m.window = static_cast<std::size_t>(h.u64());
    m.stride = static_cast<std::size_t>(h.u64());
    mat.arch.push_back(m);
  }
  mat.input_mask = detail::read_tensor(h, fp);
  if (mat.input_mask.shape != mat.input_shape)
    throw ProtocolError("material input mask shape mismatch");
  std::uint32_t lin = h.u32();
  for (std::uint32_t i = 0; i < lin; ++i) mat.linear_share.push_back(detail::read_tensor(h, fp));
  std::uint32_t relus = h.u32();
  for (std::uint32_t i = 0; i < relus; ++i) {
    ClientReluLayer rl;
    std::uint32_t acts = h.u32();
    rl.r_next = detail::read_fe_list(h, fp, acts);
    if (beaver) {
      rl.r_v = detail::read_fe_list(h, fp, acts);
      std::vector<FieldElement> a = detail::read_fe_list(h, fp, acts);
      std::vector<FieldElement> b = detail::read_fe_list(h, fp, acts);
      std::vector<FieldElement> c = detail::read_fe_list(h, fp, acts);
      rl.triples.resize(acts);
      for (std::uint32_t j = 0; j < acts; ++j) rl.triples[j] = {a[j], b[j], c[j]};
    }
    mat.relus.push_back(std::move(rl));
  }
  h.expect_done();

  for (std::uint32_t ri = 0; ri < relus; ++ri) {
    Frame f = ch.expect_frame(FrameType::kOfflineMaterial);
    WireReader r(f.payload);
    if (r.u32() != ri) throw ProtocolError("material relu layers out of order");
    std::uint32_t acts = r.u32();
    if (acts != mat.relus[ri].r_next.size())
      throw ProtocolError("material relu activation count mismatch");
    std::uint32_t tables = r.u32();
    std::uint32_t labels = r.u32();
    if (acts != 0 && (tables != want_tables || labels != want_labels))
      throw ProtocolError("material garbling layout does not match the session circuit");
    for (std::uint32_t j = 0; j < acts; ++j) {
      std::vector<GarbledGate> tab(tables);
      for (GarbledGate& g : tab) {
        r.bytes(g.tg.b.data(), g.tg.b.size());
        r.bytes(g.te.b.data(), g.te.b.size());
      }
      std::vector<WireLabel> lab(labels);
      for (WireLabel& l : lab) r.bytes(l.b.data(), l.b.size());
      mat.relus[ri].tables.push_back(std::move(tab));
      mat.relus[ri].labels.push_back(std::move(lab));
    }
    r.expect_done();
  }
  return mat;
}

}  // namespace circa
