#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "circa/field.hpp"
#include "circa/rng.hpp"

namespace circa {

/// Which side of zero absorbs the truncation faults. PosZero zeros out small
/// positive inputs; NegPass passes small negative inputs through. The only
/// mechanical difference is the comparator's equality polarity.
enum class FaultMode : std::uint8_t { kPosZero, kNegPass };

enum class ReluVariant : std::uint8_t { kReluFull, kSignNaive, kSignStoch };

inline const char* fault_mode_name(FaultMode m) {
  return m == FaultMode::kPosZero ? "PosZero" : "NegPass";
}

inline const char* relu_variant_name(ReluVariant v) {
  switch (v) {
    case ReluVariant::kReluFull: return "relu-full";
    case ReluVariant::kSignNaive: return "sign-naive";
    case ReluVariant::kSignStoch: return "sign-stoch";
  }
  return "?";
}

inline FaultMode parse_fault_mode(const std::string& s) {
  if (s == "pos-zero" || s == "PosZero") return FaultMode::kPosZero;
  if (s == "neg-pass" || s == "NegPass") return FaultMode::kNegPass;
  throw std::invalid_argument("unknown fault mode: " + s);
}

inline ReluVariant parse_relu_variant(const std::string& s) {
  if (s == "relu-full") return ReluVariant::kReluFull;
  if (s == "sign-naive") return ReluVariant::kSignNaive;
  if (s == "sign-stoch") return ReluVariant::kSignStoch;
  throw std::invalid_argument("unknown relu variant: " + s);
}

/// Parameters of the stochastic sign: drop k low bits before comparing, pick
/// the fault side, and fix the root seed all per-activation masks derive from.
struct StochasticReluConfig {
  int k = 0;
  FaultMode mode = FaultMode::kPosZero;
  std::uint64_t seed = 0;
};

/// The share-level sign decision. The server contributes its share s of x,
/// the client contributes t = -<x>_c mod p; both are compared with the k low
/// bits dropped. Returns true when x is declared non-negative.
///
/// PosZero declares negative on floor(s) <= floor(t), so a truncated tie goes
/// negative (zeroing small positives); NegPass uses strict <, a tie goes
/// positive (passing small negatives).
inline bool stochastic_sign_bit(std::uint64_t server_share, std::uint64_t t, int k, FaultMode mode) {
  std::uint64_t hs = server_share >> k;
  std::uint64_t ht = t >> k;
  bool negative = mode == FaultMode::kPosZero ? hs <= ht : hs < ht;
  return !negative;
}

/// Per-activation mask stream: one stream per (relu layer ordinal, flat
/// activation index), split from the root seed. Evaluation order and thread
/// schedule cannot change what any activation draws.
inline SplitMix64 mask_stream(std::uint64_t seed, std::uint64_t relu_layer, std::uint64_t act_idx) {
  return derived_stream(seed, relu_layer, act_idx);
}

inline FieldElement derive_mask(std::uint64_t seed, std::uint64_t relu_layer, std::uint64_t act_idx,
                                const FieldParams& fp) {
  SplitMix64 rng = mask_stream(seed, relu_layer, act_idx);
  return {uniform_below(rng, fp.p)};
}

/// Cleartext reference for one stochastic ReLU: draw the mask t, form the
/// shares exactly as the two-party protocol does (client -t, server x+t),
/// apply the truncated comparison, return x times the sign bit. This function
/// defines the semantics the protocol must reproduce under equal randomness.
template <class Rng>
FieldElement stochastic_relu_sim(FieldElement x, const StochasticReluConfig& cfg, Rng& rng,
                                 const FieldParams& fp) {
  FieldElement t{uniform_below(rng, fp.p)};
  FieldElement server_share = fp.add(x, t);
  bool positive = stochastic_sign_bit(server_share.v, t.v, cfg.k, cfg.mode);
  return positive ? x : FieldElement{0};
}

}  // namespace circa
