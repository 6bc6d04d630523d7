#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <vector>

#include "circa/errors.hpp"
#include "circa/field.hpp"
#include "circa/rng.hpp"
#include "circa/stochastic.hpp"

namespace circa {

/// Exact probability as a reduced fraction. Counts here never exceed p, so
/// 64-bit numerator and denominator are ample.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t n, std::int64_t d) {
    if (d <= 0) throw std::invalid_argument("Rational: denominator must be positive");
    std::int64_t g = std::gcd(n < 0 ? -n : n, d);
    if (g == 0) return {0, 1};
    return {n / g, d / g};
  }

  friend bool operator==(const Rational&, const Rational&) = default;

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

namespace detail {

inline std::int64_t abs_decoded(FieldElement x, const FieldParams& fp) {
  std::int64_t v = fp.decode(x);
  return v < 0 ? -v : v;
}

inline bool on_fault_side(FieldElement x, FaultMode mode, const FieldParams& fp) {
  std::int64_t v = fp.decode(x);
  return mode == FaultMode::kPosZero ? v > 0 : v < 0;
}

/// Count of t in [0, M) with t mod 2^k < c. This is the exact number of
/// additional truncation faults on the conditioned (no sign-flip) mask set.
inline std::int64_t trunc_fault_count(std::int64_t M, int k, std::int64_t c) {
  std::int64_t K = std::int64_t{1} << k;
  std::int64_t full = M / K;
  std::int64_t rem = M % K;
  return full * c + std::min(rem, c);
}

}  // namespace detail

/// True when this mask makes the truncated stochastic ReLU differ from the
/// exact ReLU. Sign mismatches at x = 0 are output-neutral and do not count.
inline bool stochastic_fault(FieldElement x, std::uint64_t t, int k, FaultMode mode,
                             const FieldParams& fp) {
  if (x.v == 0) return false;
  std::uint64_t server_share = x.v + t >= fp.p ? x.v + t - fp.p : x.v + t;
  bool declared_positive = stochastic_sign_bit(server_share, t, k, mode);
  bool truly_positive = x.v < fp.half;
  return declared_positive != truly_positive;
}

/// Sign-flip probability of the untruncated comparison: |x| / p.
inline Rational p_sign_fault_exact(FieldElement x, const FieldParams& fp) {
  return Rational::make(detail::abs_decoded(x, fp), static_cast<std::int64_t>(fp.p));
}

inline double p_sign_fault(FieldElement x, const FieldParams& fp) {
  return p_sign_fault_exact(x, fp).to_double();
}

/// Exact additional-fault probability, conditioned on the sign comparison
/// coming out right. Nonzero only for 0 < |x| < 2^k on the mode's side; there
/// the conditioned mask set has p - |x| elements, of which
/// trunc_fault_count(p - |x|, k, 2^k - |x|) produce an extra fault.
inline Rational p_trunc_fault_exact(FieldElement x, int k, FaultMode mode, const FieldParams& fp) {
  if (k < 0 || k >= fp.m) throw std::invalid_argument("p_trunc: k out of range");
  std::int64_t a = detail::abs_decoded(x, fp);
  std::int64_t K = std::int64_t{1} << k;
  if (k == 0 || a == 0 || a >= K || !detail::on_fault_side(x, mode, fp)) return {0, 1};
  std::int64_t M = static_cast<std::int64_t>(fp.p) - a;
  return Rational::make(detail::trunc_fault_count(M, k, K - a), M);
}

/// The closed-form approximation (2^k - |x|) / 2^k, treating the mask's low
/// bits as uniform and independent; exact only when 2^k divides the
/// conditioned range. Reporting paths use this; exactness tests use the
/// _exact variant.
inline double p_trunc_fault(FieldElement x, int k, FaultMode mode, const FieldParams& fp) {
  if (k < 0 || k >= fp.m) throw std::invalid_argument("p_trunc: k out of range");
  std::int64_t a = detail::abs_decoded(x, fp);
  std::int64_t K = std::int64_t{1} << k;
  if (k == 0 || a == 0 || a >= K || !detail::on_fault_side(x, mode, fp)) return 0.0;
  return static_cast<double>(K - a) / static_cast<double>(K);
}

/// Exact total fault probability: (|x| + additional) / p. Algebraically equal
/// to p_sign + (1 - p_sign) * p_trunc_exact.
inline Rational p_total_fault_exact(FieldElement x, int k, FaultMode mode, const FieldParams& fp) {
  if (k < 0 || k >= fp.m) throw std::invalid_argument("p_total: k out of range");
  std::int64_t a = detail::abs_decoded(x, fp);
  if (a == 0) return {0, 1};
  std::int64_t K = std::int64_t{1} << k;
  std::int64_t extra = 0;
  if (k > 0 && a < K && detail::on_fault_side(x, mode, fp))
    extra = detail::trunc_fault_count(static_cast<std::int64_t>(fp.p) - a, k, K - a);
  return Rational::make(a + extra, static_cast<std::int64_t>(fp.p));
}

/// Two-regime combination on doubles: inside the truncation range
/// p_sign + (1 - p_sign) * p_trunc, outside plain |x| / p.
inline double p_total_fault(FieldElement x, int k, FaultMode mode, const FieldParams& fp) {
  double ps = p_sign_fault(x, fp);
  double pt = p_trunc_fault(x, k, mode, fp);
  return pt == 0.0 ? ps : ps + (1.0 - ps) * pt;
}

/// Enumerates every mask t in F_p and counts output-affecting faults.
/// This is the ground-truth oracle the analytic forms are tested against.
inline std::int64_t exhaustive_fault_count(FieldElement x, int k, FaultMode mode,
                                           const FieldParams& fp) {
  if (fp.p > (1ULL << 20))
    throw GuardError("exhaustive_fault_count: p too large to enumerate (max 2^20)");
  std::int64_t count = 0;
  for (std::uint64_t t = 0; t < fp.p; ++t)
    if (stochastic_fault(x, t, k, mode, fp)) ++count;
  return count;
}

struct MonteCarloResult {
  double rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::uint64_t samples = 0;
  std::uint64_t faults = 0;
};

/// Wilson 95% score interval for a binomial proportion.
inline void wilson_interval(std::uint64_t faults, std::uint64_t n, double& lo, double& hi) {
  const double z = 1.959963984540054;
  double phat = static_cast<double>(faults) / static_cast<double>(n);
  double z2n = z * z / static_cast<double>(n);
  double center = (phat + z2n / 2.0) / (1.0 + z2n);
  double half = z * std::sqrt(phat * (1.0 - phat) / static_cast<double>(n) + z2n / (4.0 * n)) /
                (1.0 + z2n);
  lo = std::max(0.0, center - half);
  hi = std::min(1.0, center + half);
}

/// Seeded empirical fault rate. Work is split over a fixed shard count with
/// per-shard derived streams, so the result does not depend on how many
/// threads actually run.
inline MonteCarloResult monte_carlo_fault_rate(FieldElement x, int k, FaultMode mode,
                                               const FieldParams& fp, std::uint64_t samples,
                                               std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("monte_carlo: samples must be >= 1");
  constexpr std::uint64_t kShards = 16;
  std::vector<std::uint64_t> shard_faults(kShards, 0);
  auto worker = [&](std::uint64_t shard) {
    std::uint64_t n = samples / kShards + (shard < samples % kShards ? 1 : 0);
    SplitMix64 rng = derived_stream(seed, 0x3C4AB1DULL, shard);
    std::uint64_t f = 0;
    for (std::uint64_t i = 0; i < n; ++i)
      if (stochastic_fault(x, uniform_below(rng, fp.p), k, mode, fp)) ++f;
    shard_faults[shard] = f;
  };
  std::vector<std::thread> threads;
  threads.reserve(kShards);
  for (std::uint64_t s = 0; s < kShards; ++s) threads.emplace_back(worker, s);
  for (auto& t : threads) t.join();

  MonteCarloResult res;
  res.samples = samples;
  for (std::uint64_t f : shard_faults) res.faults += f;
  res.rate = static_cast<double>(res.faults) / static_cast<double>(samples);
  wilson_interval(res.faults, samples, res.ci_low, res.ci_high);
  return res;
}

}  // namespace circa
