#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace circa {

/// Single value in Z_p, stored as its canonical representative in [0, p).
struct FieldElement {
  std::uint64_t v = 0;
  friend bool operator==(const FieldElement&, const FieldElement&) = default;
};

namespace detail {

inline std::uint64_t mulmod_u64(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  return static_cast<std::uint64_t>((static_cast<__uint128_t>(a) * b) % p);
}

inline std::uint64_t powmod_u64(std::uint64_t a, std::uint64_t e, std::uint64_t p) {
  std::uint64_t r = 1;
  a %= p;
  while (e) {
    if (e & 1) r = mulmod_u64(r, a, p);
    a = mulmod_u64(a, a, p);
    e >>= 1;
  }
  return r;
}

// deterministic Miller-Rabin, valid for all 64-bit inputs
inline bool is_prime_u64(std::uint64_t n) {
  if (n < 2) return false;
  for (std::uint64_t q : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
    if (n == q) return true;
    if (n % q == 0) return false;
  }
  std::uint64_t d = n - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  for (std::uint64_t a : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
    std::uint64_t x = powmod_u64(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool witness = true;
    for (int i = 1; i < s; ++i) {
      x = mulmod_u64(x, x, n);
      if (x == n - 1) {
        witness = false;
        break;
      }
    }
    if (witness) return false;
  }
  return true;
}

}  // namespace detail

/// Prime field Z_p with the signed encoding: values below half = (p-1)/2 are
/// non-negative, values at or above half decode as negatives. All arithmetic
/// is a pure function of its inputs; FieldParams is immutable after make().
struct FieldParams {
  std::uint64_t p = 0;     // prime modulus
  int m = 0;               // ceil(log2 p), circuit bit width
  std::uint64_t half = 0;  // (p-1)/2, sign threshold

  static constexpr std::uint64_t kDefaultPrime = 2138816513ULL;  // 31-bit field

  static FieldParams make(std::uint64_t prime = kDefaultPrime) {
    if (prime < 3 || prime >= (1ULL << 63))
      throw std::invalid_argument("FieldParams: modulus out of supported range");
    if (!detail::is_prime_u64(prime))
      throw std::invalid_argument("FieldParams: modulus is not prime");
    FieldParams fp;
    fp.p = prime;
    fp.half = (prime - 1) / 2;
    fp.m = 1;
    while ((static_cast<__uint128_t>(1) << fp.m) < prime) ++fp.m;
    return fp;
  }

  FieldElement add(FieldElement a, FieldElement b) const {
    std::uint64_t s = a.v + b.v;
    if (s >= p) s -= p;
    return {s};
  }

  FieldElement sub(FieldElement a, FieldElement b) const {
    return {a.v >= b.v ? a.v - b.v : a.v + p - b.v};
  }

  FieldElement neg(FieldElement a) const { return {a.v == 0 ? 0 : p - a.v}; }

  FieldElement mul(FieldElement a, FieldElement b) const {
    return {detail::mulmod_u64(a.v, b.v, p)};
  }

  /// Signed integer -> canonical element. Legal inputs are -half <= v < half.
  FieldElement encode(std::int64_t value) const {
    std::int64_t h = static_cast<std::int64_t>(half);
    if (value < -h || value >= h)
      throw std::out_of_range("encode: value outside [-half, half) range");
    return {value >= 0 ? static_cast<std::uint64_t>(value)
                       : p - static_cast<std::uint64_t>(-value)};
  }

  /// Inverse of encode on the legal range; total on all elements.
  std::int64_t decode(FieldElement e) const {
    return e.v < half ? static_cast<std::int64_t>(e.v)
                      : static_cast<std::int64_t>(e.v) - static_cast<std::int64_t>(p);
  }

  bool is_negative(FieldElement e) const { return e.v >= half; }
};

/// Fixed-point layout: f fractional bits, quantized magnitudes capped at 2^15.
struct FixedPointScale {
  int f = 0;
  static constexpr std::int64_t kMagnitudeCap = 1LL << 15;
};

/// round(v * 2^f), half away from zero, then encode. Throws when the rounded
/// magnitude reaches the 15-bit cap.
inline FieldElement quantize(double value, FixedPointScale scale, const FieldParams& fp) {
  double scaled = std::ldexp(value, scale.f);
  std::int64_t q = std::llround(scaled);
  if (q <= -FixedPointScale::kMagnitudeCap || q >= FixedPointScale::kMagnitudeCap)
    throw std::out_of_range("quantize: magnitude exceeds 15-bit cap");
  return fp.encode(q);
}

}  // namespace circa
