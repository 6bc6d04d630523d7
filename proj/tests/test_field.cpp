#include "circa/field.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <random>

namespace {

using circa::FieldElement;
using circa::FieldParams;
using circa::FixedPointScale;

// Independent multiply oracle: double-and-add on 64-bit words only, no
// 128-bit intermediate, so it shares no code path with FieldParams::mul.
std::uint64_t mulmod_oracle(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  std::uint64_t acc = 0;
  a %= p;
  while (b) {
    if (b & 1) {
      acc += a;
      if (acc >= p) acc -= p;
    }
    a += a;
    if (a >= p) a -= p;
    b >>= 1;
  }
  return acc;
}

TEST(Field, MakeDerivesWidthAndHalf) {
  FieldParams fp = FieldParams::make(257);
  EXPECT_EQ(fp.p, 257u);
  EXPECT_EQ(fp.m, 9);
  EXPECT_EQ(fp.half, 128u);

  FieldParams f509 = FieldParams::make(509);
  EXPECT_EQ(f509.m, 9);
  EXPECT_EQ(f509.half, 254u);

  FieldParams f16 = FieldParams::make(65521);
  EXPECT_EQ(f16.m, 16);

  FieldParams fd = FieldParams::make();
  EXPECT_EQ(fd.p, 2138816513u);
  EXPECT_EQ(fd.m, 31);
  EXPECT_EQ(fd.half, 1069408256u);
}

TEST(Field, MakeRejectsBadModuli) {
  EXPECT_THROW(FieldParams::make(0), std::invalid_argument);
  EXPECT_THROW(FieldParams::make(1), std::invalid_argument);
  EXPECT_THROW(FieldParams::make(2), std::invalid_argument);
  EXPECT_THROW(FieldParams::make(4), std::invalid_argument);
  EXPECT_THROW(FieldParams::make(255), std::invalid_argument);
  EXPECT_THROW(FieldParams::make(2138816511), std::invalid_argument);
  EXPECT_THROW(FieldParams::make(1ULL << 63), std::invalid_argument);
}

TEST(Field, EncodeAnchors) {
  FieldParams fp = FieldParams::make(257);
  EXPECT_EQ(fp.encode(5).v, 5u);
  EXPECT_EQ(fp.encode(0).v, 0u);
  EXPECT_EQ(fp.encode(-1).v, 256u);

  FieldParams fd = FieldParams::make();
  EXPECT_EQ(fd.encode(-100).v, 2138816413u);
}

TEST(Field, DecodeAnchors) {
  FieldParams fp = FieldParams::make(257);
  EXPECT_EQ(fp.decode({256}), -1);
  EXPECT_EQ(fp.decode({128}), -129);
  EXPECT_EQ(fp.decode({127}), 127);
  EXPECT_EQ(fp.decode({0}), 0);
}

TEST(Field, EncodeRangeGuard) {
  FieldParams fp = FieldParams::make(257);
  EXPECT_NO_THROW(fp.encode(-128));
  EXPECT_NO_THROW(fp.encode(127));
  EXPECT_THROW(fp.encode(-129), std::out_of_range);
  EXPECT_THROW(fp.encode(128), std::out_of_range);
}

TEST(Field, EncodeDecodeRoundTripExhaustive) {
  FieldParams fp = FieldParams::make(509);
  for (std::int64_t v = -254; v <= 253; ++v) {
    FieldElement e = fp.encode(v);
    EXPECT_LT(e.v, fp.p);
    EXPECT_EQ(fp.decode(e), v);
    EXPECT_EQ(fp.is_negative(e), v < 0);
  }
}

TEST(Field, ArithmeticExhaustiveSmallPrime) {
  FieldParams fp = FieldParams::make(97);
  for (std::uint64_t a = 0; a < 97; ++a) {
    for (std::uint64_t b = 0; b < 97; ++b) {
      EXPECT_EQ(fp.add({a}, {b}).v, (a + b) % 97);
      EXPECT_EQ(fp.sub({a}, {b}).v, (a + 97 - b) % 97);
      EXPECT_EQ(fp.mul({a}, {b}).v, (a * b) % 97);
    }
    EXPECT_EQ(fp.add({a}, fp.neg({a})).v, 0u);
  }
}

TEST(Field, MulMatchesIndependentOracle) {
  FieldParams fd = FieldParams::make();
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<std::uint64_t> dist(0, fd.p - 1);
  for (int i = 0; i < 20000; ++i) {
    std::uint64_t a = dist(gen);
    std::uint64_t b = dist(gen);
    EXPECT_EQ(fd.mul({a}, {b}).v, mulmod_oracle(a, b, fd.p));
  }
}

TEST(Field, MulNearWordBoundary) {
  // 62-bit prime: products overflow 64 bits, exercising the wide intermediate.
  FieldParams fp = FieldParams::make((1ULL << 62) - 57);
  std::mt19937_64 gen(8);
  std::uniform_int_distribution<std::uint64_t> dist(0, fp.p - 1);
  for (int i = 0; i < 2000; ++i) {
    std::uint64_t a = dist(gen);
    std::uint64_t b = dist(gen);
    EXPECT_EQ(fp.mul({a}, {b}).v, mulmod_oracle(a, b, fp.p));
  }
}

TEST(Field, QuantizeAnchors) {
  FieldParams fd = FieldParams::make();
  EXPECT_EQ(quantize(0.5, {8}, fd).v, 128u);
  EXPECT_EQ(quantize(-1.0, {8}, fd).v, 2138816257u);
  EXPECT_EQ(quantize(0.0, {8}, fd).v, 0u);
}

TEST(Field, QuantizeRoundsHalfAwayFromZero) {
  FieldParams fd = FieldParams::make();
  EXPECT_EQ(fd.decode(quantize(0.5, {0}, fd)), 1);
  EXPECT_EQ(fd.decode(quantize(-0.5, {0}, fd)), -1);
  EXPECT_EQ(fd.decode(quantize(2.5, {0}, fd)), 3);
  EXPECT_EQ(fd.decode(quantize(-2.5, {0}, fd)), -3);
  EXPECT_EQ(fd.decode(quantize(2.4, {0}, fd)), 2);
}

TEST(Field, QuantizeMagnitudeCap) {
  FieldParams fd = FieldParams::make();
  EXPECT_NO_THROW(quantize(127.996, {8}, fd));
  EXPECT_EQ(fd.decode(quantize(127.99, {8}, fd)), 32765);
  EXPECT_THROW(quantize(128.0, {8}, fd), std::out_of_range);
  EXPECT_THROW(quantize(-128.0, {8}, fd), std::out_of_range);
  EXPECT_THROW(quantize(1.0e6, {8}, fd), std::out_of_range);
}

TEST(Field, QuantizeDequantizeError) {
  FieldParams fd = FieldParams::make();
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> dist(-100.0, 100.0);
  FixedPointScale scale{8};
  for (int i = 0; i < 1000; ++i) {
    double v = dist(gen);
    double back = std::ldexp(static_cast<double>(fd.decode(quantize(v, scale, fd))), -scale.f);
    EXPECT_NEAR(back, v, 1.0 / 512.0 + 1e-12);
  }
}

}  // namespace
