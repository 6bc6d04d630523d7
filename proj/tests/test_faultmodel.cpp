#include "circa/faultmodel.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <vector>

namespace {

using circa::exhaustive_fault_count;
using circa::FaultMode;
using circa::FieldElement;
using circa::FieldParams;
using circa::GuardError;
using circa::monte_carlo_fault_rate;
using circa::MonteCarloResult;
using circa::p_sign_fault;
using circa::p_sign_fault_exact;
using circa::p_total_fault;
using circa::p_total_fault_exact;
using circa::p_trunc_fault;
using circa::p_trunc_fault_exact;
using circa::Rational;
using circa::stochastic_fault;

const FieldParams kF509 = FieldParams::make(509);
const FieldParams kFBig = FieldParams::make();

TEST(FaultModel, RationalNormalization) {
  EXPECT_EQ(Rational::make(2, 4), Rational::make(1, 2));
  EXPECT_EQ(Rational::make(0, 7), (Rational{0, 1}));
  EXPECT_EQ(Rational::make(509, 509), (Rational{1, 1}));
  EXPECT_THROW(Rational::make(1, 0), std::invalid_argument);
  EXPECT_NEAR(Rational::make(1, 3).to_double(), 1.0 / 3.0, 1e-15);
}

TEST(FaultModel, SignFaultAnchors) {
  FieldParams f257 = FieldParams::make(257);
  EXPECT_EQ(p_sign_fault_exact({0}, f257), (Rational{0, 1}));
  EXPECT_EQ(p_sign_fault_exact(f257.encode(10), f257), Rational::make(10, 257));
  EXPECT_EQ(p_sign_fault_exact(f257.encode(-10), f257), Rational::make(10, 257));
  EXPECT_NEAR(p_sign_fault(f257.encode(10), f257), 10.0 / 257.0, 1e-15);
}

TEST(FaultModel, Theorem1ExhaustiveBothModes) {
  for (FaultMode mode : {FaultMode::kPosZero, FaultMode::kNegPass}) {
    for (std::int64_t v = -254; v <= 253; ++v) {
      std::int64_t count = exhaustive_fault_count(kF509.encode(v), 0, mode, kF509);
      ASSERT_EQ(count, v < 0 ? -v : v) << "v=" << v;
    }
  }
}

TEST(FaultModel, TruncFaultAnchors) {
  // |x| = 2^k sits exactly on the boundary and has no additional faults.
  EXPECT_EQ(p_trunc_fault(kFBig.encode(16), 4, FaultMode::kPosZero, kFBig), 0.0);
  EXPECT_EQ(p_trunc_fault_exact(kFBig.encode(16), 4, FaultMode::kPosZero, kFBig),
            (Rational{0, 1}));
  // Direct substitution: x = 2^17, k = 18 gives (2^18 - 2^17)/2^18 = 1/2.
  EXPECT_EQ(p_trunc_fault(kFBig.encode(1 << 17), 18, FaultMode::kPosZero, kFBig), 0.5);
  // Wrong side of zero for the mode: no truncation term.
  EXPECT_EQ(p_trunc_fault(kFBig.encode(-3), 4, FaultMode::kPosZero, kFBig), 0.0);
  EXPECT_EQ(p_trunc_fault(kFBig.encode(3), 4, FaultMode::kNegPass, kFBig), 0.0);
  EXPECT_GT(p_trunc_fault(kFBig.encode(-3), 4, FaultMode::kNegPass, kFBig), 0.0);
}

TEST(FaultModel, DerivedCountAnchor509K4X3) {
  // x=3, k=4: the 3 sign flips plus floor(506/16)*13 + min(506 mod 16, 13)
  // = 403 + 10 = 413 additional, 416 in total.
  std::int64_t count = exhaustive_fault_count(kF509.encode(3), 4, FaultMode::kPosZero, kF509);
  EXPECT_EQ(count, 416);
  EXPECT_EQ(p_total_fault_exact(kF509.encode(3), 4, FaultMode::kPosZero, kF509),
            Rational::make(416, 509));
  // The independent-bits approximation is close but not exact here.
  double approx = p_total_fault(kF509.encode(3), 4, FaultMode::kPosZero, kF509);
  EXPECT_NEAR(approx, 414.125 / 509.0, 1e-12);
}

TEST(FaultModel, ExactTotalMatchesExhaustiveEverywhere) {
  for (FaultMode mode : {FaultMode::kPosZero, FaultMode::kNegPass}) {
    for (int k : {0, 2, 4, 6}) {
      for (std::int64_t v = -254; v <= 253; ++v) {
        FieldElement x = kF509.encode(v);
        std::int64_t count = exhaustive_fault_count(x, k, mode, kF509);
        ASSERT_EQ(Rational::make(count, 509), p_total_fault_exact(x, k, mode, kF509))
            << "mode=" << circa::fault_mode_name(mode) << " k=" << k << " v=" << v;
      }
    }
  }
}

TEST(FaultModel, AdditionalFaultsOnlyInRangeOnModeSide) {
  for (FaultMode mode : {FaultMode::kPosZero, FaultMode::kNegPass}) {
    for (int k : {2, 4, 6}) {
      std::int64_t K = 1 << k;
      for (std::int64_t v = -254; v <= 253; ++v) {
        FieldElement x = kF509.encode(v);
        std::int64_t extra =
            exhaustive_fault_count(x, k, mode, kF509) - (v < 0 ? -v : v);
        bool on_side = mode == FaultMode::kPosZero ? v > 0 : v < 0;
        bool in_range = v != 0 && (v < 0 ? -v : v) < K;
        if (on_side && in_range)
          ASSERT_GT(extra, 0) << "k=" << k << " v=" << v;
        else
          ASSERT_EQ(extra, 0) << "k=" << k << " v=" << v;
      }
    }
  }
}

TEST(FaultModel, CompositionIdentityHoldsExactly) {
  // p_total == p_sign + (1 - p_sign) * p_trunc as exact rationals.
  for (FaultMode mode : {FaultMode::kPosZero, FaultMode::kNegPass}) {
    for (int k : {0, 3, 5}) {
      for (std::int64_t v = -80; v <= 80; ++v) {
        if (v == 0) continue;
        FieldElement x = kF509.encode(v);
        Rational pt = p_trunc_fault_exact(x, k, mode, kF509);
        // ps + (1-ps)*pt with ps = a/p, over the common denominator p*pt.den
        std::int64_t a = v < 0 ? -v : v;
        Rational composed = Rational::make(a * pt.den + (509 - a) * pt.num, 509 * pt.den);
        ASSERT_EQ(composed, p_total_fault_exact(x, k, mode, kF509))
            << "mode=" << circa::fault_mode_name(mode) << " k=" << k << " v=" << v;
      }
    }
  }
}

TEST(FaultModel, MirrorSymmetry) {
  for (int k : {2, 4, 6}) {
    for (std::int64_t v = 1; v < (1 << k); ++v) {
      EXPECT_EQ(exhaustive_fault_count(kF509.encode(v), k, FaultMode::kPosZero, kF509),
                exhaustive_fault_count(kF509.encode(-v), k, FaultMode::kNegPass, kF509))
          << "k=" << k << " v=" << v;
    }
  }
}

TEST(FaultModel, K0Collapse) {
  for (std::int64_t v : {-100, -5, 0, 7, 200}) {
    FieldElement x = kF509.encode(v);
    EXPECT_EQ(p_trunc_fault_exact(x, 0, FaultMode::kPosZero, kF509), (Rational{0, 1}));
    for (std::uint64_t t = 0; t < 509; ++t)
      ASSERT_EQ(stochastic_fault(x, t, 0, FaultMode::kPosZero, kF509),
                stochastic_fault(x, t, 0, FaultMode::kNegPass, kF509));
  }
}

TEST(FaultModel, OutOfRangeTotalIsSignOnly) {
  FieldElement x = kFBig.encode(10 * (1 << 10));
  EXPECT_EQ(p_total_fault(x, 10, FaultMode::kPosZero, kFBig),
            p_sign_fault(x, kFBig));
}

TEST(FaultModel, ExhaustiveGuardRejectsLargeP) {
  EXPECT_THROW(exhaustive_fault_count({1}, 0, FaultMode::kPosZero, kFBig), GuardError);
}

TEST(FaultModel, MonteCarloHalfProbabilityPoint) {
  MonteCarloResult r = monte_carlo_fault_rate(kFBig.encode(1 << 17), 18, FaultMode::kPosZero,
                                              kFBig, 1000000, 2024);
  EXPECT_NEAR(r.rate, 0.5, 0.002);
  EXPECT_LE(r.ci_low, r.rate);
  EXPECT_GE(r.ci_high, r.rate);
  EXPECT_LT(r.ci_high - r.ci_low, 0.004);
  EXPECT_EQ(r.samples, 1000000u);
}

TEST(FaultModel, MonteCarloZeroProbabilityPoint) {
  MonteCarloResult r =
      monte_carlo_fault_rate({0}, 6, FaultMode::kPosZero, kFBig, 20000, 7);
  EXPECT_EQ(r.faults, 0u);
  EXPECT_EQ(r.rate, 0.0);
  EXPECT_EQ(r.ci_low, 0.0);
}

TEST(FaultModel, MonteCarloDeterministicPerSeed) {
  MonteCarloResult a = monte_carlo_fault_rate(kF509.encode(5), 3, FaultMode::kPosZero, kF509,
                                              50000, 99);
  MonteCarloResult b = monte_carlo_fault_rate(kF509.encode(5), 3, FaultMode::kPosZero, kF509,
                                              50000, 99);
  MonteCarloResult c = monte_carlo_fault_rate(kF509.encode(5), 3, FaultMode::kPosZero, kF509,
                                              50000, 100);
  EXPECT_EQ(a.faults, b.faults);
  EXPECT_NE(a.faults, c.faults);
}

TEST(FaultModel, MonteCarloTracksExactWithin3Sigma) {
  std::uint64_t samples = 100000;
  for (std::int64_t v : {-200, -33, -9, -2, 1, 3, 12, 60, 150, 253}) {
    FieldElement x = kF509.encode(v);
    double exact = p_total_fault_exact(x, 4, FaultMode::kPosZero, kF509).to_double();
    MonteCarloResult r =
        monte_carlo_fault_rate(x, 4, FaultMode::kPosZero, kF509, samples, 31337);
    double sigma = std::sqrt(exact * (1.0 - exact) / static_cast<double>(samples));
    EXPECT_NEAR(r.rate, exact, 3.0 * sigma + 1e-9) << "v=" << v;
  }
}

}  // namespace
