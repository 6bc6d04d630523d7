#include "circa/sharing.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

namespace {

using circa::BeaverOpening;
using circa::BeaverTripleShare;
using circa::Dealer;
using circa::FieldElement;
using circa::FieldParams;
using circa::ProtocolError;
using circa::reconstruct;
using circa::share;
using circa::SharePair;

// Upper critical chi-square value via the Wilson-Hilferty cube approximation.
double chi2_crit(int df, double z) {
  double t = 1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df));
  return df * t * t * t;
}

TEST(Sharing, ShareAnchor) {
  FieldParams fp = FieldParams::make(257);
  SharePair s = share(fp.encode(10), {250}, fp);
  EXPECT_EQ(s.client.v, 250u);
  EXPECT_EQ(s.server.v, 17u);
  EXPECT_EQ(reconstruct(s.client, s.server, fp).v, 10u);
}

TEST(Sharing, ShareReconstructExhaustive) {
  FieldParams fp = FieldParams::make(97);
  for (std::uint64_t x = 0; x < 97; ++x)
    for (std::uint64_t r = 0; r < 97; ++r)
      EXPECT_EQ(reconstruct(share({x}, {r}, fp).client, share({x}, {r}, fp).server, fp).v, x);
}

TEST(Sharing, BeaverMultiplyCorrect) {
  FieldParams fp = FieldParams::make();
  Dealer dealer(fp, 42);
  for (int i = 0; i < 500; ++i) {
    FieldElement x = dealer.random_element();
    FieldElement y = dealer.random_element();
    SharePair xs = dealer.share_value(x);
    SharePair ys = dealer.share_value(y);
    auto [tc, ts] = dealer.triple();

    BeaverOpening oc = beaver_open(tc, xs.client, ys.client, fp);
    BeaverOpening os = beaver_open(ts, xs.server, ys.server, fp);
    FieldElement d = fp.add(oc.d, os.d);
    FieldElement e = fp.add(oc.e, os.e);

    FieldElement zc = beaver_finalize(tc, d, e, false, fp);
    FieldElement zs = beaver_finalize(ts, d, e, true, fp);
    EXPECT_EQ(reconstruct(zc, zs, fp), fp.mul(x, y));
  }
}

TEST(Sharing, BeaverExactlyOnePartyAddsPublicTerm) {
  // If both or neither party adds d*e the product is off by that amount,
  // whenever d*e != 0.
  FieldParams fp = FieldParams::make(509);
  Dealer dealer(fp, 7);
  FieldElement x = fp.encode(20);
  FieldElement y = fp.encode(30);
  for (int i = 0; i < 50; ++i) {
    SharePair xs = dealer.share_value(x);
    SharePair ys = dealer.share_value(y);
    auto [tc, ts] = dealer.triple();
    BeaverOpening oc = beaver_open(tc, xs.client, ys.client, fp);
    BeaverOpening os = beaver_open(ts, xs.server, ys.server, fp);
    FieldElement d = fp.add(oc.d, os.d);
    FieldElement e = fp.add(oc.e, os.e);
    if (fp.mul(d, e).v == 0) continue;
    FieldElement zc = beaver_finalize(tc, d, e, true, fp);
    FieldElement zs = beaver_finalize(ts, d, e, true, fp);
    EXPECT_NE(reconstruct(zc, zs, fp), fp.mul(x, y));
    return;
  }
  FAIL() << "never saw a nonzero public term";
}

TEST(Sharing, BeaverSingleUseEnforced) {
  FieldParams fp = FieldParams::make(509);
  Dealer dealer(fp, 3);
  auto [tc, ts] = dealer.triple();
  FieldElement one = fp.encode(1);
  BeaverOpening o = beaver_open(tc, one, one, fp);
  EXPECT_THROW(beaver_open(tc, one, one, fp), ProtocolError);
  EXPECT_NO_THROW(beaver_finalize(tc, o.d, o.e, false, fp));
  EXPECT_THROW(beaver_finalize(tc, o.d, o.e, false, fp), ProtocolError);
  EXPECT_THROW(beaver_finalize(ts, o.d, o.e, true, fp), ProtocolError);
}

TEST(Sharing, DealerDeterministicBySeed) {
  FieldParams fp = FieldParams::make();
  Dealer d1(fp, 99);
  Dealer d2(fp, 99);
  Dealer d3(fp, 100);
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    FieldElement a = d1.random_element();
    FieldElement b = d2.random_element();
    FieldElement c = d3.random_element();
    EXPECT_EQ(a, b);
    any_diff = any_diff || !(a == c);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Sharing, DealerFreshness) {
  FieldParams fp = FieldParams::make();
  Dealer dealer(fp, 5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto [tc, ts] = dealer.triple();
    seen.insert(reconstruct(tc.a, ts.a, fp).v);
  }
  // 2000 draws from a 2^31 field collide with probability ~1e-3; two
  // consecutive identical draws would indicate a stuck stream.
  EXPECT_GE(seen.size(), 1999u);
}

TEST(Sharing, DealerUniformityChiSquare) {
  FieldParams fp = FieldParams::make(509);
  Dealer dealer(fp, 11);
  const int kPerBin = 200;
  const int n = 509 * kPerBin;
  std::vector<int> counts(509, 0);
  for (int i = 0; i < n; ++i) ++counts[dealer.random_element().v];
  double chi2 = 0.0;
  for (int c : counts) {
    double diff = c - kPerBin;
    chi2 += diff * diff / kPerBin;
  }
  EXPECT_LT(chi2, chi2_crit(508, 2.3263));  // 1% significance
}

TEST(Sharing, SharesOfFixedValueLookUniform) {
  // The server-side share of a constant must be uniform because the mask is.
  FieldParams fp = FieldParams::make(509);
  Dealer dealer(fp, 13);
  const int kPerBin = 200;
  const int n = 509 * kPerBin;
  FieldElement secret = fp.encode(123);
  std::vector<int> counts(509, 0);
  for (int i = 0; i < n; ++i) ++counts[dealer.share_value(secret).server.v];
  double chi2 = 0.0;
  for (int c : counts) {
    double diff = c - kPerBin;
    chi2 += diff * diff / kPerBin;
  }
  EXPECT_LT(chi2, chi2_crit(508, 2.3263));
}

}  // namespace
