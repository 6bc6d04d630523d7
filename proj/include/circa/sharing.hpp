#pragma once

#include <cstdint>
#include <utility>

#include "circa/errors.hpp"
#include "circa/field.hpp"
#include "circa/rng.hpp"

namespace circa {

/// Additive two-party sharing, client side first: x = client + server mod p.
struct SharePair {
  FieldElement client;
  FieldElement server;
};

/// Split x with the given client-side mask r: client gets r, server x - r.
inline SharePair share(FieldElement x, FieldElement r, const FieldParams& fp) {
  return {r, fp.sub(x, r)};
}

inline FieldElement reconstruct(FieldElement a, FieldElement b, const FieldParams& fp) {
  return fp.add(a, b);
}

/// One party's slice of a multiplication triple c = a*b. The open/finalize
/// pair is single-use; any second use is a protocol violation.
struct BeaverTripleShare {
  FieldElement a;
  FieldElement b;
  FieldElement c;
  bool opened = false;
  bool finalized = false;
};

struct BeaverOpening {
  FieldElement d;  // share of x - a
  FieldElement e;  // share of y - b
};

/// Stage 1 of shared multiply: each party broadcasts its opening shares.
inline BeaverOpening beaver_open(BeaverTripleShare& t, FieldElement x_share, FieldElement y_share,
                                 const FieldParams& fp) {
  if (t.opened) throw ProtocolError("Beaver triple opened twice");
  t.opened = true;
  return {fp.sub(x_share, t.a), fp.sub(y_share, t.b)};
}

/// Stage 2: given the reconstructed d = x-a and e = y-b, produce this party's
/// share of x*y. Exactly one party (by convention the server) adds the public
/// d*e term; add_public selects that role.
inline FieldElement beaver_finalize(BeaverTripleShare& t, FieldElement d, FieldElement e,
                                    bool add_public, const FieldParams& fp) {
  if (!t.opened) throw ProtocolError("Beaver triple finalized before opening");
  if (t.finalized) throw ProtocolError("Beaver triple finalized twice");
  t.finalized = true;
  FieldElement z = fp.add(t.c, fp.add(fp.mul(d, t.b), fp.mul(e, t.a)));
  if (add_public) z = fp.add(z, fp.mul(d, e));
  return z;
}

/// Trusted randomness source for the offline phase. One seeded stream drives
/// every draw, so a (params, seed) pair fixes all generated material.
class Dealer {
 public:
  Dealer(const FieldParams& fp, std::uint64_t seed) : fp_(fp), rng_(mix_seed(seed, 0xDEA1ULL)) {}

  const FieldParams& field() const { return fp_; }

  FieldElement random_element() { return {uniform_below(rng_, fp_.p)}; }

  SharePair share_value(FieldElement x) { return share(x, random_element(), fp_); }

  /// Fresh triple, split between the two parties.
  std::pair<BeaverTripleShare, BeaverTripleShare> triple() {
    FieldElement a = random_element();
    FieldElement b = random_element();
    FieldElement c = fp_.mul(a, b);
    SharePair sa = share_value(a);
    SharePair sb = share_value(b);
    SharePair sc = share_value(c);
    BeaverTripleShare client{sa.client, sb.client, sc.client};
    BeaverTripleShare server{sa.server, sb.server, sc.server};
    return {client, server};
  }

 private:
  FieldParams fp_;
  SplitMix64 rng_;
};

}  // namespace circa
