#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cdiff/rng.hpp"

using namespace cdiff;

TEST(Rng, MatchesReferenceXoshiro) {
  // splitmix64-seeded xoshiro256**, values from an independent implementation
  Rng r(0);
  EXPECT_EQ(r.next_u64(), 0x99ec5f36cb75f2b4ull);
  EXPECT_EQ(r.next_u64(), 0xbf6e1f784956452aull);
  EXPECT_EQ(r.next_u64(), 0x1a5f849d4933e6e0ull);
  Rng s(2023);
  EXPECT_EQ(s.next_u64(), 0x8e9b348ee3a76e7dull);
  EXPECT_EQ(s.next_u64(), 0x9e5a3b305068383eull);
}

TEST(Rng, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a("init"), 0xf5d2afc57ab57213ull);
}

TEST(Rng, UniformInHalfOpenUnit) {
  Rng r(5);
  double lo = 1, hi = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  EXPECT_LT(lo, 1e-3);
  EXPECT_GT(hi, 1 - 1e-3);
}

TEST(Rng, NormalMoments) {
  Rng r(9);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    ASSERT_TRUE(std::isfinite(z));
    s += z;
    s2 += z * z;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, NormalConsumesTwoUniforms) {
  Rng a(1), b(1);
  a.normal();
  b.next_u64();
  b.next_u64();
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStreams, SameLabelSameStream) {
  RngStreams s(42);
  Rng a = s.stream("local", 3), b = s.stream("local", 3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStreams, LabelsIndicesSeedsSeparate) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t seed : {1ull, 2ull})
    for (const char* label : {"init", "shared", "local", "channel"})
      for (std::uint64_t idx = 0; idx < 4; ++idx) firsts.insert(RngStreams(seed).stream(label, idx).next_u64());
  EXPECT_EQ(firsts.size(), 2u * 4u * 4u);
}

TEST(RngStreams, ChildScopes) {
  RngStreams root(7);
  EXPECT_NE(root.child({0}).seed(), root.child({1}).seed());
  EXPECT_EQ(root.child({3, 4}).seed(), root.child({3, 4}).seed());
  EXPECT_NE(root.child({3, 4}).seed(), root.child({4, 3}).seed());
  EXPECT_NE(root.child({0}).stream("init").next_u64(), root.stream("init").next_u64());
}
