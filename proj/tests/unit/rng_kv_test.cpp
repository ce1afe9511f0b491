#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "softcbm/error.hpp"
#include "softcbm/kv_document.hpp"
#include "softcbm/rng.hpp"
#include "test_support.hpp"

namespace softcbm {
namespace {

TEST(Rng, EngineMatchesStandardReferenceValue) {
  // The standard fixes the 10000th output of a default-seeded mt19937_64.
  Rng rng(5489u);
  std::uint64_t x = 0;
  for (int i = 0; i < 10000; ++i) x = rng.next_u64();
  EXPECT_EQ(x, 9981545732273789042ULL);
}

TEST(Rng, UniformStaysInUnitInterval) {
  Rng rng(3);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(Rng, NormalMomentsAreStandard) {
  Rng rng(11);
  const int n = 50000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Rng, IndexCoversRangeWithoutEscaping) {
  Rng rng(5);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = rng.index(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_EQ(rng.index(1), 0u);
}

TEST(Rng, ShuffleIsAPermutationAndSeeded) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::vector<int> a(23), b;
    for (int i = 0; i < 23; ++i) a[static_cast<std::size_t>(i)] = i;
    b = a;
    Rng r1(seed), r2(seed);
    r1.shuffle(a);
    r2.shuffle(b);
    EXPECT_EQ(a, b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 23; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  }
}

TEST(DeriveSeed, IsOrderSensitiveAndSpreads) {
  EXPECT_NE(derive_seed({1, 2}), derive_seed({2, 1}));
  EXPECT_NE(derive_seed({1}), derive_seed({1, 0}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 40; ++a)
    for (std::uint64_t b = 0; b < 40; ++b) seen.insert(derive_seed({a, b}));
  EXPECT_EQ(seen.size(), 1600u);
}

TEST(HashString, MatchesFnv1aReference) {
  EXPECT_EQ(hash_string(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(hash_string("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hash_string("foobar"), 0x85944171f73967e8ULL);
}

TEST(KeyValueDocument, ParsesCommentsAndWhitespace) {
  const auto doc = KeyValueDocument::parse("# header\n a = 1 \n\nb=two words\n  # trailing\nc = \n");
  EXPECT_EQ(doc.require("a"), "1");
  EXPECT_EQ(doc.require("b"), "two words");
  EXPECT_EQ(doc.require("c"), "");
  EXPECT_FALSE(doc.contains("d"));
  EXPECT_THROW(doc.require("d"), FormatError);
  EXPECT_THROW(KeyValueDocument::parse("no equals sign\n"), FormatError);
}

TEST(KeyValueDocument, SetReplacesInPlaceAndKeepsOrder) {
  KeyValueDocument doc;
  doc.set("x", 1);
  doc.set("y", 2.5);
  doc.set("x", std::string("again"));
  ASSERT_EQ(doc.entries().size(), 2u);
  EXPECT_EQ(doc.entries()[0].first, "x");
  EXPECT_EQ(doc.to_string(), "x = again\ny = 2.5\n");
}

TEST(KeyValueDocument, RoundTripsThroughText) {
  KeyValueDocument doc;
  doc.set("alpha", 0.01);
  doc.set("flag", true);
  doc.set("list", "stage3 stage4");
  const auto back = KeyValueDocument::parse(doc.to_string());
  EXPECT_EQ(back.entries(), doc.entries());
  EXPECT_TRUE(back.get_bool("flag"));
  EXPECT_DOUBLE_EQ(back.get_double("alpha"), 0.01);
}

TEST(KeyValueDocument, LoadMissingFileIsIoError) {
  EXPECT_THROW(KeyValueDocument::load("/nonexistent/softcbm.cfg"), IoError);
}

TEST(FormatExact, RoundTripsRandomDoubles) {
  Rng rng(99);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.index(80)) - 40);
    EXPECT_EQ(parse_double(format_exact(v)), v);
  }
}

TEST(Parsing, RejectsGarbage) {
  EXPECT_THROW(parse_double("1.5x"), FormatError);
  EXPECT_THROW(parse_int("12.0"), FormatError);
  EXPECT_THROW(parse_bool("maybe"), FormatError);
  EXPECT_EQ(parse_int(" 42 "), 42);
  EXPECT_EQ(split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
}

}  // namespace
}  // namespace softcbm
