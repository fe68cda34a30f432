#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"
#include "support.hpp"

using namespace nbhd;

TEST(Fnv, PublishedVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, "grid"), derive_seed(7, "grid"));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(derive_seed(7, "tree:" + std::to_string(i)));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(derive_seed(7, "a"), derive_seed(8, "a"));
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng r(1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(9);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 50u);
}

TEST(FormatDouble, RoundTrips) {
  Rng r(5);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(r.uniform(-1, 1), static_cast<int>(r.range(-60, 60)));
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(3.0), "3");
}

TEST(ParseNumbers, RejectGarbage) {
  EXPECT_THROW(parse_double("1.5x"), ParseError);
  EXPECT_THROW(parse_double(""), ParseError);
  EXPECT_THROW(parse_int("2.5"), ParseError);
  EXPECT_EQ(parse_int("-12"), -12);
}

TEST(Table, WriteReadRoundTrip) {
  test::TempDir dir("table");
  Table t({"id", "x"});
  t.add_row({"b", "2"});
  t.add_row({"a", "1.25"});
  t.sort_by("id");
  t.write(dir / "t.tsv");
  const Table u = Table::read(dir / "t.tsv");
  ASSERT_EQ(u.size(), 2u);
  EXPECT_EQ(u.at(0, "id"), "a");
  EXPECT_DOUBLE_EQ(u.number(0, "x"), 1.25);
  EXPECT_THROW(u.column("nope"), SchemaError);
}

TEST(Table, ReadErrors) {
  test::TempDir dir("table_err");
  EXPECT_THROW(Table::read(dir / "missing.tsv"), IoError);
  write_file_atomic(dir / "empty.tsv", "");
  EXPECT_THROW(Table::read(dir / "empty.tsv"), EmptyInputError);
  write_file_atomic(dir / "bad.tsv", "a\tb\n1\n");
  EXPECT_THROW(Table::read(dir / "bad.tsv"), ParseError);
  Table t({"a", "b"});
  EXPECT_THROW(t.add_row({"1"}), Error);
}

TEST(Errors, UserVersusInternal) {
  EXPECT_TRUE(ConfigError("x").user_error());
  EXPECT_TRUE(MissingArtifactError("x").user_error());
  EXPECT_FALSE(NumericalError("x").user_error());
  EXPECT_FALSE(NetworkError("x").user_error());
}
