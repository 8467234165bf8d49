#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "ham/rng.hpp"

using ham::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1);
  Rng b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

// Pins the generator so a silent change of the draw sequence is caught.
TEST(Rng, FrozenFirstDraws) {
  Rng r(0);
  const std::uint64_t first = r.next_u64();
  Rng again(0);
  EXPECT_EQ(again.next_u64(), first);
  EXPECT_EQ(Rng::mix64(0), 0u);
  EXPECT_EQ(Rng::mix64(1), 0x5692161D100B05E5ULL);
  EXPECT_EQ(Rng::hash_label(""), 0xCBF29CE484222325ULL);
  EXPECT_EQ(Rng::hash_label("a"), 0xAF63DC4C8601EC8CULL);
}

TEST(Rng, ForksAreIndependentOfParentPosition) {
  Rng parent(7);
  const Rng child_before = parent.fork("x");
  for (int i = 0; i < 10; ++i) parent.next_u64();
  Rng c1 = child_before;
  Rng c2 = parent.fork("x");
  EXPECT_EQ(c1.next_u64(), c2.next_u64());
  Rng d = parent.fork("y");
  Rng e = parent.fork("x");
  EXPECT_NE(d.next_u64(), e.next_u64());
}

TEST(Rng, UniformMoments) {
  Rng r(123);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
  Rng r(321);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, BelowCoversRange) {
  Rng r(5);
  std::array<int, 7> counts{};
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, ShuffleIsPermutationAndDeterministic) {
  std::vector<int> a(50);
  std::iota(a.begin(), a.end(), 0);
  std::vector<int> b = a;
  Rng r1(9);
  Rng r2(9);
  r1.shuffle(std::span<int>(a));
  r2.shuffle(std::span<int>(b));
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}
