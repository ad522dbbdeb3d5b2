#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lanesnn/numerics.hpp"

using namespace lanesnn;

TEST(Grid2D, IndexIsRowMajor) {
  Grid2D g(3, 4, 0.0);
  g(1, 2) = 7.5;
  EXPECT_EQ(g.values()[1 * 4 + 2], 7.5);
  EXPECT_EQ(g.at(1, 2), 7.5);
  EXPECT_EQ(g.size(), 12u);
}

TEST(Grid2D, RejectsEmptyAndMismatchedShapes) {
  EXPECT_THROW(Grid2D(0, 3), std::invalid_argument);
  EXPECT_THROW(Grid2D(3, 0), std::invalid_argument);
  EXPECT_THROW(Grid2D(2, 2, std::vector<double>(3)), std::invalid_argument);
  Grid2D g(2, 2);
  EXPECT_THROW(g.at(2, 0), std::out_of_range);
}

TEST(Grid2D, SumAndMean) {
  Grid2D g(2, 2, std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(g.sum(), 10.0);
  EXPECT_DOUBLE_EQ(g.mean(), 2.5);
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  EXPECT_NE(a.uniform(), b.uniform());
}

TEST(Rng, UniformMeanAndRange) {
  Rng rng(1);
  double sum = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) {
    const double u = uniform(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  const double mean = sum / n;
  EXPECT_GE(mean, 0.498);
  EXPECT_LE(mean, 0.502);
}

TEST(Rng, UniformIntIsInclusive) {
  Rng rng(3);
  bool lo = false, hi = false;
  for (int i = 0; i < 10'000; ++i) {
    const auto v = rng.uniform_int(-2, 2);
    ASSERT_GE(v, -2);
    ASSERT_LE(v, 2);
    lo |= v == -2;
    hi |= v == 2;
  }
  EXPECT_TRUE(lo && hi);
  EXPECT_THROW(rng.uniform_int(1, 0), std::invalid_argument);
}

TEST(Gaussian, ZeroStdReturnsMean) {
  Rng rng(1);
  EXPECT_EQ(gaussian(rng, 0.0, 0.0), 0.0);
  EXPECT_EQ(gaussian(rng, 5.0, 0.0), 5.0);
}

TEST(Gaussian, NegativeStdThrows) {
  Rng rng(1);
  EXPECT_THROW(gaussian(rng, 0.0, -1.0), std::invalid_argument);
}

TEST(Gaussian, SampleMomentsOfStandardNormal) {
  Rng rng(1);
  const int n = 1'000'000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = gaussian(rng, 0.0, 1.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.005);
  EXPECT_GE(sd, 0.997);
  EXPECT_LE(sd, 1.003);
}

TEST(Gaussian, ShiftedValuesStayNearMean) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double x = gaussian(rng, 5.0, 0.1);
    EXPECT_GT(x, 4.4);
    EXPECT_LT(x, 5.6);
  }
}

TEST(Rng, ChildStreamsAreDeterministicAndDistinct) {
  const Rng master(7);
  Rng a = master.child(1), b = master.child(1), c = master.child(2);
  const double va = a.uniform();
  EXPECT_EQ(va, b.uniform());
  EXPECT_NE(va, c.uniform());
  Rng m2(7);
  EXPECT_EQ(m2.child(1).uniform(), va);  // child does not depend on draws made so far
}

TEST(Rng, SplitAdvancesParent) {
  Rng a(5);
  Rng s1 = a.split();
  Rng s2 = a.split();
  EXPECT_NE(s1.uniform(), s2.uniform());
}
