#include <gtest/gtest.h>

#include <cmath>

#include "affect/objective.hpp"
#include "affect/rng.hpp"

using namespace affect;

namespace {
constexpr real kTukeyC = 4.685;
constexpr real kTukeyBound = 3.6582041666666666667;  // c^2/6
// rho(2) evaluated independently at c = 4.685
constexpr real kRhoAtTwo = 1.6576630874988760026;
// d(rho)/dr at r = 1: 1 * (1 - (1/c)^2)^2
constexpr real kDrhoAtOne = 0.91095629550292002036;
}  // namespace

TEST(Mse, Oracles) {
  EXPECT_DOUBLE_EQ(mse({{1.0, -0.5}, {1.0, -0.5}}), 0.0);
  EXPECT_DOUBLE_EQ(mse({{0.0, 0.0}, {1.0, 1.0}}), 1.0);
  EXPECT_NEAR(mse({{1.0, 2.0, 3.0}, {1.0, 1.0, 1.0}}), 5.0 / 3.0, 1e-15);
}

TEST(Mse, LengthMismatchFails) {
  EXPECT_THROW(mse({{1.0, 2.0}, {1.0}}), ShapeError);
  EXPECT_THROW(mse({{}, {}}), ValueError);
}

TEST(Rmse, Oracles) {
  EXPECT_DOUBLE_EQ(rmse({{0.3}, {0.3}}), 0.0);
  EXPECT_DOUBLE_EQ(rmse({{0.0}, {2.0}}), 2.0);
  EXPECT_NEAR(rmse({{0.0, 0.0, 0.0, 0.0}, {1.0, 1.0, 1.0, 3.0}}), std::sqrt(3.0), 1e-15);
}

TEST(Rmse, SquaredEqualsMse) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    PredictionPair p;
    const int n = rng.uniform_int(1, 12);
    for (int i = 0; i < n; ++i) {
      p.truth.push_back(rng.uniform(-1.0, 1.0));
      p.pred.push_back(rng.uniform(-1.0, 1.0));
    }
    const real r = rmse(p);
    EXPECT_NEAR(r * r, mse(p), 1e-12);
  }
}

TEST(Tukey, ZeroResidualZeroLoss) {
  EXPECT_DOUBLE_EQ(tukey_rho(0.0, kTukeyC), 0.0);
  EXPECT_DOUBLE_EQ(tukey_loss({{0.1, -0.7}, {0.1, -0.7}}), 0.0);
}

TEST(Tukey, BoundaryContinuity) {
  EXPECT_NEAR(tukey_rho(kTukeyC, kTukeyC), kTukeyBound, 1e-12);
  EXPECT_NEAR(tukey_rho(-kTukeyC, kTukeyC), kTukeyBound, 1e-12);
  EXPECT_DOUBLE_EQ(tukey_rho(kTukeyC + 1e-9, kTukeyC), kTukeyBound);
  EXPECT_DOUBLE_EQ(tukey_rho(100.0, kTukeyC), kTukeyBound);
}

TEST(Tukey, ValueAtTwo) {
  EXPECT_NEAR(tukey_rho(2.0, kTukeyC), kRhoAtTwo, 1e-12);
  EXPECT_NEAR(tukey_loss({{2.0}, {0.0}}, {kTukeyC}), kRhoAtTwo, 1e-12);
}

TEST(Tukey, EvenMonotoneBounded) {
  Rng rng(32);
  real prev = 0.0;
  for (real r = 0.0; r <= 8.0; r += 0.05) {
    const real v = tukey_rho(r, kTukeyC);
    EXPECT_DOUBLE_EQ(v, tukey_rho(-r, kTukeyC));
    EXPECT_GE(v + 1e-15, prev);
    EXPECT_LE(v, kTukeyBound + 1e-15);
    prev = v;
  }
  for (int trial = 0; trial < 100; ++trial) {
    const real r = rng.uniform(-10.0, 10.0);
    EXPECT_DOUBLE_EQ(tukey_rho(r, kTukeyC), tukey_rho(-r, kTukeyC));
  }
}

TEST(TukeyGrad, PointValues) {
  EXPECT_DOUBLE_EQ(tukey_grad(0.0), 0.0);
  EXPECT_DOUBLE_EQ(tukey_grad(kTukeyC + 0.01), 0.0);
  EXPECT_DOUBLE_EQ(tukey_grad(-50.0), 0.0);
  EXPECT_NEAR(tukey_grad(1.0), kDrhoAtOne, 1e-12);
}

TEST(TukeyGrad, MatchesCentralDifferenceEverywhere) {
  const real h = 1e-6;
  for (real r = -6.0; r <= 6.0; r += 0.0917) {  // irrational-ish step avoids landing on |r|=c
    const real numeric = (tukey_rho(r + h, kTukeyC) - tukey_rho(r - h, kTukeyC)) / (2.0 * h);
    const real analytic = tukey_grad(r);
    EXPECT_NEAR(analytic, numeric, 1e-6 * std::max(1.0, std::abs(analytic)));
  }
  // C^1 at the cutoff: inside gradient vanishes toward |r| = c
  EXPECT_NEAR(tukey_grad(kTukeyC - 1e-7), 0.0, 1e-12);
}

TEST(Ccc, PerfectConcordanceAndDiscordance) {
  PredictionPair same{{-1.0, 0.0, 1.0, 0.5}, {-1.0, 0.0, 1.0, 0.5}};
  EXPECT_NEAR(ccc(same).value, 1.0, 1e-15);
  EXPECT_FALSE(ccc(same).degenerate);

  PredictionPair anti{{-1.0, 0.0, 1.0}, {1.0, 0.0, -1.0}};  // zero-mean truth, pred = -truth
  EXPECT_NEAR(ccc(anti).value, -1.0, 1e-15);
}

TEST(Ccc, HalfScaleOracle) {
  // direct evaluation: means 0, var_y = 2/3, var_p = 1/6, cov = 1/3 -> 0.8
  PredictionPair p{{-1.0, 0.0, 1.0}, {-0.5, 0.0, 0.5}};
  EXPECT_NEAR(ccc(p).value, 0.8, 1e-15);
}

TEST(Ccc, DegenerateConstantInputsFlagged) {
  PredictionPair p{{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}};
  const CccResult r = ccc(p);
  EXPECT_TRUE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.value, 0.0);
}

TEST(Ccc, SymmetricShiftInvariantBounded) {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    PredictionPair p;
    const int n = rng.uniform_int(2, 16);
    for (int i = 0; i < n; ++i) {
      p.truth.push_back(rng.uniform(-1.0, 1.0));
      p.pred.push_back(rng.uniform(-1.0, 1.0));
    }
    const real v = ccc(p).value;
    EXPECT_GE(v, -1.0 - 1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);

    PredictionPair swapped{p.pred, p.truth};
    EXPECT_NEAR(ccc(swapped).value, v, 1e-12);

    const real k = rng.uniform(-3.0, 3.0);
    PredictionPair shifted = p;
    for (auto& t : shifted.truth) t += k;
    for (auto& q : shifted.pred) q += k;
    EXPECT_NEAR(ccc(shifted).value, v, 1e-9);
  }
}

TEST(Ccc, NeedsAtLeastTwoSamples) { EXPECT_THROW(ccc({{1.0}, {1.0}}), ValueError); }
