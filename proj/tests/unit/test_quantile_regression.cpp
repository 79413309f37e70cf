#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cqiv/num/quantile_regression.hpp"
#include "support/oracles.hpp"

using namespace cqiv::num;
namespace oracle = cqiv::testing;

TEST(QuantileRegression, InterceptOnlyMedian) {
  Matrix x = Matrix::Ones(3, 1);
  Vector y(3);
  y << 1.0, 2.0, 3.0;
  const QuantileFit fit = solve_weighted_qr(x, y, 0.5);
  EXPECT_DOUBLE_EQ(fit.beta(0), 2.0);
  EXPECT_GE(fit.active_count, 1);
}

TEST(QuantileRegression, SixPointBivariateMatchesEnumeration) {
  Matrix x(6, 2);
  Vector y(6);
  const double xs[] = {0.5, 1.2, 2.0, 3.1, 4.4, 5.0};
  const double ys[] = {1.1, 0.7, 2.9, 2.2, 4.8, 3.9};
  for (int i = 0; i < 6; ++i) {
    x.row(i) << 1.0, xs[i];
    y(i) = ys[i];
  }
  const QuantileFit fit = solve_weighted_qr(x, y, 0.3);
  // Frozen from enumerating all C(6,2) exact fits: rows (1, 5) win.
  EXPECT_NEAR(fit.objective, 1.2463157894736845, 1e-12);
  EXPECT_NEAR(fit.beta(0), -0.31052631578947376, 1e-12);
  EXPECT_NEAR(fit.beta(1), 0.8421052631578948, 1e-12);
  EXPECT_NEAR(fit.objective, oracle::brute_force_qr_minimum(x, y, Vector::Ones(6), 0.3), 1e-12);
}

TEST(QuantileRegression, DuplicationEquivalentToDoubleWeight) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = oracle::random_qr_instance(rng, 30, 3, false);
    Matrix xd(60, 3);
    Vector yd(60);
    xd << inst.x, inst.x;
    yd << inst.y, inst.y;
    const QuantileFit dup = solve_weighted_qr(xd, yd, inst.u);
    const QuantileFit dbl = solve_weighted_qr(inst.x, inst.y, inst.u, Vector::Constant(30, 2.0));
    EXPECT_EQ(dup.beta, dbl.beta) << "rep " << rep;
    EXPECT_NEAR(dup.objective, dbl.objective, 1e-10 * (1 + dup.objective));
  }
}

TEST(QuantileRegression, BruteForceEquivalenceSmallInstances) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> nd(3, 12);
  for (int rep = 0; rep < 200; ++rep) {
    const int p = 1 + rep % 2;
    const int n = std::max(nd(rng), p + 1);
    auto inst = oracle::random_qr_instance(rng, n, p, rep % 3 == 0);
    const QuantileFit fit = solve_weighted_qr(inst.x, inst.y, inst.u, inst.w);
    const double best = oracle::brute_force_qr_minimum(inst.x, inst.y, inst.w, inst.u);
    EXPECT_NEAR(fit.objective, best, 1e-9 * (1 + best)) << "rep " << rep;
  }
}

TEST(QuantileRegression, ThreeRegressorsMatchEnumeration) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    auto inst = oracle::random_qr_instance(rng, 15, 3, true);
    const QuantileFit fit = solve_weighted_qr(inst.x, inst.y, inst.u, inst.w);
    const double best = oracle::brute_force_qr_minimum(inst.x, inst.y, inst.w, inst.u);
    EXPECT_NEAR(fit.objective, best, 1e-9 * (1 + best));
  }
}

TEST(QuantileRegression, CoordinatePerturbationsNeverImprove) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_qr_instance(rng, 80, 4, rep % 2 == 0);
    const QuantileFit fit = solve_weighted_qr(inst.x, inst.y, inst.u, inst.w);
    const double tol = 1e-9 * (1 + fit.objective);
    for (int j = 0; j < 4; ++j) {
      for (double h : {1e-4, -1e-4}) {
        Vector b = fit.beta;
        b(j) += h;
        EXPECT_GE(oracle::check_objective(inst.x, inst.y, inst.w, inst.u, b), fit.objective - tol);
      }
    }
  }
}

TEST(QuantileRegression, Equivariance) {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = oracle::random_qr_instance(rng, 60, 3, false);
    Vector gamma(3);
    gamma << 0.7, -1.2, 2.5;
    const QuantileFit a = solve_weighted_qr(inst.x, inst.y, inst.u);
    const QuantileFit b = solve_weighted_qr(inst.x, inst.y + inst.x * gamma, inst.u);
    EXPECT_LE((b.beta - a.beta - gamma).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(QuantileRegression, FractionBracketing) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_qr_instance(rng, 101, 3, false);
    const QuantileFit fit = solve_weighted_qr(inst.x, inst.y, inst.u);
    const Vector r = inst.y - inst.x * fit.beta;
    int neg = 0, nonpos = 0;
    for (int i = 0; i < r.size(); ++i) {
      if (r(i) < -1e-9) ++neg;
      if (r(i) <= 1e-9) ++nonpos;
    }
    const double un = inst.u * 101.0;
    EXPECT_LE(neg, static_cast<int>(std::ceil(un)));
    EXPECT_GE(nonpos, static_cast<int>(std::floor(un)) - 3);
  }
}

TEST(QuantileRegression, ZeroWeightRowsIgnored) {
  std::mt19937_64 rng(2);
  auto inst = oracle::random_qr_instance(rng, 40, 2, false);
  Vector w = Vector::Ones(40);
  w.tail(10).setZero();
  const QuantileFit full = solve_weighted_qr(inst.x, inst.y, inst.u, w);
  const QuantileFit head = solve_weighted_qr(inst.x.topRows(30), inst.y.head(30), inst.u);
  EXPECT_EQ(full.beta, head.beta);
}

TEST(QuantileRegression, Errors) {
  Matrix x(5, 2);
  x.col(0).setOnes();
  x.col(1) << 1, 2, 3, 4, 5;
  Vector y = Vector::LinSpaced(5, 0, 1);
  Matrix collinear(5, 2);
  collinear.col(0).setOnes();
  collinear.col(1).setConstant(3.0);
  EXPECT_THROW(solve_weighted_qr(collinear, y, 0.5), cqiv::RankDeficient);
  Vector bad = y;
  bad(2) = std::nan("");
  EXPECT_THROW(solve_weighted_qr(x, bad, 0.5), cqiv::NonFinite);
  EXPECT_THROW(solve_weighted_qr(x, y, 1.0), cqiv::DomainError);
  Vector w = Vector::Zero(5);
  w(0) = 1.0;
  EXPECT_THROW(solve_weighted_qr(x, y, 0.5, w), cqiv::RankDeficient);
}

TEST(QuantileRegression, ExactFitWhenRowsEqualRegressors) {
  Matrix x(2, 2);
  x << 1, 0, 1, 1;
  Vector y(2);
  y << 3, 5;
  const QuantileFit fit = solve_weighted_qr(x, y, 0.4);
  EXPECT_NEAR(fit.beta(0), 3.0, 1e-14);
  EXPECT_NEAR(fit.beta(1), 2.0, 1e-14);
  EXPECT_EQ(fit.objective, 0.0);
}

TEST(QuantileRegression, LargeProblemAgreesWithPerturbationCheck) {
  std::mt19937_64 rng(31);
  auto inst = oracle::random_qr_instance(rng, 2000, 5, true);
  const QuantileFit fit = solve_weighted_qr(inst.x, inst.y, 0.5, inst.w);
  EXPECT_LT(fit.interior_iterations, 100);
  EXPECT_FALSE(fit.interior_failed);
  for (int j = 0; j < 5; ++j) {
    for (double h : {1e-4, -1e-4}) {
      Vector b = fit.beta;
      b(j) += h;
      EXPECT_GE(oracle::check_objective(inst.x, inst.y, inst.w, 0.5, b), fit.objective);
    }
  }
}
