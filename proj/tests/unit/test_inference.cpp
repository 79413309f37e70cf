#include <gtest/gtest.h>

#include <random>

#include "cqiv/inference.hpp"
#include "cqiv/sim/design.hpp"

using namespace cqiv;

namespace {

sim::Sample homoskedastic(Index n, std::uint64_t seed) {
  sim::McDesign design;
  design.n = n;
  design.seed = seed;
  return sim::generate_design(design);
}

}  // namespace

TEST(Weights, ExponentialLawHasUnitMeanAndVariance) {
  Rng rng(123);
  const Vector e = draw_weights(1000000, WeightScheme::exponential(), rng);
  const double mean = e.mean();
  const double var = (e.array() - mean).square().sum() / static_cast<double>(e.size() - 1);
  EXPECT_NEAR(mean, 1.0, 0.005);
  EXPECT_NEAR(var, 1.0, 0.01);
  EXPECT_GE(e.minCoeff(), 0.0);
}

TEST(Weights, CustomLawIsStandardizedWithItsKnownDeviation) {
  // Gamma(1/4, 4) has mean 1 and variance 4.
  auto gamma = [](Rng& r) { return std::gamma_distribution<double>(0.25, 4.0)(r); };
  Rng a(9), b(9);
  const Vector raw = draw_weights(1000, WeightScheme::custom(gamma, 2.0, false), a);
  const Vector std_ = draw_weights(1000, WeightScheme::custom(gamma, 2.0, true), b);
  for (Index i = 0; i < 1000; ++i) EXPECT_DOUBLE_EQ(std_(i), 1.0 + (raw(i) - 1.0) / 2.0);
}

TEST(Weights, FixedSeedGivesIdenticalVectors) {
  Rng a(77), b(77);
  EXPECT_EQ(draw_weights(500, WeightScheme::exponential(), a), draw_weights(500, WeightScheme::exponential(), b));
  EXPECT_EQ(child_seed(5, 3), child_seed(5, 3));
  EXPECT_NE(child_seed(5, 3), child_seed(5, 4));
}

TEST(Bootstrap, UnitWeightsReproduceThePointEstimateExactly) {
  const auto s = homoskedastic(400, 31);
  for (auto m : {ControlMethod::ols_ecdf, ControlMethod::qr_grid, ControlMethod::dist_reg}) {
    CqivConfig cfg;
    cfg.control_method = m;
    const std::vector<double> us = {0.2, 0.5, 0.8};
    const auto fits = fit_cqiv_quantiles(s.data, cfg, us, Vector::Ones(400));
    for (auto mode : {RefitSelection::refit_J1b, RefitSelection::fixed_J1}) {
      BootstrapOptions opt;
      opt.B = 3;
      opt.scheme = WeightScheme::unit();
      opt.refit_selection = mode;
      const auto draws = bootstrap_cqiv(s.data, cfg, fits, opt);
      for (std::size_t q = 0; q < us.size(); ++q) {
        ASSERT_EQ(draws.quantiles[q].betas.rows(), 3);
        for (Index b = 0; b < 3; ++b) {
          EXPECT_EQ(Vector(draws.quantiles[q].betas.row(b).transpose()), fits[q].beta)
              << to_string(m) << " u=" << us[q] << " step " << fits[q].selected_step();
        }
      }
    }
  }
}

TEST(Bootstrap, UnitWeightsWithoutCorrectionOrControl) {
  const auto s = homoskedastic(300, 32);
  CqivConfig cfg;
  cfg.control_method.reset();
  cfg.censoring_correction = false;
  const auto fit = fit_cqiv(s.data, cfg);
  BootstrapOptions opt;
  opt.B = 2;
  opt.scheme = WeightScheme::unit();
  const auto draws = bootstrap_cqiv(s.data, cfg, fit, opt);
  EXPECT_EQ(Vector(draws.quantiles[0].betas.row(1).transpose()), fit.beta);
}

TEST(Bootstrap, ProducesOneRowPerDrawAndIsSeedDeterministic) {
  const auto s = homoskedastic(300, 33);
  CqivConfig cfg;
  const auto fit = fit_cqiv(s.data, cfg);
  BootstrapOptions opt;
  opt.B = 200;
  opt.seed = 4242;
  const auto a = bootstrap_cqiv(s.data, cfg, fit, opt);
  const auto b = bootstrap_cqiv(s.data, cfg, fit, opt);
  EXPECT_EQ(a.quantiles[0].betas.rows() + static_cast<Index>(a.quantiles[0].failed_draws.size()), 200);
  EXPECT_EQ(a.quantiles[0].betas, b.quantiles[0].betas);
  EXPECT_EQ(a.quantiles[0].draw_index, b.quantiles[0].draw_index);
}

TEST(Bootstrap, ThreadCountDoesNotChangeDraws) {
  const auto s = homoskedastic(300, 34);
  CqivConfig cfg;
  cfg.control_method = ControlMethod::qr_grid;
  const auto fit = fit_cqiv(s.data, cfg);
  BootstrapOptions opt;
  opt.B = 12;
  set_thread_count(1);
  const auto serial = bootstrap_cqiv(s.data, cfg, fit, opt);
  set_thread_count(4);
  const auto threaded = bootstrap_cqiv(s.data, cfg, fit, opt);
  set_thread_count(0);
  EXPECT_EQ(serial.quantiles[0].betas, threaded.quantiles[0].betas);
}

TEST(Bootstrap, FixedAndRefitSelectionBothGiveValidDraws) {
  const auto s = homoskedastic(400, 35);
  CqivConfig cfg;
  const auto fit = fit_cqiv(s.data, cfg);
  for (auto mode : {RefitSelection::refit_J1b, RefitSelection::fixed_J1}) {
    BootstrapOptions opt;
    opt.B = 40;
    opt.refit_selection = mode;
    const auto d = bootstrap_cqiv(s.data, cfg, fit, opt);
    EXPECT_EQ(d.quantiles[0].betas.rows(), 40);
    EXPECT_TRUE(d.quantiles[0].betas.allFinite());
    const auto ci = coefficient_ci(d.quantiles[0], 1, 0.95);
    EXPECT_LE(ci.lower, ci.upper);
    EXPECT_LT(ci.lower, 1.3);
    EXPECT_GT(ci.upper, 0.7);
  }
}

TEST(Bootstrap, TooManyFailedDrawsAbort) {
  const auto s = homoskedastic(200, 36);
  CqivConfig cfg;
  const auto fit = fit_cqiv(s.data, cfg);
  // Weights that are almost all zero leave too few rows for the regression.
  auto sparse = [](Rng& r) { return std::uniform_real_distribution<double>(0.0, 1.0)(r) < 0.01 ? 1.0 : 0.0; };
  BootstrapOptions opt;
  opt.B = 10;
  opt.scheme = WeightScheme::custom(sparse, 1.0, false);
  EXPECT_THROW(bootstrap_cqiv(s.data, cfg, fit, opt), NonConvergence);
}

TEST(Bootstrap, ZeroDrawsIsEmpty) {
  const auto s = homoskedastic(200, 37);
  CqivConfig cfg;
  const auto fit = fit_cqiv(s.data, cfg);
  BootstrapOptions opt;
  opt.B = 0;
  const auto d = bootstrap_cqiv(s.data, cfg, fit, opt);
  EXPECT_EQ(d.quantiles[0].betas.rows(), 0);
  EXPECT_THROW(coefficient_ci(d.quantiles[0], 0, 0.95), TooFewDraws);
}

TEST(PercentileCi, FourDrawHandInterpolation) {
  const std::vector<double> draws = {3.0, 1.0, 4.0, 2.0};
  const auto half = percentile_ci(draws, 0.5, "g", 4);
  EXPECT_DOUBLE_EQ(half.lower, 1.75);
  EXPECT_DOUBLE_EQ(half.upper, 3.25);
  const auto ci = percentile_ci(draws, 0.95, "g", 4);
  EXPECT_NEAR(ci.lower, 1.075, 1e-14);
  EXPECT_NEAR(ci.upper, 3.925, 1e-14);
  EXPECT_THROW(percentile_ci(draws, 0.95), TooFewDraws);
}

TEST(PercentileCi, ConstantDrawsGiveZeroWidth) {
  const std::vector<double> draws(25, 0.7);
  const auto ci = percentile_ci(draws, 0.9);
  EXPECT_EQ(ci.lower, 0.7);
  EXPECT_EQ(ci.upper, 0.7);
}

TEST(PercentileCi, NineteenDrawsAreTooFew) {
  EXPECT_THROW(percentile_ci(std::vector<double>(19, 1.0), 0.95), TooFewDraws);
  EXPECT_NO_THROW(percentile_ci(std::vector<double>(20, 1.0), 0.95));
}

TEST(PercentileCi, CoefficientColumnUsesStandardQuantiles) {
  QuantileDraws d;
  d.betas.resize(40, 2);
  std::vector<double> col;
  for (Index b = 0; b < 40; ++b) {
    d.betas(b, 0) = 0.0;
    d.betas(b, 1) = static_cast<double>((b * 17) % 40);
    col.push_back(d.betas(b, 1));
  }
  const auto ci = coefficient_ci(d, 1, 0.95);
  EXPECT_NEAR(ci.lower, sample_quantile(col, 0.025), 1e-12);
  EXPECT_NEAR(ci.upper, sample_quantile(col, 0.975), 1e-12);
  EXPECT_NEAR(ci.lower, 0.975, 1e-12);
  EXPECT_NEAR(ci.upper, 38.025, 1e-12);
}

TEST(ElasticityDraws, MatchesPointFunctionalAtUnitWeights) {
  const auto s = homoskedastic(400, 38);
  CqivConfig cfg;
  cfg.second_stage = RegressorSpec::quadratic(1, true);
  const auto fit = fit_cqiv(s.data, cfg);
  BootstrapOptions opt;
  opt.B = 2;
  opt.scheme = WeightScheme::unit();
  const auto d = bootstrap_cqiv(s.data, cfg, fit, opt);
  const auto e = elasticity_draws(d.quantiles[0], fit, s.data);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0], quantile_elasticity(fit, s.data).average);
}
