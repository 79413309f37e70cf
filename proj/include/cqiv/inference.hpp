#pragma once

// Weighted (multiplier) bootstrap for the CQIV estimator and percentile
// confidence intervals.
//
// Each draw refits the control variable under the draw's weights, rebuilds
// X-hat, selects rows with the rule of the retained point-estimate step (or
// keeps the point-estimate rows when selection is fixed) and runs one
// weighted quantile regression. With unit weights every draw reproduces the
// point estimate exactly.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cqiv/cqiv.hpp"
#include "cqiv/parallel.hpp"
#include "cqiv/rng.hpp"

namespace cqiv {

struct WeightScheme {
  enum class Distribution { standard_exponential, custom, unit } distribution = Distribution::standard_exponential;
  std::function<double(Rng&)> sampler;  ///< custom draws; assumed to have mean one
  double sd = 1.0;                      ///< known standard deviation of the custom law
  bool normalize = true;                ///< map e to 1 + (e - 1)/sd

  static WeightScheme exponential() { return {}; }
  static WeightScheme unit() {
    WeightScheme s;
    s.distribution = Distribution::unit;
    return s;
  }
  static WeightScheme custom(std::function<double(Rng&)> draw, double sd, bool normalize = true) {
    WeightScheme s;
    s.distribution = Distribution::custom;
    s.sampler = std::move(draw);
    s.sd = sd;
    s.normalize = normalize;
    return s;
  }
};

inline std::string to_string(WeightScheme::Distribution d) {
  switch (d) {
    case WeightScheme::Distribution::standard_exponential: return "exponential";
    case WeightScheme::Distribution::custom: return "custom";
    case WeightScheme::Distribution::unit: return "unit";
  }
  return "?";
}

inline Vector draw_weights(Index n, const WeightScheme& scheme, Rng& rng) {
  if (n < 1) throw DomainError("draw_weights needs n >= 1");
  Vector e(n);
  switch (scheme.distribution) {
    case WeightScheme::Distribution::unit:
      e.setOnes();
      break;
    case WeightScheme::Distribution::standard_exponential: {
      std::exponential_distribution<double> law(1.0);
      for (Index i = 0; i < n; ++i) e(i) = law(rng);
      break;
    }
    case WeightScheme::Distribution::custom: {
      if (!scheme.sampler) throw DomainError("custom weight scheme has no sampler");
      if (!(scheme.sd > 0.0)) throw DomainError("custom weight scheme needs a positive standard deviation");
      for (Index i = 0; i < n; ++i) {
        const double raw = scheme.sampler(rng);
        e(i) = scheme.normalize && scheme.sd != 1.0 ? 1.0 + (raw - 1.0) / scheme.sd : raw;
        if (!(e(i) >= 0.0) || !std::isfinite(e(i))) {
          throw DomainError("custom weight scheme produced a negative or non-finite weight");
        }
      }
      break;
    }
  }
  return e;
}

enum class RefitSelection { refit_J1b, fixed_J1 };

inline std::string to_string(RefitSelection r) { return r == RefitSelection::refit_J1b ? "refit" : "fixed"; }

/// Draws for one quantile. Rows of `betas` follow increasing draw index.
struct QuantileDraws {
  double u = 0.5;
  Matrix betas;                      ///< successful draws x p
  std::vector<Index> draw_index;     ///< draw number of each row
  std::vector<Index> failed_draws;   ///< draw numbers that failed
  std::vector<std::string> failure_reasons;
};

struct BootstrapDraws {
  Index B = 0;
  std::uint64_t seed = 0;
  RefitSelection refit_selection = RefitSelection::refit_J1b;
  WeightScheme::Distribution scheme = WeightScheme::Distribution::standard_exponential;
  std::vector<QuantileDraws> quantiles;
  double max_failure_fraction = 0.10;
};

struct BootstrapOptions {
  Index B = 200;
  WeightScheme scheme = WeightScheme::exponential();
  RefitSelection refit_selection = RefitSelection::refit_J1b;
  std::uint64_t seed = 1;
  double max_failure_fraction = 0.10;
};

/// Bootstrap draws for every point fit in `fits` (one per quantile, all from
/// the same configuration and data). Draw b uses the child stream b of the
/// seed and the same weights for every quantile.
inline BootstrapDraws bootstrap_cqiv(const Dataset& data, const CqivConfig& cfg, const std::vector<CqivFit>& fits,
                                     const BootstrapOptions& opt) {
  if (opt.B < 0) throw DomainError("number of bootstrap draws must be nonnegative");
  for (const auto& f : fits) {
    if (!f.fitted) throw NotFitted("bootstrap needs completed point estimates");
  }
  const Index n = data.rows();
  const std::size_t nq = fits.size();
  const auto B = static_cast<std::size_t>(opt.B);

  struct Slot {
    std::vector<Vector> beta;
    std::vector<std::string> error;
  };
  std::vector<Slot> slots(B);

  parallel_for(B, [&](std::size_t b) {
    Slot& slot = slots[b];
    slot.beta.resize(nq);
    slot.error.assign(nq, std::string());
    Rng rng = child_rng(opt.seed, b);
    const Vector e = draw_weights(n, opt.scheme, rng);

    std::shared_ptr<const ControlFunction> control;
    Vector v;
    try {
      if (!fits.empty() && fits.front().regressors.has_control()) {
        control = fit_cqiv_control(data, cfg, e);
        v = control->evaluate(data);
      }
    } catch (const Error& err) {
      for (auto& s : slot.error) s = std::string("control refit: ") + err.what();
      return;
    }

    for (std::size_t q = 0; q < nq; ++q) {
      const CqivFit& fit = fits[q];
      try {
        const Matrix xhat = fit.regressors.build(data, v);
        std::vector<Index> rows;
        if (opt.refit_selection == RefitSelection::fixed_J1) {
          for (Index i : fit.selected) {
            if (e(i) > 0.0) rows.push_back(i);
          }
        } else {
          rows = fit.rule.apply(xhat, data.c, e);
        }
        if (rows.empty()) throw EmptySelection("bootstrap selection is empty");
        slot.beta[q] = detail::fit_on(xhat, data.y, e, fit.u, rows).beta;
      } catch (const Error& err) {
        slot.error[q] = err.what();
      }
    }
  });

  BootstrapDraws out;
  out.B = opt.B;
  out.seed = opt.seed;
  out.refit_selection = opt.refit_selection;
  out.scheme = opt.scheme.distribution;
  out.max_failure_fraction = opt.max_failure_fraction;
  out.quantiles.resize(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    QuantileDraws& qd = out.quantiles[q];
    qd.u = fits[q].u;
    const Index p = fits[q].beta.size();
    std::vector<std::size_t> ok;
    for (std::size_t b = 0; b < B; ++b) {
      if (slots[b].error[q].empty()) {
        ok.push_back(b);
      } else {
        qd.failed_draws.push_back(static_cast<Index>(b));
        qd.failure_reasons.push_back(slots[b].error[q]);
      }
    }
    qd.betas.resize(static_cast<Index>(ok.size()), p);
    for (std::size_t k = 0; k < ok.size(); ++k) {
      qd.betas.row(static_cast<Index>(k)) = slots[ok[k]].beta[q].transpose();
      qd.draw_index.push_back(static_cast<Index>(ok[k]));
    }
    if (B > 0 && static_cast<double>(qd.failed_draws.size()) > opt.max_failure_fraction * static_cast<double>(B)) {
      throw NonConvergence("bootstrap at u = " + std::to_string(qd.u) + ": " + std::to_string(qd.failed_draws.size()) +
                           " of " + std::to_string(B) + " draws failed (first: " + qd.failure_reasons.front() + ")");
    }
  }
  return out;
}

inline BootstrapDraws bootstrap_cqiv(const Dataset& data, const CqivConfig& cfg, const CqivFit& fit,
                                     const BootstrapOptions& opt) {
  return bootstrap_cqiv(data, cfg, std::vector<CqivFit>{fit}, opt);
}

struct ConfidenceInterval {
  double level = 0.95;
  double lower = 0.0;
  double upper = 0.0;
  std::string functional;
};

inline constexpr Index kMinimumDraws = 20;

/// [g_(a/2), g_(1-a/2)] from type-7 sample quantiles of the draws, a = 1 - level.
inline ConfidenceInterval percentile_ci(const std::vector<double>& values, double level, std::string label = {},
                                        Index minimum_draws = kMinimumDraws) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("confidence level must lie in (0, 1)");
  if (values.empty() || static_cast<Index>(values.size()) < minimum_draws) {
    throw TooFewDraws("percentile interval needs at least " + std::to_string(minimum_draws) + " draws, got " +
                      std::to_string(values.size()));
  }
  const double alpha = 1.0 - level;
  return {level, sample_quantile(values, alpha / 2.0), sample_quantile(values, 1.0 - alpha / 2.0), std::move(label)};
}

inline ConfidenceInterval coefficient_ci(const QuantileDraws& draws, Index k, double level, std::string label = {}) {
  if (k < 0 || k >= draws.betas.cols()) throw DomainError("coefficient index out of range");
  std::vector<double> col(static_cast<std::size_t>(draws.betas.rows()));
  for (Index b = 0; b < draws.betas.rows(); ++b) col[static_cast<std::size_t>(b)] = draws.betas(b, k);
  return percentile_ci(col, level, std::move(label));
}

/// Average quantile elasticity evaluated at every draw, holding the
/// point-estimate X-hat fixed so that it is a function of beta alone.
inline std::vector<double> elasticity_draws(const QuantileDraws& draws, const CqivFit& fit, const Dataset& data) {
  const Matrix xhat = fit.regressors.build(data, detail::control_values(fit.control, data));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(draws.betas.rows()));
  for (Index b = 0; b < draws.betas.rows(); ++b) {
    out.push_back(quantile_elasticity(Vector(draws.betas.row(b).transpose()), fit.regressors, xhat, data.d, data.c).average);
  }
  return out;
}

}  // namespace cqiv
