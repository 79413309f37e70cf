#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "cqiv/cqiv.hpp"
#include "cqiv/num/normal.hpp"
#include "cqiv/parallel.hpp"
#include "cqiv/rng.hpp"
#include "cqiv/sim/design.hpp"

namespace cqiv::sim {

// ---------------------------------------------------------------------------
// Censored-normal regression with a least-squares control residual.

struct TobitFit {
  Vector beta;
  double sigma = 1.0;
  double loglik = 0.0;
  int iterations = 0;
};

namespace detail {

struct TobitTerms {
  double loglik = 0.0;
  Vector score;
  Matrix hessian;
};

// Log-likelihood in (gamma, tau) = (beta/sigma, 1/sigma), which is concave.
inline TobitTerms tobit_terms(const Matrix& x, const Vector& y, const Vector& c, const Vector& theta,
                              bool derivatives) {
  const Index p = x.cols();
  const Vector gamma = theta.head(p);
  const double tau = theta(p);
  TobitTerms t;
  if (derivatives) {
    t.score = Vector::Zero(p + 1);
    t.hessian = Matrix::Zero(p + 1, p + 1);
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Eigen::VectorXd g(p + 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const double xg = x.row(i).dot(gamma);
    if (y(i) <= c(i)) {
      const double a = tau * c(i) - xg;
      t.loglik += num::log_normal_cdf(a);
      if (!derivatives) continue;
      const double lambda = num::mills_ratio(a);
      const double h = -lambda * (a + lambda);
      g.head(p) = -x.row(i).transpose();
      g(p) = c(i);
      t.score += lambda * g;
      t.hessian += h * g * g.transpose();
    } else {
      const double r = tau * y(i) - xg;
      t.loglik += std::log(tau) - 0.5 * r * r - half_log_2pi;
      if (!derivatives) continue;
      g.head(p) = -x.row(i).transpose();
      g(p) = y(i);
      t.score += -r * g;
      t.score(p) += 1.0 / tau;
      t.hessian -= g * g.transpose();
      t.hessian(p, p) -= 1.0 / (tau * tau);
    }
  }
  return t;
}

}  // namespace detail

/// Maximum likelihood for Y = max(x'beta + sigma e, C), e ~ N(0,1).
inline TobitFit fit_tobit(const Matrix& x, const Vector& y, const Vector& c, int max_iterations = 200) {
  const Index n = x.rows();
  const Index p = x.cols();
  if (y.size() != n || c.size() != n) throw DomainError("fit_tobit: dimension mismatch");
  num::require_finite(x, "tobit regressors");
  num::require_finite(y, "tobit response");
  if (num::numerical_rank(x) < p) throw RankDeficient("tobit design is rank deficient");

  // Least squares on all rows as the starting point.
  const Vector b0 = num::solve_ols(x, y, Vector::Ones(n));
  const double s0 = std::max(std::sqrt((y - x * b0).squaredNorm() / static_cast<double>(n)), 1e-8);
  Vector theta(p + 1);
  theta.head(p) = b0 / s0;
  theta(p) = 1.0 / s0;

  detail::TobitTerms cur = detail::tobit_terms(x, y, c, theta, true);
  const double tol = 1e-9 * std::max(1.0, static_cast<double>(n));
  TobitFit fit;
  bool converged = false;
  for (fit.iterations = 0; fit.iterations < max_iterations; ++fit.iterations) {
    if (cur.score.cwiseAbs().maxCoeff() <= tol) {
      converged = true;
      break;
    }
    Eigen::LDLT<Matrix> ldlt(-cur.hessian);
    Vector step = ldlt.solve(cur.score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) step = cur.score;
    // Newton decrement: the remaining gain is below rounding in the log-likelihood.
    if (cur.score.dot(step) <= 1e-13 * std::max(1.0, std::abs(cur.loglik))) {
      converged = true;
      break;
    }
    double scale = 1.0;
    bool moved = false;
    for (int half = 0; half < 60; ++half) {
      const Vector trial = theta + scale * step;
      if (trial(p) > 0.0) {
        detail::TobitTerms next = detail::tobit_terms(x, y, c, trial, true);
        if (std::isfinite(next.loglik) && next.loglik >= cur.loglik - 1e-12 * std::abs(cur.loglik)) {
          theta = trial;
          cur = std::move(next);
          moved = true;
          break;
        }
      }
      scale *= 0.5;
    }
    if (!moved) {
      converged = cur.score.cwiseAbs().maxCoeff() <= 1e3 * tol;
      break;
    }
  }
  if (!converged) {
    throw NonConvergence("tobit likelihood did not converge (iteration " + std::to_string(fit.iterations) +
                         ", score " + std::to_string(cur.score.cwiseAbs().maxCoeff()) + ")");
  }
  fit.sigma = 1.0 / theta(p);
  fit.beta = theta.head(p) * fit.sigma;
  fit.loglik = cur.loglik;
  return fit;
}

/// Log-likelihood at (beta, sigma) on the original scale.
inline double tobit_loglik(const Matrix& x, const Vector& y, const Vector& c, const Vector& beta, double sigma) {
  Vector theta(beta.size() + 1);
  theta.head(beta.size()) = beta / sigma;
  theta(beta.size()) = 1.0 / sigma;
  return detail::tobit_terms(x, y, c, theta, false).loglik;
}

/// Tobit of Y on (1, D, W..., v) with v the raw first-stage least-squares
/// residual of D on R.
inline TobitFit tobit_cmle(const Dataset& data, const FirstStageSpec& first_stage = {}) {
  const Matrix r = first_stage.build(data);
  const Vector pi = num::solve_ols(r, data.d, Vector::Ones(data.rows()));
  const Vector v = data.d - r * pi;
  const RegressorSpec spec = RegressorSpec::standard(data.w.cols(), true);
  return fit_tobit(spec.build(data, v), data.y, data.c);
}

// ---------------------------------------------------------------------------
// Monte Carlo harness.

enum class Estimator { cqiv_ols, cqiv_qr, cqiv_dr, cqr, qiv_ols, qr, tobit_cmle };

inline const std::vector<Estimator>& all_estimators() {
  static const std::vector<Estimator> all = {Estimator::cqiv_ols, Estimator::cqiv_qr, Estimator::cqiv_dr,
                                             Estimator::cqr,      Estimator::qiv_ols, Estimator::qr,
                                             Estimator::tobit_cmle};
  return all;
}

inline std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::cqiv_ols: return "cqiv-ols";
    case Estimator::cqiv_qr: return "cqiv-qr";
    case Estimator::cqiv_dr: return "cqiv-dr";
    case Estimator::cqr: return "cqr";
    case Estimator::qiv_ols: return "qiv-ols";
    case Estimator::qr: return "qr";
    case Estimator::tobit_cmle: return "tobit-cmle";
  }
  return "?";
}

inline Estimator estimator_from_string(const std::string& s) {
  for (Estimator e : all_estimators()) {
    if (to_string(e) == s) return e;
  }
  throw DomainError("unknown estimator '" + s + "'");
}

/// Estimator configuration used by the harness; the second stage is
/// (1, D, W, Phi^{-1}(V-hat)) whenever a control is used.
inline CqivConfig estimator_config(Estimator e, const CqivConfig& base = {}) {
  CqivConfig cfg = base;
  cfg.transform = ControlTransform::normal_quantile;
  cfg.second_stage.reset();
  switch (e) {
    case Estimator::cqiv_ols: cfg.control_method = ControlMethod::ols_ecdf; cfg.censoring_correction = true; break;
    case Estimator::cqiv_qr: cfg.control_method = ControlMethod::qr_grid; cfg.censoring_correction = true; break;
    case Estimator::cqiv_dr: cfg.control_method = ControlMethod::dist_reg; cfg.censoring_correction = true; break;
    case Estimator::cqr: cfg.control_method.reset(); cfg.censoring_correction = true; break;
    case Estimator::qiv_ols: cfg.control_method = ControlMethod::ols_ecdf; cfg.censoring_correction = false; break;
    case Estimator::qr: cfg.control_method.reset(); cfg.censoring_correction = false; break;
    case Estimator::tobit_cmle: break;
  }
  return cfg;
}

/// Compact per-fit diagnostics kept for every replication.
struct FitSummary {
  double k0 = std::numeric_limits<double>::quiet_NaN();
  double pct_J0 = std::numeric_limits<double>::quiet_NaN();
  double pct_candidates_J0 = std::numeric_limits<double>::quiet_NaN();
  double varsigma1 = std::numeric_limits<double>::quiet_NaN();
  double pct_J1 = std::numeric_limits<double>::quiet_NaN();
  double pct_pred_above_C = std::numeric_limits<double>::quiet_NaN();
  double pct_J0_in_J1 = std::numeric_limits<double>::quiet_NaN();
  double count_J1_not_in_J0 = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> objectives;  ///< Powell objective per recorded step, starting at step 2
  int retained_step = 0;
  bool retained_is_minimum = true;
};

inline FitSummary summarize(const CqivFit& fit) {
  FitSummary s;
  for (const auto& d : fit.steps) {
    if (d.step == 2) {
      s.k0 = d.k0;
      s.pct_J0 = d.pct_selected;
      s.pct_candidates_J0 = d.pct_candidates;
    } else if (d.step == 3) {
      s.varsigma1 = d.varsigma;
      s.pct_J1 = d.pct_selected;
      s.pct_pred_above_C = d.pct_candidates;
      s.pct_J0_in_J1 = d.pct_prev_in_current;
      s.count_J1_not_in_J0 = static_cast<double>(d.count_current_not_in_prev);
    }
    if (d.step >= 2) s.objectives.push_back(d.powell_objective);
  }
  s.retained_step = fit.selected_step();
  for (const auto& d : fit.steps) {
    if (d.powell_objective < fit.steps[fit.retained].powell_objective) s.retained_is_minimum = false;
  }
  return s;
}

/// One (replication, estimator, quantile) outcome.
struct CellRecord {
  bool ok = false;
  double d_coefficient = std::numeric_limits<double>::quiet_NaN();
  double control_coefficient = std::numeric_limits<double>::quiet_NaN();
  FitSummary summary;
  std::string error;
};

struct CellAggregate {
  double mean_bias = 0.0;
  double rmse = 0.0;
  double mean_control = std::numeric_limits<double>::quiet_NaN();
  double median_control = std::numeric_limits<double>::quiet_NaN();
  Index replication_count = 0;
  Index failure_count = 0;
};

struct McOptions {
  std::vector<Estimator> estimators = {Estimator::cqiv_ols, Estimator::cqiv_qr, Estimator::cqiv_dr};
  std::vector<double> quantiles = {0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50,
                                   0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
  Index replications = 100;
  std::uint64_t seed = 20260101;
  CqivConfig base;  ///< q0, q1, selector link, iteration settings, first-stage grid
  /// Replication execution order; identity when empty. Results do not depend on it.
  std::vector<Index> order;
};

struct McResult {
  McDesign design;
  McOptions options;
  /// records[r][e][q]
  std::vector<std::vector<std::vector<CellRecord>>> records;
  /// cells[e][q]
  std::vector<std::vector<CellAggregate>> cells;

  [[nodiscard]] std::size_t estimator_index(Estimator e) const {
    for (std::size_t k = 0; k < options.estimators.size(); ++k) {
      if (options.estimators[k] == e) return k;
    }
    throw DomainError("estimator " + to_string(e) + " was not run");
  }
  [[nodiscard]] std::size_t quantile_index(double u) const {
    for (std::size_t k = 0; k < options.quantiles.size(); ++k) {
      if (std::abs(options.quantiles[k] - u) < 1e-12) return k;
    }
    throw DomainError("quantile " + std::to_string(u) + " was not run");
  }
  [[nodiscard]] const CellAggregate& cell(Estimator e, double u) const {
    return cells[estimator_index(e)][quantile_index(u)];
  }
};

namespace detail {

inline std::vector<CellRecord> run_estimator(Estimator e, const Sample& sample, const McOptions& opt) {
  const std::size_t nq = opt.quantiles.size();
  std::vector<CellRecord> out(nq);
  if (e == Estimator::tobit_cmle) {
    try {
      const TobitFit t = tobit_cmle(sample.data, opt.base.first_stage);
      for (auto& rec : out) {
        rec.ok = true;
        rec.d_coefficient = t.beta(1);
        rec.control_coefficient = t.beta(t.beta.size() - 1);
      }
    } catch (const Error& err) {
      for (auto& rec : out) rec.error = err.what();
    }
    return out;
  }
  const CqivConfig cfg = estimator_config(e, opt.base);
  const Vector ones = Vector::Ones(sample.data.rows());
  std::shared_ptr<const ControlFunction> control;
  try {
    control = fit_cqiv_control(sample.data, cfg, ones);
  } catch (const Error& err) {
    for (auto& rec : out) rec.error = std::string("control: ") + err.what();
    return out;
  }
  for (std::size_t q = 0; q < nq; ++q) {
    CqivConfig c = cfg;
    c.u = opt.quantiles[q];
    try {
      const CqivFit fit = fit_cqiv(sample.data, c, ones, control);
      out[q].ok = true;
      out[q].d_coefficient = fit.beta(*fit.regressors.find(TermKind::d));
      if (auto k = fit.regressors.find(TermKind::control)) out[q].control_coefficient = fit.beta(*k);
      out[q].summary = summarize(fit);
    } catch (const Error& err) {
      out[q].error = err.what();
    }
  }
  return out;
}

}  // namespace detail

inline McResult run_monte_carlo(const McDesign& design, const McOptions& opt) {
  design.validate();
  if (opt.estimators.empty()) throw DomainError("estimator list is empty");
  for (double u : opt.quantiles) {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("quantiles must lie in (0, 1)");
  }
  McResult res;
  res.design = design;
  res.options = opt;
  const auto reps = static_cast<std::size_t>(std::max<Index>(opt.replications, 0));
  const std::size_t ne = opt.estimators.size();
  const std::size_t nq = opt.quantiles.size();
  res.records.assign(reps, {});

  std::vector<std::size_t> order(reps);
  for (std::size_t r = 0; r < reps; ++r) order[r] = r;
  if (!opt.order.empty()) {
    if (opt.order.size() != reps) throw DomainError("replication order has the wrong length");
    for (std::size_t k = 0; k < reps; ++k) order[k] = static_cast<std::size_t>(opt.order[k]);
  }

  parallel_for(reps, [&](std::size_t k) {
    const std::size_t r = order[k];
    Rng rng = child_rng(opt.seed, r);
    const Sample sample = generate_design(design, rng);
    auto& rec = res.records[r];
    rec.resize(ne);
    for (std::size_t e = 0; e < ne; ++e) rec[e] = detail::run_estimator(opt.estimators[e], sample, opt);
  });

  // Aggregation in replication order.
  res.cells.assign(ne, std::vector<CellAggregate>(nq));
  for (std::size_t e = 0; e < ne; ++e) {
    for (std::size_t q = 0; q < nq; ++q) {
      CellAggregate& a = res.cells[e][q];
      double bias = 0.0, sq = 0.0;
      std::vector<double> controls;
      for (std::size_t r = 0; r < reps; ++r) {
        const CellRecord& c = res.records[r][e][q];
        if (!c.ok) {
          ++a.failure_count;
          continue;
        }
        ++a.replication_count;
        const double err = c.d_coefficient - design.beta1;
        bias += err;
        sq += err * err;
        if (std::isfinite(c.control_coefficient)) controls.push_back(c.control_coefficient);
      }
      if (a.replication_count > 0) {
        a.mean_bias = bias / static_cast<double>(a.replication_count);
        a.rmse = std::sqrt(sq / static_cast<double>(a.replication_count));
      }
      if (!controls.empty()) {
        double s = 0.0;
        for (double v : controls) s += v;
        a.mean_control = s / static_cast<double>(controls.size());
        a.median_control = sample_quantile(controls, 0.5);
      }
    }
  }
  return res;
}

}  // namespace cqiv::sim
