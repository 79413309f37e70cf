#pragma once

// Censored quantile instrumental-variable estimation.
//
// Step 0 fits the control variable and builds X-hat. Step 1 fits a binary
// model for P(Y > C | S-hat) and keeps the rows whose fitted probability
// clears 1 - u + k0. Step 2 runs quantile regression on that set. Each later
// step reselects the rows with X-hat'beta - C above a cut-off and refits.
// The censored (Powell) objective on the full sample is recorded after every
// step from step 2 on.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cqiv/control.hpp"
#include "cqiv/data.hpp"
#include "cqiv/num/check_loss.hpp"
#include "cqiv/num/glm.hpp"
#include "cqiv/num/quantile_regression.hpp"
#include "cqiv/parallel.hpp"

namespace cqiv {

struct CqivConfig {
  double u = 0.5;
  std::optional<ControlMethod> control_method = ControlMethod::ols_ecdf;  ///< nullopt: no control term
  ControlTransform transform = ControlTransform::normal_quantile;
  FirstStageSpec first_stage;
  std::optional<RegressorSpec> second_stage;  ///< (1, D, W..., V) when unset
  bool censoring_correction = true;
  num::Link selector_link = num::Link::probit;
  double q0 = 10.0;  ///< percent
  double q1 = 3.0;   ///< percent
  int max_extra_iterations = 5;
  bool retain_best_by_powell = true;

  void validate() const {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile u must lie in (0, 1)");
    if (!(q1 >= 0.0 && q1 < q0 && q0 < 100.0)) throw DomainError("percentages must satisfy 0 <= q1 < q0 < 100");
    if (max_extra_iterations < 0) throw DomainError("max_extra_iterations must be nonnegative");
  }

  [[nodiscard]] RegressorSpec regressors(const Dataset& data) const {
    RegressorSpec spec = second_stage ? *second_stage
                                      : RegressorSpec::standard(data.w.cols(), control_method.has_value());
    if (spec.has_control() && !control_method) {
      throw SpecMismatch("second stage uses the control variable but no control method is set");
    }
    for (const Term& t : spec.terms) {
      if (t.kind == TermKind::w && (t.index < 0 || t.index >= data.w.cols())) {
        throw SpecMismatch("second stage references W column " + std::to_string(t.index) + " which does not exist");
      }
    }
    return spec;
  }
};

/// One estimation step. Step 2 is selected by the binary model, later steps
/// by the previous coefficients. Fields that do not apply are NaN.
struct StepDiagnostics {
  int step = 2;
  double k0 = std::numeric_limits<double>::quiet_NaN();
  double varsigma = std::numeric_limits<double>::quiet_NaN();
  double threshold = std::numeric_limits<double>::quiet_NaN();  ///< 1-u+k0, or the cut-off on X'b - C
  double pct_candidates = 0.0;  ///< % of rows with P > 1-u (step 2) or X'b_prev > C (later)
  double pct_selected = 0.0;
  double pct_prev_in_current = std::numeric_limits<double>::quiet_NaN();
  Index count_current_not_in_prev = 0;
  Index selected_count = 0;
  double powell_objective = 0.0;
  Vector beta;
};

/// The rule that produced a step's estimation sample, reusable on a new X-hat.
struct SelectorRule {
  enum class Kind { all_rows, binary_model, linear } kind = Kind::all_rows;
  Vector coefficients;   ///< delta (binary_model) or the previous beta (linear)
  double threshold = 0;  ///< 1-u+k0 or varsigma
  bool include_c = false;
  num::Link link = num::Link::probit;

  [[nodiscard]] std::vector<Index> apply(const Matrix& xhat, const Vector& c, const Vector& w) const {
    std::vector<Index> out;
    for (Index i = 0; i < xhat.rows(); ++i) {
      if (w(i) <= 0.0) continue;
      bool keep = true;
      if (kind == Kind::binary_model) {
        double eta = xhat.row(i).dot(coefficients.head(xhat.cols()));
        if (include_c) eta += coefficients(xhat.cols()) * c(i);
        const double p = num::link_cdf(link, eta);
        keep = p > threshold || eta >= num::kLinearPredictorCap || (threshold >= 1.0 && p >= threshold);
      } else if (kind == Kind::linear) {
        keep = xhat.row(i).dot(coefficients) - c(i) > threshold;
      }
      if (keep) out.push_back(i);
    }
    return out;
  }
};

struct CqivFit {
  double u = 0.5;
  Vector beta;
  std::vector<StepDiagnostics> steps;
  std::size_t retained = 0;  ///< index into steps
  RegressorSpec regressors;
  std::shared_ptr<const ControlFunction> control;  ///< null without a control term
  SelectorRule rule;                               ///< rule of the retained step
  std::vector<Index> selected;                     ///< estimation rows of the retained step
  std::optional<num::GlmFit> selector_model;
  bool fitted = false;

  [[nodiscard]] int selected_step() const { return steps.empty() ? 0 : steps[retained].step; }
  [[nodiscard]] const StepDiagnostics& step(int s) const {
    for (const auto& d : steps) {
      if (d.step == s) return d;
    }
    throw DomainError("step " + std::to_string(s) + " was not run");
  }
};

namespace detail {

inline Vector control_values(const std::shared_ptr<const ControlFunction>& cf, const Dataset& data) {
  return cf ? cf->evaluate(data) : Vector();
}

inline double percent(Index k, Index n) { return 100.0 * static_cast<double>(k) / static_cast<double>(n); }

inline std::string censoring_message(const Dataset& data, double u) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "no quantile-uncensored candidates at u = %.4g (censored fraction %.1f%%)", u,
                100.0 * data.censored_fraction());
  return buf;
}

inline num::QuantileFit fit_on(const Matrix& xhat, const Vector& y, const Vector& w, double u,
                               const std::vector<Index>& rows) {
  if (static_cast<Index>(rows.size()) < xhat.cols()) {
    throw RankDeficient("selected sample has " + std::to_string(rows.size()) + " rows for " +
                        std::to_string(xhat.cols()) + " coefficients");
  }
  return num::solve_weighted_qr(num::take_rows(xhat, rows), num::take(y, rows), u, num::take(w, rows));
}

// Percentile (type 7, q in percent) of the values with positive weight.
inline double support_percentile(const std::vector<double>& values, double q) {
  return sample_quantile(values, q / 100.0);
}

}  // namespace detail

/// Weighted mean of rho_u(Y - max(X-hat'beta, C)) over the full sample.
inline double powell_objective(const Vector& beta, const Matrix& xhat, const Vector& y, const Vector& c, double u,
                               const Vector& w) {
  if (beta.size() != xhat.cols()) throw SpecMismatch("coefficient length does not match the regressors");
  double total = 0.0;
  double weight = 0.0;
  for (Index i = 0; i < xhat.rows(); ++i) {
    if (w(i) == 0.0) continue;
    total += w(i) * num::check_loss(y(i) - std::max(xhat.row(i).dot(beta), c(i)), u);
    weight += w(i);
  }
  if (weight <= 0.0) throw DomainError("powell_objective needs positive total weight");
  return total / weight;
}

inline double powell_objective(const Vector& beta, const Dataset& data, const ControlFunction* cf,
                               const RegressorSpec& spec, double u, const Vector& w) {
  Vector v;
  if (spec.has_control()) {
    if (cf == nullptr || !cf->fitted()) throw NotFitted("control function has not been fitted");
    v = cf->evaluate(data);
  }
  return powell_objective(beta, spec.build(data, v), data.y, data.c, u, w);
}

struct J0Selection {
  std::vector<Index> rows;
  double k0 = 0.0;
  double pct_candidates = 0.0;
  std::optional<num::GlmFit> model;  ///< empty when every row is uncensored
  SelectorRule rule;
};

/// Step 1: binary model of 1(Y > C) on S-hat = (X-hat, C), C dropped when constant.
inline J0Selection select_J0(const Dataset& data, const Matrix& xhat, const Vector& w, const CqivConfig& cfg) {
  const Index n = data.rows();
  const bool include_c = !data.constant_censoring();
  Matrix s(n, xhat.cols() + (include_c ? 1 : 0));
  s.leftCols(xhat.cols()) = xhat;
  if (include_c) s.col(xhat.cols()) = data.c;
  Vector t(n);
  bool any_censored = false;
  for (Index i = 0; i < n; ++i) {
    t(i) = data.censored(i) ? 0.0 : 1.0;
    any_censored = any_censored || (w(i) > 0.0 && t(i) == 0.0);
  }

  J0Selection out;
  out.rule.kind = SelectorRule::Kind::binary_model;
  out.rule.include_c = include_c;
  out.rule.link = cfg.selector_link;
  if (!any_censored) {
    // Nothing is censored: every row sits at the predictor cap.
    out.rule.coefficients = Vector::Zero(s.cols());
    out.rule.kind = SelectorRule::Kind::all_rows;
    out.rule.threshold = 1.0;
    for (Index i = 0; i < n; ++i) {
      if (w(i) > 0.0) out.rows.push_back(i);
    }
    out.k0 = cfg.u;
    out.pct_candidates = detail::percent(static_cast<Index>(out.rows.size()), n);
    return out;
  }

  num::GlmFit model = num::fit_binary_glm(s, t, cfg.selector_link, w);
  const Vector eta = s * model.delta;
  std::vector<double> candidates;
  for (Index i = 0; i < n; ++i) {
    if (w(i) <= 0.0) continue;
    const double p = num::link_cdf(cfg.selector_link, eta(i));
    if (p > 1.0 - cfg.u) candidates.push_back(p);
  }
  if (candidates.empty()) throw EmptySelection(detail::censoring_message(data, cfg.u));
  out.pct_candidates = detail::percent(static_cast<Index>(candidates.size()), n);
  out.k0 = detail::support_percentile(candidates, cfg.q0) - (1.0 - cfg.u);
  out.rule.coefficients = model.delta;
  out.rule.threshold = 1.0 - cfg.u + out.k0;
  out.rows = out.rule.apply(xhat, data.c, w);
  if (out.rows.empty()) throw EmptySelection(detail::censoring_message(data, cfg.u));
  out.model = std::move(model);
  return out;
}

struct JNextSelection {
  std::vector<Index> rows;
  double varsigma = 0.0;
  double pct_candidates = 0.0;
  SelectorRule rule;
};

/// Later steps: rows with X-hat'beta_prev - C above the q1-th percentile of
/// the positive slacks.
inline JNextSelection select_J_next(const Vector& beta_prev, const Dataset& data, const Matrix& xhat,
                                    const Vector& w, const CqivConfig& cfg) {
  num::require_finite(beta_prev, "previous coefficients");
  const Vector slack = xhat * beta_prev - data.c;
  std::vector<double> positive;
  for (Index i = 0; i < data.rows(); ++i) {
    if (w(i) > 0.0 && slack(i) > 0.0) positive.push_back(slack(i));
  }
  if (positive.empty()) {
    throw EmptySelection("previous step predicts every observation at or below its censoring point; " +
                         detail::censoring_message(data, cfg.u));
  }
  JNextSelection out;
  out.pct_candidates = detail::percent(static_cast<Index>(positive.size()), data.rows());
  out.varsigma = detail::support_percentile(positive, cfg.q1);
  out.rule.kind = SelectorRule::Kind::linear;
  out.rule.coefficients = beta_prev;
  out.rule.threshold = out.varsigma;
  out.rows = out.rule.apply(xhat, data.c, w);
  if (out.rows.empty()) throw EmptySelection(detail::censoring_message(data, cfg.u));
  return out;
}

namespace detail {

inline void overlap(StepDiagnostics& d, const std::vector<Index>& prev, const std::vector<Index>& cur) {
  // both sorted ascending
  std::vector<Index> common;
  std::set_intersection(prev.begin(), prev.end(), cur.begin(), cur.end(), std::back_inserter(common));
  d.pct_prev_in_current = prev.empty() ? 0.0 : percent(static_cast<Index>(common.size()), static_cast<Index>(prev.size()));
  d.count_current_not_in_prev = static_cast<Index>(cur.size() - common.size());
}

}  // namespace detail

inline std::shared_ptr<const ControlFunction> fit_cqiv_control(const Dataset& data, const CqivConfig& cfg,
                                                               const Vector& w) {
  if (!cfg.control_method) return nullptr;
  return std::make_shared<const ControlFunction>(
      fit_control(*cfg.control_method, data, cfg.first_stage, w, cfg.transform));
}

/// Runs the estimator for cfg.u. A fitted control may be supplied to share it
/// across quantiles; otherwise it is fitted here with the same weights.
inline CqivFit fit_cqiv(const Dataset& data, const CqivConfig& cfg, const Vector& w,
                        std::shared_ptr<const ControlFunction> control = nullptr) {
  cfg.validate();
  data.validate();
  if (w.size() != data.rows()) throw DomainError("weight vector length does not match the data");
  num::require_finite(w, "weights");
  if ((w.array() < 0.0).any()) throw DomainError("negative weight");

  CqivFit fit;
  fit.u = cfg.u;
  fit.regressors = cfg.regressors(data);
  if (fit.regressors.has_control()) {
    fit.control = control ? std::move(control) : fit_cqiv_control(data, cfg, w);
  }
  const Matrix xhat = fit.regressors.build(data, detail::control_values(fit.control, data));
  const Index n = data.rows();

  if (!cfg.censoring_correction) {
    StepDiagnostics d;
    d.step = 1;
    for (Index i = 0; i < n; ++i) {
      if (w(i) > 0.0) fit.selected.push_back(i);
    }
    d.beta = num::solve_weighted_qr(xhat, data.y, cfg.u, w).beta;
    d.selected_count = static_cast<Index>(fit.selected.size());
    d.pct_selected = detail::percent(d.selected_count, n);
    d.pct_candidates = d.pct_selected;
    d.powell_objective = powell_objective(d.beta, xhat, data.y, data.c, cfg.u, w);
    fit.rule.kind = SelectorRule::Kind::all_rows;
    fit.beta = d.beta;
    fit.steps.push_back(std::move(d));
    fit.fitted = true;
    return fit;
  }

  std::vector<SelectorRule> rules;
  std::vector<std::vector<Index>> sets;

  // Steps 1 and 2.
  J0Selection j0 = select_J0(data, xhat, w, cfg);
  {
    StepDiagnostics d;
    d.step = 2;
    d.k0 = j0.k0;
    d.threshold = j0.rule.threshold;
    d.pct_candidates = j0.pct_candidates;
    d.selected_count = static_cast<Index>(j0.rows.size());
    d.pct_selected = detail::percent(d.selected_count, n);
    d.beta = detail::fit_on(xhat, data.y, w, cfg.u, j0.rows).beta;
    d.powell_objective = powell_objective(d.beta, xhat, data.y, data.c, cfg.u, w);
    fit.steps.push_back(std::move(d));
    rules.push_back(j0.rule);
    sets.push_back(std::move(j0.rows));
    fit.selector_model = std::move(j0.model);
  }

  // Step 3 always runs; later steps stop on an objective increase, a repeated
  // selection or a failed fit.
  const int last_step = 3 + cfg.max_extra_iterations;
  for (int s = 3; s <= last_step; ++s) {
    const StepDiagnostics& prev = fit.steps.back();
    JNextSelection sel;
    num::QuantileFit qf;
    try {
      sel = select_J_next(prev.beta, data, xhat, w, cfg);
      if (s > 3 && sel.rows == sets.back()) break;
      qf = detail::fit_on(xhat, data.y, w, cfg.u, sel.rows);
    } catch (const Error&) {
      if (s == 3) throw;
      break;
    }
    StepDiagnostics d;
    d.step = s;
    d.varsigma = sel.varsigma;
    d.threshold = sel.varsigma;
    d.pct_candidates = sel.pct_candidates;
    d.selected_count = static_cast<Index>(sel.rows.size());
    d.pct_selected = detail::percent(d.selected_count, n);
    detail::overlap(d, sets.back(), sel.rows);
    d.beta = std::move(qf.beta);
    d.powell_objective = powell_objective(d.beta, xhat, data.y, data.c, cfg.u, w);
    const bool worse = d.powell_objective > prev.powell_objective;
    fit.steps.push_back(std::move(d));
    rules.push_back(sel.rule);
    sets.push_back(std::move(sel.rows));
    if (worse) break;
  }

  std::size_t keep = fit.steps.size() - 1;
  if (cfg.retain_best_by_powell) {
    keep = 0;
    for (std::size_t k = 1; k < fit.steps.size(); ++k) {
      if (fit.steps[k].powell_objective < fit.steps[keep].powell_objective) keep = k;
    }
  }
  fit.retained = keep;
  fit.beta = fit.steps[keep].beta;
  fit.rule = rules[keep];
  fit.selected = sets[keep];
  fit.fitted = true;
  return fit;
}

inline CqivFit fit_cqiv(const Dataset& data, const CqivConfig& cfg) {
  return fit_cqiv(data, cfg, Vector::Ones(data.rows()));
}

/// Fits several quantiles with one shared control fit. Quantiles run in
/// parallel and independently.
inline std::vector<CqivFit> fit_cqiv_quantiles(const Dataset& data, const CqivConfig& cfg,
                                               const std::vector<double>& quantiles, const Vector& w) {
  auto control = cfg.regressors(data).has_control() ? fit_cqiv_control(data, cfg, w) : nullptr;
  std::vector<CqivFit> fits(quantiles.size());
  parallel_for(quantiles.size(), [&](std::size_t k) {
    CqivConfig c = cfg;
    c.u = quantiles[k];
    fits[k] = fit_cqiv(data, c, w, control);
  });
  return fits;
}

namespace detail {
inline void require_fit(const CqivFit& fit) {
  if (!fit.fitted) throw NotFitted("estimator has not been fitted");
}
}  // namespace detail

/// max(x(d, w, v)'beta, c) with v given on the probability scale.
inline double predict_quantile_at(const CqivFit& fit, double d, Eigen::Ref<const Eigen::RowVectorXd> w_row,
                                  double v, double c) {
  detail::require_fit(fit);
  double control = 0.0;
  if (fit.regressors.has_control()) control = fit.control->apply_transform(v);
  return std::max(fit.regressors.row(d, w_row, control).dot(fit.beta), c);
}

/// max(x(d, w, V-hat)'beta, c) with V-hat from the fitted control function.
inline double predict_quantile(const CqivFit& fit, double d, Eigen::Ref<const Eigen::RowVectorXd> w_row,
                               Eigen::Ref<const Eigen::RowVectorXd> z_row, double c) {
  detail::require_fit(fit);
  double control = 0.0;
  if (fit.regressors.has_control()) control = fit.control->evaluate(d, w_row, z_row);
  return std::max(fit.regressors.row(d, w_row, control).dot(fit.beta), c);
}

struct Elasticity {
  double average = 0.0;
  Vector per_row;
};

/// 1(x'beta > c)(beta_D + 2 beta_D2 d) for every row of x-hat, and its mean.
inline Elasticity quantile_elasticity(const Vector& beta, const RegressorSpec& spec, const Matrix& xhat,
                                      const Vector& d, const Vector& c) {
  const auto k1 = spec.find(TermKind::d);
  const auto k2 = spec.find(TermKind::d_squared);
  if (!k1 || !k2) throw SpecMismatch("elasticity needs both D and D^2 in the second stage");
  Elasticity e;
  e.per_row.resize(xhat.rows());
  for (Index i = 0; i < xhat.rows(); ++i) {
    e.per_row(i) = xhat.row(i).dot(beta) > c(i) ? beta(*k1) + 2.0 * beta(*k2) * d(i) : 0.0;
  }
  e.average = xhat.rows() > 0 ? e.per_row.mean() : 0.0;
  return e;
}

inline Elasticity quantile_elasticity(const CqivFit& fit, const Dataset& data) {
  detail::require_fit(fit);
  const Matrix xhat = fit.regressors.build(data, detail::control_values(fit.control, data));
  return quantile_elasticity(fit.beta, fit.regressors, xhat, data.d, data.c);
}

}  // namespace cqiv
