#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "cqiv/num/linalg.hpp"
#include "cqiv/num/normal.hpp"

namespace cqiv::num {

enum class Link { probit, logit };

/// Linear predictors are capped at this magnitude when turned into
/// probabilities, and a class whose rows all lie beyond it signals
/// quasi-separation.
inline constexpr double kLinearPredictorCap = 30.0;

inline double link_cdf(Link link, double eta) {
  eta = std::clamp(eta, -kLinearPredictorCap, kLinearPredictorCap);
  if (link == Link::probit) return normal_cdf(eta);
  return 1.0 / (1.0 + std::exp(-eta));
}

inline double link_quantile(Link link, double p) {
  if (link == Link::probit) return normal_quantile(p);
  if (!(p > 0.0 && p < 1.0)) throw DomainError("logit quantile requires p in (0,1)");
  return std::log(p / (1.0 - p));
}

struct GlmFit {
  Vector delta;
  Link link = Link::probit;
  double loglik = 0.0;
  bool converged = false;
  bool quasi_separated = false;
  int iterations = 0;

  [[nodiscard]] double probability(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return link_cdf(link, row.dot(delta));
  }
};

struct GlmOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-9;  ///< relative to total weight
};

namespace detail {

struct GlmTerms {
  double loglik = 0.0;
  Vector score;
  Matrix hessian;  // of the log-likelihood (negative definite)
};

// Log-likelihood, score and observed Hessian at delta.
inline GlmTerms glm_terms(const Matrix& x, const Vector& t, const Vector& w, Link link,
                          const Vector& delta, bool with_derivatives) {
  const Index p = x.cols();
  GlmTerms out;
  if (with_derivatives) {
    out.score = Vector::Zero(p);
    out.hessian = Matrix::Zero(p, p);
  }
  Vector curvature(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    if (w(i) == 0.0) {
      curvature(i) = 0.0;
      continue;
    }
    const double eta = x.row(i).dot(delta);
    double ll, d1, d2;
    if (link == Link::probit) {
      // log Phi(s*eta) with s = +1 for ones, -1 for zeros
      const double sgn = t(i) > 0.5 ? 1.0 : -1.0;
      const double a = sgn * eta;
      const double lambda = mills_ratio(a);
      ll = log_normal_cdf(a);
      d1 = sgn * lambda;
      d2 = -lambda * (a + lambda);
    } else {
      const double mu = 1.0 / (1.0 + std::exp(-eta));
      ll = t(i) > 0.5 ? -std::log1p(std::exp(-eta)) : -std::log1p(std::exp(eta));
      d1 = t(i) - mu;
      d2 = -mu * (1.0 - mu);
    }
    out.loglik += w(i) * ll;
    if (with_derivatives) {
      out.score += (w(i) * d1) * x.row(i).transpose();
      curvature(i) = w(i) * d2;
    }
  }
  if (with_derivatives) out.hessian = x.transpose() * curvature.asDiagonal() * x;
  return out;
}

}  // namespace detail

/// Weighted log-likelihood of a binary-response model at `delta`.
inline double glm_loglik(const Matrix& x, const Vector& t, const Vector& w, Link link,
                         const Vector& delta) {
  return detail::glm_terms(x, t, w, link, delta, false).loglik;
}

inline Vector glm_score(const Matrix& x, const Vector& t, const Vector& w, Link link,
                        const Vector& delta) {
  return detail::glm_terms(x, t, w, link, delta, true).score;
}

/// Maximum likelihood for P(t=1|x) = Lambda(x'delta) by Newton's method with
/// step-halving. Throws Separation when a class is missing among the
/// positively weighted rows.
inline GlmFit fit_binary_glm(const Matrix& x, const Vector& t, Link link, const Vector& w,
                             const GlmOptions& opt = {}) {
  if (x.rows() != t.size() || x.rows() != w.size()) throw DomainError("fit_binary_glm: dimension mismatch");
  require_finite(x, "design matrix");
  require_finite(w, "weights");
  double ones = 0.0;
  double zeros = 0.0;
  double total = 0.0;
  Index support = 0;
  for (Index i = 0; i < x.rows(); ++i) {
    if (w(i) <= 0.0) continue;
    ++support;
    total += w(i);
    (t(i) > 0.5 ? ones : zeros) += w(i);
  }
  if (ones == 0.0 || zeros == 0.0) throw Separation("binary response has a single class on the weighted sample");
  {
    Matrix xs(support, x.cols());
    Index k = 0;
    for (Index i = 0; i < x.rows(); ++i) {
      if (w(i) > 0.0) xs.row(k++) = x.row(i);
    }
    if (numerical_rank(xs) < x.cols()) throw RankDeficient("binary regression design is rank deficient");
  }

  GlmFit fit;
  fit.link = link;
  fit.delta = Vector::Zero(x.cols());
  detail::GlmTerms cur = detail::glm_terms(x, t, w, link, fit.delta, true);
  const double tol = opt.gradient_tolerance * std::max(1.0, total);

  // Under complete separation the score vanishes numerically while the
  // likelihood keeps increasing; such points are not accepted as optima.
  const auto separates = [&](const Vector& delta) {
    for (Index i = 0; i < x.rows(); ++i) {
      if (w(i) <= 0.0) continue;
      const double eta = x.row(i).dot(delta);
      if ((t(i) > 0.5) != (eta > 0.0)) return false;
    }
    return true;
  };

  for (fit.iterations = 0; fit.iterations < opt.max_iterations; ++fit.iterations) {
    if (cur.score.cwiseAbs().maxCoeff() <= tol && !separates(fit.delta)) {
      fit.converged = true;
      break;
    }
    Eigen::LDLT<Matrix> ldlt(-cur.hessian);
    Vector step = ldlt.solve(cur.score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) step = cur.score;
    double scale = 1.0;
    detail::GlmTerms next;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      const Vector trial = fit.delta + scale * step;
      next = detail::glm_terms(x, t, w, link, trial, true);
      if (std::isfinite(next.loglik) && next.loglik >= cur.loglik - 1e-12 * std::abs(cur.loglik)) {
        fit.delta = trial;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
    cur = std::move(next);

    // Quasi-separation: every row of one class sits beyond the cap.
    bool ones_beyond = true;
    bool zeros_beyond = true;
    for (Index i = 0; i < x.rows(); ++i) {
      if (w(i) <= 0.0) continue;
      const double eta = x.row(i).dot(fit.delta);
      if (t(i) > 0.5) ones_beyond = ones_beyond && eta > kLinearPredictorCap;
      else zeros_beyond = zeros_beyond && eta < -kLinearPredictorCap;
    }
    if (ones_beyond || zeros_beyond) {
      fit.quasi_separated = true;
      break;
    }
  }
  fit.loglik = cur.loglik;
  if (!fit.converged && !fit.quasi_separated && cur.score.cwiseAbs().maxCoeff() <= tol &&
      !separates(fit.delta)) {
    fit.converged = true;
  }
  return fit;
}

inline GlmFit fit_binary_glm(const Matrix& x, const Vector& t, Link link, const GlmOptions& opt = {}) {
  return fit_binary_glm(x, t, link, Vector::Ones(x.rows()), opt);
}

}  // namespace cqiv::num
