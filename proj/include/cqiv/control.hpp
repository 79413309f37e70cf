#pragma once

// First-stage estimation of the control variable V = F_D(D | W, Z).
//
// Three estimators share one evaluation interface:
//   ols_ecdf  weighted least squares of D on R, V = ECDF of the residuals
//   qr_grid   quantile regressions on a grid, V = share of grid quantiles
//             whose prediction r'pi(v) lies at or below d
//   dist_reg  binary regressions of 1(D <= d_g) on R over a threshold grid,
//             V = Lambda(r'pi(d_g)) at the smallest retained threshold >= d
// Every evaluation is clamped to [1/(2n), 1 - 1/(2n)] before the optional
// normal-quantile transform.

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "cqiv/data.hpp"
#include "cqiv/num/ecdf.hpp"
#include "cqiv/num/glm.hpp"
#include "cqiv/num/normal.hpp"
#include "cqiv/num/ols.hpp"
#include "cqiv/num/quantile_regression.hpp"
#include "cqiv/parallel.hpp"

namespace cqiv {

enum class ControlMethod { ols_ecdf, qr_grid, dist_reg };
enum class ControlTransform { identity, normal_quantile };

inline std::string to_string(ControlMethod m) {
  switch (m) {
    case ControlMethod::ols_ecdf: return "ols";
    case ControlMethod::qr_grid: return "qr";
    case ControlMethod::dist_reg: return "dr";
  }
  return "?";
}

inline std::string to_string(ControlTransform t) {
  return t == ControlTransform::identity ? "identity" : "normal_quantile";
}

class ControlFunction {
 public:
  ControlFunction() = default;

  [[nodiscard]] bool fitted() const { return fitted_; }
  [[nodiscard]] ControlMethod method() const { return method_; }
  [[nodiscard]] ControlTransform transform() const { return transform_; }
  [[nodiscard]] const FirstStageSpec& spec() const { return spec_; }
  [[nodiscard]] double clamp_epsilon() const { return eps_; }

  /// Probability grid (qr_grid) or threshold grid (dist_reg).
  [[nodiscard]] const std::vector<double>& grid() const { return grid_; }
  /// Per grid point: false when that point was dropped.
  [[nodiscard]] const std::vector<bool>& retained() const { return retained_; }
  /// First-stage coefficients, one row per grid point (one row for ols_ecdf).
  [[nodiscard]] const Matrix& coefficients() const { return coefs_; }
  /// Least-squares first-stage residuals of the fitting sample (ols_ecdf only).
  [[nodiscard]] const Vector& residuals() const { return residuals_; }

  /// Clamped estimate of V at (d, r), before any transform.
  [[nodiscard]] double evaluate_raw(double d, const Eigen::RowVectorXd& r) const {
    require_fitted();
    double v = 0.0;
    switch (method_) {
      case ControlMethod::ols_ecdf:
        v = ecdf_(d - r.dot(coefs_.row(0)), num::EcdfMode::midpoint);
        break;
      case ControlMethod::qr_grid: {
        Index hits = 0;
        Index used = 0;
        for (std::size_t g = 0; g < grid_.size(); ++g) {
          if (!retained_[g]) continue;
          ++used;
          if (r.dot(coefs_.row(static_cast<Index>(g))) <= d) ++hits;
        }
        v = static_cast<double>(hits) / static_cast<double>(used);
        break;
      }
      case ControlMethod::dist_reg: {
        const Index g = threshold_for(d);
        v = num::link_cdf(spec_.link, r.dot(coefs_.row(g)));
        break;
      }
    }
    return std::clamp(v, eps_, 1.0 - eps_);
  }

  [[nodiscard]] double apply_transform(double v) const {
    return transform_ == ControlTransform::normal_quantile ? num::normal_quantile(v) : v;
  }

  /// Transformed control value for one observation.
  [[nodiscard]] double evaluate(double d, Eigen::Ref<const Eigen::RowVectorXd> w_row,
                                Eigen::Ref<const Eigen::RowVectorXd> z_row) const {
    require_fitted();
    return apply_transform(evaluate_raw(d, spec_.row(*layout_, w_row, z_row)));
  }

  /// Clamped V-hat for every row of `data`.
  [[nodiscard]] Vector evaluate_raw(const Dataset& data) const {
    require_fitted();
    const Matrix r = spec_.build(data);
    Vector v(data.rows());
    if (method_ == ControlMethod::qr_grid) {
      const Matrix pred = r * coefs_.transpose();  // n x G
      Index used = 0;
      for (bool keep : retained_) used += keep ? 1 : 0;
      for (Index i = 0; i < data.rows(); ++i) {
        Index hits = 0;
        for (std::size_t g = 0; g < grid_.size(); ++g) {
          if (retained_[g] && pred(i, static_cast<Index>(g)) <= data.d(i)) ++hits;
        }
        v(i) = std::clamp(static_cast<double>(hits) / static_cast<double>(used), eps_, 1.0 - eps_);
      }
      return v;
    }
    for (Index i = 0; i < data.rows(); ++i) v(i) = evaluate_raw(data.d(i), r.row(i));
    return v;
  }

  /// Transformed control values for every row of `data`.
  [[nodiscard]] Vector evaluate(const Dataset& data) const {
    Vector v = evaluate_raw(data);
    if (transform_ == ControlTransform::normal_quantile) {
      for (Index i = 0; i < v.size(); ++i) v(i) = num::normal_quantile(v(i));
    }
    return v;
  }

  friend ControlFunction fit_control_ols(const Dataset&, const FirstStageSpec&, const Vector&,
                                         ControlTransform);
  friend ControlFunction fit_control_qr(const Dataset&, const FirstStageSpec&, const Vector&,
                                        ControlTransform);
  friend ControlFunction fit_control_dr(const Dataset&, const FirstStageSpec&, const Vector&,
                                        ControlTransform);

 private:
  void require_fitted() const {
    if (!fitted_) throw NotFitted("control function has not been fitted");
  }

  // Smallest retained threshold >= d; the largest retained one above the grid.
  [[nodiscard]] Index threshold_for(double d) const {
    auto it = std::lower_bound(grid_.begin(), grid_.end(), d);
    auto g = static_cast<std::size_t>(it - grid_.begin());
    for (std::size_t k = g; k < grid_.size(); ++k) {
      if (retained_[k]) return static_cast<Index>(k);
    }
    for (std::size_t k = std::min(g, grid_.size()); k-- > 0;) {
      if (retained_[k]) return static_cast<Index>(k);
    }
    throw NotFitted("distribution regression retained no thresholds");
  }

  void init(const Dataset& data, const FirstStageSpec& spec, ControlMethod method,
            ControlTransform transform) {
    method_ = method;
    transform_ = transform;
    spec_ = spec;
    eps_ = 1.0 / (2.0 * static_cast<double>(data.rows()));
    // Column layout only; the spec resolves "all columns" against it.
    layout_ = std::make_shared<Dataset>();
    layout_->w = Matrix(0, data.w.cols());
    layout_->z = Matrix(0, data.z.cols());
  }

  ControlMethod method_ = ControlMethod::ols_ecdf;
  ControlTransform transform_ = ControlTransform::identity;
  FirstStageSpec spec_;
  std::shared_ptr<Dataset> layout_;
  double eps_ = 0.0;
  Matrix coefs_;
  Vector residuals_;
  num::WeightedEcdf ecdf_;
  std::vector<double> grid_;
  std::vector<bool> retained_;
  bool fitted_ = false;
};

namespace detail {

inline void check_first_stage(const Dataset& data, const Vector& w) {
  data.validate();
  if (w.size() != data.rows()) throw DomainError("weight vector length does not match the data");
  num::require_finite(w, "weights");
  if ((w.array() < 0.0).any()) throw DomainError("negative weight");
}

}  // namespace detail

inline ControlFunction fit_control_ols(const Dataset& data, const FirstStageSpec& spec,
                                       const Vector& w,
                                       ControlTransform transform = ControlTransform::identity) {
  detail::check_first_stage(data, w);
  ControlFunction cf;
  cf.init(data, spec, ControlMethod::ols_ecdf, transform);
  const Matrix r = spec.build(data);
  const Vector pi = num::solve_ols(r, data.d, w);
  cf.coefs_ = pi.transpose();
  cf.residuals_ = data.d - r * pi;
  std::vector<double> res;
  std::vector<double> wts;
  for (Index i = 0; i < data.rows(); ++i) {
    if (w(i) > 0.0) {
      res.push_back(cf.residuals_(i));
      wts.push_back(w(i));
    }
  }
  cf.ecdf_ = num::WeightedEcdf(res, wts);
  cf.fitted_ = true;
  return cf;
}

inline ControlFunction fit_control_qr(const Dataset& data, const FirstStageSpec& spec,
                                      const Vector& w,
                                      ControlTransform transform = ControlTransform::identity) {
  detail::check_first_stage(data, w);
  if (spec.qr_grid_size < 2) throw DomainError("quantile grid needs at least two points");
  ControlFunction cf;
  cf.init(data, spec, ControlMethod::qr_grid, transform);
  const Matrix r = spec.build(data);
  const Index grid_size = spec.qr_grid_size;
  cf.grid_.resize(static_cast<std::size_t>(grid_size));
  cf.coefs_ = Matrix::Zero(grid_size, r.cols());
  std::vector<char> ok(static_cast<std::size_t>(grid_size), 1);
  for (Index g = 0; g < grid_size; ++g) {
    cf.grid_[static_cast<std::size_t>(g)] = static_cast<double>(g + 1) / static_cast<double>(grid_size + 1);
  }
  parallel_for(static_cast<std::size_t>(grid_size), [&](std::size_t g) {
    try {
      cf.coefs_.row(static_cast<Index>(g)) = num::solve_weighted_qr(r, data.d, cf.grid_[g], w).beta.transpose();
    } catch (const RankDeficient&) {
      ok[g] = 0;
    }
  });
  cf.retained_.assign(ok.begin(), ok.end());
  const auto failed = static_cast<Index>(std::count(ok.begin(), ok.end(), 0));
  if (failed > 0 && 20 * failed >= grid_size) {
    throw RankDeficient("first-stage quantile regression failed at " + std::to_string(failed) + " of " +
                        std::to_string(grid_size) + " grid points");
  }
  cf.fitted_ = true;
  return cf;
}

inline ControlFunction fit_control_dr(const Dataset& data, const FirstStageSpec& spec,
                                      const Vector& w,
                                      ControlTransform transform = ControlTransform::identity) {
  detail::check_first_stage(data, w);
  ControlFunction cf;
  cf.init(data, spec, ControlMethod::dist_reg, transform);
  const Matrix r = spec.build(data);

  std::vector<double> distinct(data.d.data(), data.d.data() + data.rows());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const auto m = static_cast<Index>(distinct.size());
  const Index k = spec.dr_max_thresholds > 0 ? std::min(m, spec.dr_max_thresholds) : m;
  if (k < 2) throw DomainError("distribution regression needs at least two distinct values of D");
  for (Index g = 0; g < k; ++g) {
    // equally spaced order statistics, always including min and max
    const auto pos = static_cast<std::size_t>(
        std::llround(static_cast<double>(g) * static_cast<double>(m - 1) / static_cast<double>(k - 1)));
    cf.grid_.push_back(distinct[pos]);
  }
  cf.grid_.erase(std::unique(cf.grid_.begin(), cf.grid_.end()), cf.grid_.end());

  const auto grid_size = static_cast<Index>(cf.grid_.size());
  cf.coefs_ = Matrix::Zero(grid_size, r.cols());
  std::vector<char> ok(cf.grid_.size(), 0);
  parallel_for(cf.grid_.size(), [&](std::size_t g) {
    Vector t(data.rows());
    for (Index i = 0; i < data.rows(); ++i) t(i) = data.d(i) <= cf.grid_[g] ? 1.0 : 0.0;
    try {
      cf.coefs_.row(static_cast<Index>(g)) = num::fit_binary_glm(r, t, spec.link, w).delta.transpose();
      ok[g] = 1;
    } catch (const Separation&) {
    } catch (const RankDeficient&) {
    }
  });
  cf.retained_.assign(ok.begin(), ok.end());
  if (std::none_of(cf.retained_.begin(), cf.retained_.end(), [](bool b) { return b; })) {
    throw Separation("distribution regression: every threshold is degenerate");
  }
  cf.fitted_ = true;
  return cf;
}

inline ControlFunction fit_control(ControlMethod method, const Dataset& data, const FirstStageSpec& spec,
                                   const Vector& w,
                                   ControlTransform transform = ControlTransform::identity) {
  switch (method) {
    case ControlMethod::ols_ecdf: return fit_control_ols(data, spec, w, transform);
    case ControlMethod::qr_grid: return fit_control_qr(data, spec, w, transform);
    case ControlMethod::dist_reg: return fit_control_dr(data, spec, w, transform);
  }
  throw DomainError("unknown control method");
}

}  // namespace cqiv
