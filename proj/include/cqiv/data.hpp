#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cqiv/num/glm.hpp"
#include "cqiv/num/linalg.hpp"

namespace cqiv {

using num::Index;
using num::Matrix;
using num::Vector;

/// Observation table: response Y, endogenous regressor D, exogenous
/// covariates W, instruments Z and per-row censoring points C, with
/// Y = max(Y*, C).
struct Dataset {
  Vector y;
  Vector d;
  Matrix w;  // n x kw
  Matrix z;  // n x kz
  Vector c;
  std::string y_name = "y";
  std::string d_name = "d";
  std::vector<std::string> w_names;
  std::vector<std::string> z_names;

  [[nodiscard]] Index rows() const { return y.size(); }

  void validate() const {
    const Index n = rows();
    if (n == 0) throw DomainError("dataset is empty");
    if (d.size() != n || c.size() != n || w.rows() != n || z.rows() != n) {
      throw DomainError("dataset columns have inconsistent lengths");
    }
    num::require_finite(y, "response column");
    num::require_finite(d, "endogenous column");
    num::require_finite(c, "censoring column");
    num::require_finite(w, "covariate columns");
    num::require_finite(z, "instrument columns");
  }

  [[nodiscard]] bool censored(Index i) const { return y(i) <= c(i); }

  [[nodiscard]] double censored_fraction() const {
    Index k = 0;
    for (Index i = 0; i < rows(); ++i) k += censored(i) ? 1 : 0;
    return static_cast<double>(k) / static_cast<double>(rows());
  }

  [[nodiscard]] bool constant_censoring() const {
    return c.size() == 0 || c.maxCoeff() - c.minCoeff() <= 1e-12 * (1.0 + c.cwiseAbs().maxCoeff());
  }

  [[nodiscard]] Dataset subset(std::span<const Index> rows_kept) const {
    Dataset out = *this;
    out.y = num::take(y, rows_kept);
    out.d = num::take(d, rows_kept);
    out.c = num::take(c, rows_kept);
    out.w = num::take_rows(w, rows_kept);
    out.z = num::take_rows(z, rows_kept);
    return out;
  }
};

/// Regressors of the first stage, R = r(W, Z): an optional intercept, chosen
/// W and Z columns and optionally their squares.
struct FirstStageSpec {
  bool intercept = true;
  std::optional<std::vector<Index>> w_columns;  ///< all W columns when unset
  std::optional<std::vector<Index>> z_columns;  ///< all Z columns when unset
  bool squares = false;
  Index qr_grid_size = 99;       ///< quantile grid 1/(G+1), ..., G/(G+1)
  Index dr_max_thresholds = 200; ///< 0 uses every distinct value of D
  num::Link link = num::Link::probit;

  [[nodiscard]] std::vector<Index> w_cols(const Dataset& data) const {
    return w_columns ? *w_columns : all(data.w.cols());
  }
  [[nodiscard]] std::vector<Index> z_cols(const Dataset& data) const {
    return z_columns ? *z_columns : all(data.z.cols());
  }

  [[nodiscard]] Index width(const Dataset& data) const {
    const auto k = static_cast<Index>(w_cols(data).size() + z_cols(data).size());
    return (intercept ? 1 : 0) + (squares ? 2 * k : k);
  }

  [[nodiscard]] Eigen::RowVectorXd row(const Dataset& data, Eigen::Ref<const Eigen::RowVectorXd> w_row,
                                       Eigen::Ref<const Eigen::RowVectorXd> z_row) const {
    Eigen::RowVectorXd r(width(data));
    Index k = 0;
    if (intercept) r(k++) = 1.0;
    for (Index j : w_cols(data)) r(k++) = w_row(j);
    for (Index j : z_cols(data)) r(k++) = z_row(j);
    if (squares) {
      for (Index j : w_cols(data)) r(k++) = w_row(j) * w_row(j);
      for (Index j : z_cols(data)) r(k++) = z_row(j) * z_row(j);
    }
    return r;
  }

  [[nodiscard]] Matrix build(const Dataset& data) const {
    if (!intercept && w_cols(data).empty() && z_cols(data).empty()) {
      throw SpecMismatch("first stage has no regressors");
    }
    Matrix r(data.rows(), width(data));
    for (Index i = 0; i < data.rows(); ++i) r.row(i) = row(data, data.w.row(i), data.z.row(i));
    return r;
  }

 private:
  static std::vector<Index> all(Index k) {
    std::vector<Index> v(static_cast<std::size_t>(k));
    for (Index j = 0; j < k; ++j) v[static_cast<std::size_t>(j)] = j;
    return v;
  }
};

enum class TermKind { intercept, d, d_squared, w, control };

struct Term {
  TermKind kind = TermKind::intercept;
  Index index = 0;  ///< W column for TermKind::w
};

/// Second-stage regressors x(D, W, V), as an ordered list of terms.
struct RegressorSpec {
  std::vector<Term> terms;

  /// (1, D, W..., V) -- the simulation and generic default.
  static RegressorSpec standard(Index w_count, bool with_control) {
    RegressorSpec s;
    s.terms.push_back({TermKind::intercept, 0});
    s.terms.push_back({TermKind::d, 0});
    for (Index j = 0; j < w_count; ++j) s.terms.push_back({TermKind::w, j});
    if (with_control) s.terms.push_back({TermKind::control, 0});
    return s;
  }

  /// (1, D, D^2, W..., V) -- the Engel-curve specification.
  static RegressorSpec quadratic(Index w_count, bool with_control) {
    RegressorSpec s;
    s.terms.push_back({TermKind::intercept, 0});
    s.terms.push_back({TermKind::d, 0});
    s.terms.push_back({TermKind::d_squared, 0});
    for (Index j = 0; j < w_count; ++j) s.terms.push_back({TermKind::w, j});
    if (with_control) s.terms.push_back({TermKind::control, 0});
    return s;
  }

  [[nodiscard]] Index size() const { return static_cast<Index>(terms.size()); }

  [[nodiscard]] std::optional<Index> find(TermKind kind) const {
    for (std::size_t k = 0; k < terms.size(); ++k) {
      if (terms[k].kind == kind) return static_cast<Index>(k);
    }
    return std::nullopt;
  }

  [[nodiscard]] bool has_control() const { return find(TermKind::control).has_value(); }

  [[nodiscard]] std::string label(std::size_t k, const Dataset* data = nullptr) const {
    const Term& t = terms[k];
    switch (t.kind) {
      case TermKind::intercept: return "intercept";
      case TermKind::d: return data ? data->d_name : "d";
      case TermKind::d_squared: return (data ? data->d_name : std::string("d")) + "^2";
      case TermKind::w:
        if (data && static_cast<std::size_t>(t.index) < data->w_names.size()) {
          return data->w_names[static_cast<std::size_t>(t.index)];
        }
        return "w" + std::to_string(t.index);
      case TermKind::control: return "control";
    }
    return "?";
  }

  [[nodiscard]] Eigen::RowVectorXd row(double d, Eigen::Ref<const Eigen::RowVectorXd> w_row,
                                       double control) const {
    Eigen::RowVectorXd x(size());
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const Term& t = terms[k];
      double v = 0.0;
      switch (t.kind) {
        case TermKind::intercept: v = 1.0; break;
        case TermKind::d: v = d; break;
        case TermKind::d_squared: v = d * d; break;
        case TermKind::w:
          if (t.index >= w_row.size()) throw SpecMismatch("second stage references a missing W column");
          v = w_row(t.index);
          break;
        case TermKind::control: v = control; break;
      }
      x(static_cast<Index>(k)) = v;
    }
    return x;
  }

  /// Builds X-hat. `control` may be empty when the spec has no control term.
  [[nodiscard]] Matrix build(const Dataset& data, const Vector& control) const {
    if (has_control() && control.size() != data.rows()) {
      throw NotFitted("second stage needs control-variable values");
    }
    Matrix x(data.rows(), size());
    for (Index i = 0; i < data.rows(); ++i) {
      x.row(i) = row(data.d(i), data.w.row(i), has_control() ? control(i) : 0.0);
    }
    return x;
  }
};

/// Type-7 (linear interpolation) sample quantile, q in [0, 1].
inline double sample_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("sample_quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const double lo = std::floor(h);
  const auto i = static_cast<std::size_t>(lo);
  const std::size_t j = std::min(i + 1, values.size() - 1);
  return values[i] + (h - lo) * (values[j] - values[i]);
}

}  // namespace cqiv
