#pragma once

// Weighted linear quantile regression.
//
// The solver runs a Frisch-Newton primal-dual interior point method on the
// dual of the check-loss linear program (bounded-variable form, Mehrotra
// predictor-corrector). The interior solution is then rounded to a vertex by
// choosing p linearly independent rows with the smallest residuals, and an
// exact edge-descent (simplex pivoting on the primal) walks from that vertex
// to an optimal basic solution. The descent also serves as the fallback when
// the interior point iterations break down.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cqiv/num/check_loss.hpp"
#include "cqiv/num/linalg.hpp"

namespace cqiv::num {

struct QuantileFit {
  Vector beta;
  double u = 0.5;
  double objective = 0.0;  ///< sum_i w_i rho_u(y_i - x_i'beta)
  Index active_count = 0;  ///< rows with (near-)zero residual
  int interior_iterations = 0;
  int pivots = 0;
  bool interior_failed = false;
};

struct QrOptions {
  double gap_tolerance = 1e-10;  ///< relative duality gap stop
  int max_interior_iterations = 100;
  double step_damping = 0.99995;
  int max_pivots = 0;  ///< 0 selects 20 * n + 100
};

namespace detail {

struct InteriorResult {
  Vector beta;
  int iterations = 0;
  bool ok = false;
};

// Frisch-Newton on the dual:  max y'a  s.t.  X'a = (1-u) X'1,  0 <= a <= 1.
// Rows of `x` and `y` are already multiplied by the observation weights.
inline InteriorResult frisch_newton(const Matrix& x, const Vector& y, double u,
                                    const QrOptions& opt) {
  const Index n = x.rows();
  constexpr double big = 1e20;
  constexpr double perturb = 1e-6;

  const Vector c = -y;
  const Vector b = (1.0 - u) * x.colwise().sum().transpose();
  Vector xp = Vector::Constant(n, 1.0 - u);
  Vector s = Vector::Constant(n, u);
  Vector d = Vector::Ones(n);

  Eigen::LLT<Matrix> chol(x.transpose() * x);
  Vector dual = chol.solve(x.transpose() * c);
  Vector slack = c - x * dual;
  Vector z(n), w(n);
  for (Index i = 0; i < n; ++i) {
    const double extra = std::abs(slack(i)) < perturb ? perturb : 0.0;
    z(i) = std::max(slack(i), 0.0) + extra;
    w(i) = std::max(-slack(i), 0.0) + extra;
  }

  const double scale = 1.0 + y.cwiseAbs().sum();
  double gap = z.dot(xp) + w.dot(s);

  Vector dx(n), ds(n), dz(n), dw(n), dr(n), aux(n);
  InteriorResult out;
  while (gap > opt.gap_tolerance * scale && out.iterations < opt.max_interior_iterations) {
    ++out.iterations;
    for (Index i = 0; i < n; ++i) {
      d(i) = 1.0 / (z(i) / xp(i) + w(i) / s(i));
      ds(i) = z(i) - w(i);
      dz(i) = d(i) * ds(i);
    }
    Vector dy = b - x.transpose() * xp + x.transpose() * dz;
    const Vector rhs = dy;
    chol.compute(x.transpose() * d.asDiagonal() * x);
    if (chol.info() != Eigen::Success) return out;
    dy = chol.solve(dy);
    ds = x * dy - ds;

    double step_p = big;
    double step_d = big;
    for (Index i = 0; i < n; ++i) {
      dx(i) = d(i) * ds(i);
      ds(i) = -dx(i);
      dz(i) = -z(i) * (dx(i) / xp(i) + 1.0);
      dw(i) = -w(i) * (ds(i) / s(i) + 1.0);
      if (dx(i) < 0.0) step_p = std::min(step_p, -xp(i) / dx(i));
      if (ds(i) < 0.0) step_p = std::min(step_p, -s(i) / ds(i));
      if (dz(i) < 0.0) step_d = std::min(step_d, -z(i) / dz(i));
      if (dw(i) < 0.0) step_d = std::min(step_d, -w(i) / dw(i));
    }
    step_p = std::min(opt.step_damping * step_p, 1.0);
    step_d = std::min(opt.step_damping * step_d, 1.0);

    if (std::min(step_p, step_d) < 1.0) {
      // Mehrotra corrector with centering.
      double mu = z.dot(xp) + w.dot(s);
      const double g = mu + step_p * dx.dot(z) + step_d * dz.dot(xp) +
                       step_p * step_d * dz.dot(dx) + step_p * ds.dot(w) +
                       step_d * dw.dot(s) + step_p * step_d * ds.dot(dw);
      mu = mu * std::pow(g / mu, 3) / (2.0 * static_cast<double>(n));
      for (Index i = 0; i < n; ++i) {
        dr(i) = d(i) * (mu * (1.0 / s(i) - 1.0 / xp(i)) + dx(i) * dz(i) / xp(i) -
                        ds(i) * dw(i) / s(i));
      }
      dy = chol.solve(rhs + x.transpose() * dr);
      aux = x * dy;
      step_p = big;
      step_d = big;
      for (Index i = 0; i < n; ++i) {
        const double dxdz = dx(i) * dz(i);
        const double dsdw = ds(i) * dw(i);
        dx(i) = d(i) * (aux(i) - z(i) + w(i)) - dr(i);
        ds(i) = -dx(i);
        dz(i) = -z(i) + (mu - z(i) * dx(i) - dxdz) / xp(i);
        dw(i) = -w(i) + (mu - w(i) * ds(i) - dsdw) / s(i);
        if (dx(i) < 0.0) step_p = std::min(step_p, -xp(i) / dx(i));
        if (ds(i) < 0.0) step_p = std::min(step_p, -s(i) / ds(i));
        if (dz(i) < 0.0) step_d = std::min(step_d, -z(i) / dz(i));
        if (dw(i) < 0.0) step_d = std::min(step_d, -w(i) / dw(i));
      }
      step_p = std::min(opt.step_damping * step_p, 1.0);
      step_d = std::min(opt.step_damping * step_d, 1.0);
    }
    xp += step_p * dx;
    s += step_p * ds;
    dual += step_d * dy;
    z += step_d * dz;
    w += step_d * dw;
    gap = z.dot(xp) + w.dot(s);
    if (!std::isfinite(gap)) return out;
  }
  out.beta = -dual;
  out.ok = out.beta.allFinite();
  return out;
}

// Greedily picks p linearly independent rows, visiting rows in `order`.
inline std::vector<Index> independent_rows(const Matrix& x, const std::vector<Index>& order,
                                           double tolerance) {
  const Index p = x.cols();
  Matrix q(p, p);
  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(p));
  for (Index i : order) {
    const double norm = x.row(i).norm();
    if (norm == 0.0) continue;
    Vector v = x.row(i).transpose();
    const Index k = static_cast<Index>(picked.size());
    for (int pass = 0; pass < 2; ++pass) {
      if (k > 0) v -= q.leftCols(k) * (q.leftCols(k).transpose() * v);
    }
    const double rest = v.norm();
    if (rest > tolerance * norm) {
      q.col(k) = v / rest;
      picked.push_back(i);
      if (static_cast<Index>(picked.size()) == p) break;
    }
  }
  return picked;
}

inline std::vector<Index> pivoted_rows(const Matrix& x) {
  Eigen::ColPivHouseholderQR<Matrix> qr(x.transpose());
  std::vector<Index> rows;
  for (Index k = 0; k < x.cols(); ++k) rows.push_back(qr.colsPermutation().indices()(k));
  return rows;
}

// One-sided directional derivative of w * rho_u(r - t z) at t = 0+.
inline double edge_slope(double r, double z, double u, double tol) {
  if (r > tol) return -u * z;
  if (r < -tol) return (1.0 - u) * z;
  return std::max(-u * z, (1.0 - u) * z);
}

struct VertexResult {
  std::vector<Index> basis;
  int pivots = 0;
};

// Simplex-style descent over basic solutions of the check-loss LP.
inline VertexResult descend_vertices(const Matrix& x, const Vector& y, const Vector& w, double u,
                                     std::vector<Index> basis, int max_pivots) {
  const Index n = x.rows();
  const Index p = x.cols();
  const double tol = 1e-11 * (1.0 + y.cwiseAbs().maxCoeff());
  VertexResult out;
  std::vector<std::pair<double, Index>> breaks;
  breaks.reserve(static_cast<std::size_t>(n));
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);

  for (; out.pivots < max_pivots; ++out.pivots) {
    const Matrix b = take_rows(x, basis);
    Eigen::PartialPivLU<Matrix> lu(b);
    const Vector beta = lu.solve(take(y, basis));
    Vector r = y - x * beta;
    const Matrix binv = lu.inverse();
    Matrix dirs = x * binv;  // row i: change of x_i'beta per unit move along each edge
    std::fill(in_basis.begin(), in_basis.end(), 0);
    for (Index k = 0; k < p; ++k) {
      const Index row = basis[static_cast<std::size_t>(k)];
      in_basis[static_cast<std::size_t>(row)] = 1;
      r(row) = 0.0;
      dirs.row(row).setZero();
      dirs(row, k) = 1.0;
    }

    double best = 0.0;
    Index best_edge = -1;
    double best_sign = 0.0;
    for (Index j = 0; j < p; ++j) {
      for (double sign : {1.0, -1.0}) {
        double slope = 0.0;
        double size = 0.0;
        for (Index i = 0; i < n; ++i) {
          const double zi = sign * dirs(i, j);
          slope += w(i) * edge_slope(r(i), zi, u, tol);
          size += w(i) * std::abs(zi);
        }
        if (slope < -1e-11 * size && slope < best) {
          best = slope;
          best_edge = j;
          best_sign = sign;
        }
      }
    }
    if (best_edge < 0) break;

    // Exact line search along the chosen edge: walk breakpoints until the
    // slope of the convex piecewise-linear objective turns nonnegative.
    breaks.clear();
    for (Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)] || std::abs(r(i)) <= tol) continue;
      const double zi = best_sign * dirs(i, best_edge);
      if (zi == 0.0) continue;
      const double t = r(i) / zi;
      if (t > 0.0) breaks.emplace_back(t, i);
    }
    std::sort(breaks.begin(), breaks.end());
    double slope = best;
    Index entering = -1;
    for (const auto& [t, i] : breaks) {
      slope += w(i) * std::abs(dirs(i, best_edge));
      if (slope >= 0.0) {
        entering = i;
        break;
      }
    }
    if (entering < 0) throw RankDeficient("quantile regression objective is unbounded along an edge");
    basis[static_cast<std::size_t>(best_edge)] = entering;
  }
  out.basis = std::move(basis);
  return out;
}

}  // namespace detail

/// Minimizes sum_i w_i rho_u(y_i - x_i'beta). Rows with zero weight are ignored.
inline QuantileFit solve_weighted_qr(const Matrix& x, const Vector& y, double u, const Vector& w,
                                     const QrOptions& opt = {}) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile index must lie in (0,1)");
  if (x.rows() != y.size() || x.rows() != w.size()) throw DomainError("solve_weighted_qr: dimension mismatch");
  require_finite(x, "design matrix");
  require_finite(y, "response");
  require_finite(w, "weights");
  if ((w.array() < 0.0).any()) throw DomainError("solve_weighted_qr: negative weight");

  const Index p = x.cols();
  std::vector<Index> support;
  for (Index i = 0; i < x.rows(); ++i) {
    if (w(i) > 0.0) support.push_back(i);
  }
  const Index m = static_cast<Index>(support.size());
  if (p < 1 || m < p) throw RankDeficient("fewer positively weighted rows than regressors");
  const Matrix xs = take_rows(x, support);
  const Vector ys = take(y, support);
  const Vector ws = take(w, support);
  if (numerical_rank(xs) < p) throw RankDeficient("design is rank deficient on the weighted sample");

  QuantileFit fit;
  fit.u = u;
  std::vector<Index> start;
  if (m > p) {
    const detail::InteriorResult ip =
        detail::frisch_newton(ws.asDiagonal() * xs, ws.cwiseProduct(ys), u, opt);
    fit.interior_iterations = ip.iterations;
    fit.interior_failed = !ip.ok;
    if (ip.ok) {
      const Vector r = (ys - xs * ip.beta).cwiseAbs();
      std::vector<Index> order(static_cast<std::size_t>(m));
      std::iota(order.begin(), order.end(), Index{0});
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return r(a) < r(b); });
      start = detail::independent_rows(xs, order, 1e-8);
    }
  }
  if (static_cast<Index>(start.size()) < p) start = detail::pivoted_rows(xs);

  const int max_pivots = opt.max_pivots > 0 ? opt.max_pivots : static_cast<int>(20 * m + 100);
  detail::VertexResult vertex =
      m > p ? detail::descend_vertices(xs, ys, ws, u, std::move(start), max_pivots)
            : detail::VertexResult{std::move(start), 0};
  fit.pivots = vertex.pivots;

  // Solve the final basis in a canonical row order so that the same vertex
  // always yields bit-identical coefficients.
  std::vector<Index>& basis = vertex.basis;
  std::sort(basis.begin(), basis.end(), [&](Index a, Index b) {
    for (Index j = 0; j < p; ++j) {
      if (xs(a, j) != xs(b, j)) return xs(a, j) < xs(b, j);
    }
    if (ys(a) != ys(b)) return ys(a) < ys(b);
    return a < b;
  });
  Eigen::PartialPivLU<Matrix> lu(take_rows(xs, basis));
  fit.beta = lu.solve(take(ys, basis));
  if (!fit.beta.allFinite()) throw RankDeficient("singular basis in quantile regression");

  const Vector r = y - x * fit.beta;
  fit.objective = weighted_check_loss(r, u, w);
  const double tol = 1e-9 * (1.0 + ys.cwiseAbs().maxCoeff());
  for (Index i : support) {
    if (std::abs(r(i)) <= tol) ++fit.active_count;
  }
  return fit;
}

inline QuantileFit solve_weighted_qr(const Matrix& x, const Vector& y, double u,
                                     const QrOptions& opt = {}) {
  return solve_weighted_qr(x, y, u, Vector::Ones(x.rows()), opt);
}

}  // namespace cqiv::num
