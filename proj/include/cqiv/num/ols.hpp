#pragma once

#include "cqiv/num/linalg.hpp"

namespace cqiv::num {

/// Weighted least squares: argmin sum_i w_i (y_i - x_i'b)^2.
inline Vector solve_ols(const Matrix& x, const Vector& y, const Vector& w) {
  require_finite(x, "design matrix");
  require_finite(y, "response");
  require_finite(w, "weights");
  if (x.rows() != y.size() || x.rows() != w.size()) throw DomainError("solve_ols: dimension mismatch");
  if ((w.array() < 0.0).any()) throw DomainError("solve_ols: negative weight");
  const Vector root = w.array().sqrt();
  const Matrix xs = root.asDiagonal() * x;
  Eigen::ColPivHouseholderQR<Matrix> qr(xs);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < x.cols()) throw RankDeficient("solve_ols: design is rank deficient on the weighted sample");
  return qr.solve(root.cwiseProduct(y));
}

}  // namespace cqiv::num
