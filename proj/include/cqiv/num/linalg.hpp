#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cqiv/error.hpp"

namespace cqiv::num {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative pivot threshold below which a matrix is treated as singular.
inline constexpr double kRankTolerance = 1e-10;

inline void require_finite(const Matrix& x, const char* what) {
  if (!x.allFinite()) throw NonFinite(std::string(what) + " contains NaN or Inf");
}

inline void require_finite(const Vector& x, const char* what) {
  if (!x.allFinite()) throw NonFinite(std::string(what) + " contains NaN or Inf");
}

/// Rows of `x` selected by `rows`, in order.
inline Matrix take_rows(const Matrix& x, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = x.row(rows[k]);
  return out;
}

inline Vector take(const Vector& v, std::span<const Index> rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Index>(k)) = v(rows[k]);
  return out;
}

/// Numerical rank of `x` using column-pivoted QR with the library threshold.
inline Index numerical_rank(const Matrix& x) {
  if (x.rows() == 0) return 0;
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  qr.setThreshold(kRankTolerance);
  return qr.rank();
}

}  // namespace cqiv::num
