#pragma once

#include "cqiv/num/linalg.hpp"

namespace cqiv::num {

/// Asymmetric absolute loss rho_u(z) = (u - 1{z<0}) z.
inline double check_loss(double z, double u) { return z < 0.0 ? (u - 1.0) * z : u * z; }

/// sum_i w_i rho_u(r_i)
inline double weighted_check_loss(const Vector& residuals, double u, const Vector& w) {
  double total = 0.0;
  for (Index i = 0; i < residuals.size(); ++i) total += w(i) * check_loss(residuals(i), u);
  return total;
}

}  // namespace cqiv::num
