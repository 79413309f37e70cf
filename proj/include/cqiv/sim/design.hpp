#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "cqiv/data.hpp"
#include "cqiv/num/normal.hpp"
#include "cqiv/rng.hpp"

namespace cqiv::sim {

enum class Variant { homoskedastic, heteroskedastic };

inline std::string to_string(Variant v) {
  return v == Variant::homoskedastic ? "homoskedastic" : "heteroskedastic";
}

/// Simulation design. First stage
///   D = pi0 + pi1 Z + pi2 W + s(W) N_V,  s(W) = 1 or pi3 + pi4 W,
/// structural equation Y* = beta0 + beta1 D + beta2 W + N_e with
/// corr(N_V, N_e) = rho0, W = min(exp(W~), q_W) and Y = max(Y*, C).
struct McDesign {
  Variant variant = Variant::homoskedastic;
  Index n = 1000;
  double rho0 = 0.9;
  double pi0 = 0.0, pi1 = 1.0, pi2 = 1.0, pi3 = 1.0, pi4 = 1.0;
  double beta0 = 0.0, beta1 = 1.0, beta2 = 1.0;
  double censor_quantile = 0.38;
  double w_cap_quantile = 0.95;
  std::uint64_t seed = 20260101;

  void validate() const {
    if (n < 2) throw DomainError("design needs n >= 2");
    if (!(rho0 > -1.0 && rho0 < 1.0)) throw DomainError("rho0 must lie in (-1, 1)");
    if (!(censor_quantile >= 0.0 && censor_quantile < 1.0)) throw DomainError("censor_quantile must lie in [0, 1)");
    if (!(w_cap_quantile > 0.0 && w_cap_quantile <= 1.0)) throw DomainError("w_cap_quantile must lie in (0, 1]");
  }
};

/// Latent quantities behind a generated sample.
struct Truth {
  Vector v;        ///< control variable V ~ U(0,1)
  Vector epsilon;  ///< structural rank
  Vector y_star;   ///< uncensored response
  double censoring_point = 0.0;
  double w_cap = 0.0;
  double beta0 = 0.0, beta1 = 0.0, beta2 = 0.0;
  double control_coefficient = 0.0;  ///< coefficient of Phi^{-1}(V), equal to rho0
};

struct Sample {
  Dataset data;
  Truth truth;
};

/// Conditional u-quantile of Y* given (D, W, V) under the design.
inline double true_structural_quantile(const McDesign& design, double d, double w, double v, double u) {
  return design.beta0 + design.beta1 * d + design.beta2 * w + design.rho0 * num::normal_quantile(v) +
         std::sqrt(1.0 - design.rho0 * design.rho0) * num::normal_quantile(u);
}

inline Sample generate_design(const McDesign& design, Rng& rng) {
  design.validate();
  const Index n = design.n;
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n), w_tilde(n), nv(n), ne(n);
  const double tail = std::sqrt(1.0 - design.rho0 * design.rho0);
  for (Index i = 0; i < n; ++i) {
    z(i) = normal(rng);
    w_tilde(i) = normal(rng);
    nv(i) = normal(rng);
    ne(i) = design.rho0 * nv(i) + tail * normal(rng);
  }

  Sample s;
  std::vector<double> ew(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ew[static_cast<std::size_t>(i)] = std::exp(w_tilde(i));
  s.truth.w_cap = sample_quantile(ew, design.w_cap_quantile);

  Dataset& data = s.data;
  data.w.resize(n, 1);
  data.z.resize(n, 1);
  data.d.resize(n);
  data.y.resize(n);
  data.c.resize(n);
  data.d_name = "d";
  data.y_name = "y";
  data.w_names = {"w"};
  data.z_names = {"z"};
  s.truth.v.resize(n);
  s.truth.epsilon.resize(n);
  s.truth.y_star.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double w = std::min(ew[static_cast<std::size_t>(i)], s.truth.w_cap);
    const double scale = design.variant == Variant::homoskedastic ? 1.0 : design.pi3 + design.pi4 * w;
    const double d = design.pi0 + design.pi1 * z(i) + design.pi2 * w + scale * nv(i);
    data.w(i, 0) = w;
    data.z(i, 0) = z(i);
    data.d(i) = d;
    s.truth.v(i) = num::normal_cdf(nv(i));
    s.truth.epsilon(i) = num::normal_cdf(ne(i));
    s.truth.y_star(i) = design.beta0 + design.beta1 * d + design.beta2 * w + ne(i);
  }

  std::vector<double> ys(s.truth.y_star.data(), s.truth.y_star.data() + n);
  // A zero censoring quantile places C below every draw.
  s.truth.censoring_point = design.censor_quantile > 0.0 ? sample_quantile(ys, design.censor_quantile)
                                                         : *std::min_element(ys.begin(), ys.end()) - 1.0;
  for (Index i = 0; i < n; ++i) {
    data.c(i) = s.truth.censoring_point;
    data.y(i) = std::max(s.truth.y_star(i), s.truth.censoring_point);
  }
  s.truth.beta0 = design.beta0;
  s.truth.beta1 = design.beta1;
  s.truth.beta2 = design.beta2;
  s.truth.control_coefficient = design.rho0;
  return s;
}

inline Sample generate_design(const McDesign& design) {
  Rng rng(design.seed);
  return generate_design(design, rng);
}

}  // namespace cqiv::sim
