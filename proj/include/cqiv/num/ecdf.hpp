#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "cqiv/num/linalg.hpp"

namespace cqiv::num {

enum class EcdfMode {
  plain,     ///< #{v <= at} / n
  midpoint,  ///< (#{v < at} + (#{v = at} + 1)/2) / (n + 1), strictly inside (0,1)
};

inline double empirical_cdf_rank(std::span<const double> values, double at,
                                 EcdfMode mode = EcdfMode::plain) {
  const auto n = static_cast<double>(values.size());
  double less = 0.0;
  double equal = 0.0;
  for (double v : values) {
    if (v < at) less += 1.0;
    else if (v == at) equal += 1.0;
  }
  if (mode == EcdfMode::plain) return (less + equal) / n;
  return (less + 0.5 * (equal + 1.0)) / (n + 1.0);
}

/// Weighted empirical CDF of a fixed sample, evaluated by binary search.
///
/// With weights w the midpoint rule generalizes to
/// (W_< + (W_= + wbar)/2) / (W + wbar), wbar = W/n, which is the unweighted
/// rule when every weight is one.
class WeightedEcdf {
 public:
  WeightedEcdf() = default;

  WeightedEcdf(std::span<const double> values, std::span<const double> weights) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    sorted_.reserve(n);
    cumulative_.reserve(n + 1);
    cumulative_.push_back(0.0);
    for (std::size_t k : order) {
      sorted_.push_back(values[k]);
      cumulative_.push_back(cumulative_.back() + weights[k]);
    }
    mean_weight_ = n > 0 ? cumulative_.back() / static_cast<double>(n) : 0.0;
  }

  [[nodiscard]] double operator()(double at, EcdfMode mode = EcdfMode::midpoint) const {
    const auto lo = std::lower_bound(sorted_.begin(), sorted_.end(), at) - sorted_.begin();
    const auto hi = std::upper_bound(sorted_.begin(), sorted_.end(), at) - sorted_.begin();
    const double less = cumulative_[static_cast<std::size_t>(lo)];
    const double upto = cumulative_[static_cast<std::size_t>(hi)];
    const double total = cumulative_.back();
    if (mode == EcdfMode::plain) return upto / total;
    return (less + 0.5 * ((upto - less) + mean_weight_)) / (total + mean_weight_);
  }

  [[nodiscard]] std::size_t size() const { return sorted_.size(); }
  [[nodiscard]] std::span<const double> sorted_values() const { return sorted_; }

 private:
  std::vector<double> sorted_;
  std::vector<double> cumulative_;
  double mean_weight_ = 0.0;
};

}  // namespace cqiv::num
