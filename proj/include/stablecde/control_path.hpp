#pragma once

#include <vector>

#include "stablecde/array.hpp"

namespace stablecde::ode {

// Piecewise-linear interpolant through irregular observations. The control
// derivative is the constant per-interval slope, which makes the hidden-state
// dynamics autonomous between knots.
class ControlPath {
 public:
  // times strictly increasing, length K >= 2; values is K x d.
  ControlPath(std::vector<double> times, ad::Array values);

  std::size_t knot_count() const { return times_.size(); }
  std::size_t dim() const { return values_.cols(); }
  const std::vector<double>& times() const { return times_; }
  const ad::Array& values() const { return values_; }

  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }

  // Slope on the interval containing t. At interior knots the right-interval
  // slope is returned; at the final knot, the left one.
  ad::Array slope_at(double t) const;

  // Slope of interval k (between knot k and k+1).
  ad::Array interval_slope(std::size_t k) const;

  // Index of the interval containing t (clamped so the final knot maps to
  // the last interval).
  std::size_t interval_of(double t) const;

  ad::Array knot_value(std::size_t k) const;

 private:
  std::vector<double> times_;
  ad::Array values_;           // K x d
  ad::Array slopes_;           // (K-1) x d
};

ControlPath build_control_path(const std::vector<double>& times,
                               const ad::Array& observations);

}  // namespace stablecde::ode
