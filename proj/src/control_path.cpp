#include "stablecde/control_path.hpp"

#include <algorithm>

#include "stablecde/errors.hpp"

namespace stablecde::ode {

ControlPath::ControlPath(std::vector<double> times, ad::Array values)
    : times_(std::move(times)), values_(std::move(values)) {
  if (times_.size() < 2)
    throw IngestionError("control path: need at least 2 observations");
  if (values_.rank() != 2 || values_.rows() != times_.size())
    throw DimensionError("control path: values must be K x d with K == len(times)");
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (!(times_[i] > times_[i - 1]))
      throw IngestionError("control path: times must be strictly increasing");
  const std::size_t k = times_.size() - 1, d = values_.cols();
  slopes_.assign_zeros({k, d});
  for (std::size_t i = 0; i < k; ++i) {
    const double inv = 1.0 / (times_[i + 1] - times_[i]);
    for (std::size_t j = 0; j < d; ++j)
      slopes_.at2(i, j) = (values_.at2(i + 1, j) - values_.at2(i, j)) * inv;
  }
}

std::size_t ControlPath::interval_of(double t) const {
  if (t < t_begin() || t > t_end())
    throw ContractError("control path: time outside domain");
  // upper_bound gives the first knot strictly greater than t.
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  std::size_t idx = static_cast<std::size_t>(it - times_.begin());
  if (idx == 0) idx = 1;
  if (idx >= times_.size()) idx = times_.size() - 1;  // final knot: left interval
  return idx - 1;
}

ad::Array ControlPath::slope_at(double t) const {
  return interval_slope(interval_of(t));
}

ad::Array ControlPath::interval_slope(std::size_t k) const {
  const std::size_t d = dim();
  ad::Array s({d});
  for (std::size_t j = 0; j < d; ++j) s[j] = slopes_.at2(k, j);
  return s;
}

ad::Array ControlPath::knot_value(std::size_t k) const {
  const std::size_t d = dim();
  ad::Array v({d});
  for (std::size_t j = 0; j < d; ++j) v[j] = values_.at2(k, j);
  return v;
}

ControlPath build_control_path(const std::vector<double>& times,
                               const ad::Array& observations) {
  return ControlPath(times, observations);
}

}  // namespace stablecde::ode
