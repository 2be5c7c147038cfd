#include "stablecde/solver.hpp"

namespace stablecde::ode {

ad::Array rk4_step(const FieldFn& f, const ad::Array& h, const ControlPath& path,
                   double t, double dt) {
  if (t < path.t_begin() || t + dt > path.t_end() + 1e-12)
    throw ContractError("rk4_step: [t, t+dt] outside path domain");
  PlainExec ex;
  ex.field = f;
  ad::Array slope = path.slope_at(t);
  ex.bind_slope(slope);
  return rk4_single_step(ex, h, t, dt);
}

ad::Array implicit_adams_step(
    const FieldFn& f,
    std::span<const std::pair<ad::Array, ad::Array>> history_h_slope,
    double t, double dt, const SolverConfig& cfg) {
  if (history_h_slope.empty())
    throw ContractError("implicit_adams_step: history must hold the current state");
  PlainExec ex;
  ex.field = f;
  // Current state is history[0]; the step uses its slope for the interval.
  const ad::Array& h = history_h_slope[0].first;
  ad::Array slope = history_h_slope[0].second;
  ex.bind_slope(slope);
  std::vector<ad::Array> fhist;
  fhist.reserve(history_h_slope.size());
  for (const auto& [hs, ss] : history_h_slope) fhist.push_back(f(hs, ss));
  const std::size_t steps_done = history_h_slope.size() - 1;
  return adams_single_step(ex, h,
                           std::span<const ad::Array>(fhist.data(), fhist.size()),
                           std::min<std::size_t>(steps_done, 3), t, dt, cfg);
}

HiddenTrajectory integrate(const FieldFn& f, const ad::Array& h0,
                           const ControlPath& path,
                           std::span<const double> output_times,
                           const SolverConfig& cfg) {
  PlainExec ex;
  ex.field = f;
  HiddenTrajectory out;
  out.times.assign(output_times.begin(), output_times.end());
  out.states.resize(output_times.size());
  integrate_core(ex, h0, path, output_times, cfg,
                 [&](std::size_t idx, const ad::Array& h) { out.states[idx] = h; });
  return out;
}

}  // namespace stablecde::ode
