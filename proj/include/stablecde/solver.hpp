#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stablecde/control_path.hpp"
#include "stablecde/errors.hpp"

namespace stablecde::ode {

enum class SolverKind { kRk4, kImplicitAdams };

struct SolverConfig {
  SolverKind kind = SolverKind::kRk4;
  double dt = 0.5;                  // hours
  double fixed_point_tol = 1e-8;    // infinity norm of the residual
  int fixed_point_max_iters = 50;
  double damping = 0.5;             // base relaxation of the implicit solve
};

struct HiddenTrajectory {
  std::vector<double> times;
  std::vector<ad::Array> states;
};

// Adams-Moulton weights; beta[0] multiplies the implicit term.
struct AdamsWeights {
  double beta0;
  std::vector<double> betas;  // history weights, most recent first
};

inline AdamsWeights adams_weights(std::size_t steps_done) {
  switch (steps_done) {
    case 0:
      return {1.0, {}};
    case 1:
      return {0.5, {0.5}};
    case 2:
      return {5.0 / 12.0, {8.0 / 12.0, -1.0 / 12.0}};
    default:
      return {251.0 / 720.0,
              {646.0 / 720.0, -264.0 / 720.0, 106.0 / 720.0, -19.0 / 720.0}};
  }
}

// Execution policy over plain arrays. A tape-backed policy with the same
// surface lives in the model layer so gradients flow through the identical
// step sequence.
struct PlainExec {
  using State = ad::Array;
  std::function<ad::Array(const ad::Array& h, const ad::Array& slope)> field;
  const ad::Array* slope = nullptr;

  void bind_slope(const ad::Array& s) { slope = &s; }
  void on_step(double /*t*/, const State& /*h*/) {}
  State eval(const State& h) { return field(h, *slope); }
  State axpy(const State& x, double a, const State& y) {
    State r = x;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += a * y[i];
    return r;
  }
  double inf_norm(const State& s) const {
    double m = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) m = std::max(m, std::fabs(s[i]));
    return m;
  }
  double dot(const State& a, const State& b) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  }
  bool finite(const State& s) const { return s.all_finite(); }
};

// One classical RK4 step of dh/dt = field(h) with the segment slope bound
// into the exec policy. Throws SolverDivergence naming the failing stage.
template <class Exec>
typename Exec::State rk4_single_step(Exec& ex, const typename Exec::State& h,
                                     double t, double dt) {
  using State = typename Exec::State;
  State k1 = ex.eval(h);
  if (!ex.finite(k1)) throw SolverDivergence(t, 1, "rk4: non-finite stage 1");
  State k2 = ex.eval(ex.axpy(h, 0.5 * dt, k1));
  if (!ex.finite(k2)) throw SolverDivergence(t, 2, "rk4: non-finite stage 2");
  State k3 = ex.eval(ex.axpy(h, 0.5 * dt, k2));
  if (!ex.finite(k3)) throw SolverDivergence(t, 3, "rk4: non-finite stage 3");
  State k4 = ex.eval(ex.axpy(h, dt, k3));
  if (!ex.finite(k4)) throw SolverDivergence(t, 4, "rk4: non-finite stage 4");
  State r = ex.axpy(h, dt / 6.0, k1);
  r = ex.axpy(r, dt / 3.0, k2);
  r = ex.axpy(r, dt / 3.0, k3);
  r = ex.axpy(r, dt / 6.0, k4);
  if (!ex.finite(r)) throw SolverDivergence(t, 5, "rk4: non-finite update");
  return r;
}

// Damped fixed-point solve of x = G(x) with Aitken (Irons-Tuck) dynamic
// relaxation kicking in when the plain iteration stops contracting. The
// relaxation factors are functions of iterate values only, so a tape-backed
// exec replays the identical iterate sequence.
template <class Exec, class GFn>
typename Exec::State solve_fixed_point(Exec& ex, GFn&& G,
                                       const typename Exec::State& x0,
                                       const SolverConfig& cfg, double t) {
  using State = typename Exec::State;
  State x = x0;
  State gx = G(x);
  if (!ex.finite(gx)) throw SolverDivergence(t, 0, "implicit: non-finite G(x0)");
  State r = ex.axpy(gx, -1.0, x);
  double rnorm = ex.inf_norm(r);
  double theta = cfg.damping;
  for (int k = 0; k < cfg.fixed_point_max_iters; ++k) {
    if (rnorm <= cfg.fixed_point_tol) return x;
    x = ex.axpy(x, theta, r);
    gx = G(x);
    if (!ex.finite(gx))
      throw SolverDivergence(t, k + 1, "implicit: non-finite iterate");
    State r_next = ex.axpy(gx, -1.0, x);
    const double rnorm_next = ex.inf_norm(r_next);
    if (rnorm_next > 0.9 * rnorm) {
      // Secant relaxation along the residual difference.
      State dr = ex.axpy(r_next, -1.0, r);
      const double denom = ex.dot(dr, dr);
      if (denom > 0.0) {
        double th = -theta * ex.dot(r, dr) / denom;
        if (std::isfinite(th) && th != 0.0)
          theta = std::clamp(th, -100.0, 100.0);
      }
    }
    r = std::move(r_next);
    rnorm = rnorm_next;
  }
  if (rnorm <= cfg.fixed_point_tol) return x;
  throw StiffnessFailure(t, "implicit solve: no convergence within max iterations");
}

// One Adams-Moulton step; fhistory holds field values of prior accepted
// states, most recent first (seeded with F(h0) at segment start). steps_done
// selects the startup order: BE, trapezoid, AM2, then AM4.
template <class Exec>
typename Exec::State adams_single_step(Exec& ex, const typename Exec::State& h,
                                       std::span<const typename Exec::State> fhistory,
                                       std::size_t steps_done, double t, double dt,
                                       const SolverConfig& cfg) {
  using State = typename Exec::State;
  const AdamsWeights w = adams_weights(steps_done);
  if (fhistory.size() < w.betas.size())
    throw ContractError("adams step: insufficient history for selected order");
  State base = h;
  for (std::size_t j = 0; j < w.betas.size(); ++j)
    base = ex.axpy(base, dt * w.betas[j], fhistory[j]);
  auto G = [&](const State& x) { return ex.axpy(base, dt * w.beta0, ex.eval(x)); };
  return solve_fixed_point(ex, G, h, cfg, t);
}

// Marches the hidden state across the path, restarting the multistep
// startup at every breakpoint (knots and requested output times), so a call
// split at an interior knot reproduces the exact same step sequence.
template <class Exec, class RecordFn>
void integrate_core(Exec& ex, const typename Exec::State& h0,
                    const ControlPath& path, std::span<const double> output_times,
                    const SolverConfig& cfg, RecordFn&& record) {
  using State = typename Exec::State;
  if (!(cfg.dt > 0.0)) throw ContractError("integrate: dt must be positive");
  for (std::size_t i = 0; i < output_times.size(); ++i) {
    if (output_times[i] < path.t_begin() || output_times[i] > path.t_end())
      throw ContractError("integrate: output time outside path domain");
    if (i > 0 && !(output_times[i] > output_times[i - 1]))
      throw ContractError("integrate: output times must be strictly increasing");
  }

  // Merge knots and output times into breakpoints.
  std::vector<double> bps;
  std::vector<bool> is_output;
  {
    std::size_t ki = 0, oi = 0;
    const auto& kt = path.times();
    while (ki < kt.size() || oi < output_times.size()) {
      double tk = ki < kt.size() ? kt[ki] : 0.0;
      double to = oi < output_times.size() ? output_times[oi] : 0.0;
      if (oi >= output_times.size() || (ki < kt.size() && tk < to)) {
        bps.push_back(tk);
        is_output.push_back(false);
        ++ki;
      } else if (ki >= kt.size() || to < tk) {
        bps.push_back(to);
        is_output.push_back(true);
        ++oi;
      } else {
        bps.push_back(tk);
        is_output.push_back(true);
        ++ki;
        ++oi;
      }
    }
  }

  State h = h0;
  std::size_t out_idx = 0;
  if (is_output[0]) record(out_idx++, h);

  std::vector<State> fhist;
  for (std::size_t b = 0; b + 1 < bps.size(); ++b) {
    const double ta = bps[b], tb = bps[b + 1];
    const double width = tb - ta;
    ad::Array slope = path.slope_at(ta);
    ex.bind_slope(slope);
    std::size_t n = static_cast<std::size_t>(std::ceil(width / cfg.dt - 1e-9));
    if (n == 0) n = 1;
    const double sub = width / static_cast<double>(n);
    if (cfg.kind == SolverKind::kRk4) {
      for (std::size_t s = 0; s < n; ++s) {
        const double t = ta + sub * static_cast<double>(s);
        h = rk4_single_step(ex, h, t, sub);
        ex.on_step(t + sub, h);
      }
    } else {
      fhist.clear();
      // F(h0) is only consumed by the order-4 rule from the fourth step on.
      if (n >= 4) fhist.push_back(ex.eval(h));
      for (std::size_t s = 0; s < n; ++s) {
        const double t = ta + sub * static_cast<double>(s);
        h = adams_single_step(
            ex, h, std::span<const State>(fhist.data(), fhist.size()), s, t, sub,
            cfg);
        // Refresh the field at the accepted state for the history window.
        fhist.insert(fhist.begin(), ex.eval(h));
        if (fhist.size() > 4) fhist.pop_back();
        ex.on_step(t + sub, h);
      }
    }
    if (is_output[b + 1]) record(out_idx++, h);
  }
}

using FieldFn = std::function<ad::Array(const ad::Array& h, const ad::Array& slope)>;

//  Standalone spec-level operations on plain arrays.
ad::Array rk4_step(const FieldFn& f, const ad::Array& h, const ControlPath& path,
                   double t, double dt);

ad::Array implicit_adams_step(
    const FieldFn& f,
    std::span<const std::pair<ad::Array, ad::Array>> history_h_slope,
    double t, double dt, const SolverConfig& cfg);

HiddenTrajectory integrate(const FieldFn& f, const ad::Array& h0,
                           const ControlPath& path,
                           std::span<const double> output_times,
                           const SolverConfig& cfg);

}  // namespace stablecde::ode
