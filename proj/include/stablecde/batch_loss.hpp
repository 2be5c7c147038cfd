#pragma once

#include <vector>

#include "stablecde/autoencoder.hpp"
#include "stablecde/cohort.hpp"
#include "stablecde/stabilize.hpp"

namespace stablecde::train {

struct BatchConfig {
  double lambda = 1.0;
  ode::SolverConfig solver;
  stab::StabilizerConfig stabilizer;
  bool parallel = true;
};

struct BatchResult {
  model::LossBreakdown loss;
  std::vector<double> grads;       // d objective / d params, flat
  double objective = 0.0;          // total (+ lambda_reg * penalty when active)
  double stiffness_penalty = 0.0;  // mean stiffness score per solver step
  int stiffness_fallbacks = 0;
  std::size_t solver_steps = 0;
};

// Reusable per-batch scratch: one tape per trajectory plus gradient slots,
// so steady-state training does not allocate.
struct BatchWorkspace {
  std::vector<ad::Tape> tapes;
  std::vector<std::vector<double>> grad_slots;
};

// Loss value and parameter gradient of one batch. The correlation term
// couples trajectories through batch-pooled latents; its cotangents are
// injected back into each trajectory tape. Gradient slots are reduced in
// trajectory order, so results do not depend on the number of threads.
BatchResult batch_loss_and_grads(const model::CdeAutoencoder& m,
                                 const std::vector<const cohort::Trajectory*>& batch,
                                 const BatchConfig& cfg, BatchWorkspace& ws);

// Forward-only loss on a set of trajectories (validation, epoch metrics).
model::LossBreakdown eval_loss(const model::CdeAutoencoder& m,
                               const std::vector<const cohort::Trajectory*>& batch,
                               double lambda, const ode::SolverConfig& solver,
                               bool parallel = true);

// Latents at every observation of every trajectory.
std::vector<ode::HiddenTrajectory> encode_batch(
    const model::CdeAutoencoder& m,
    const std::vector<const cohort::Trajectory*>& batch,
    const ode::SolverConfig& solver, bool parallel = true);

// Pooled acuity correlations (mean |pearson| over latent dims, one value
// per score) over all timesteps of the given trajectories.
struct PooledRho {
  double sofa = 0.0, sapsii = 0.0, oasis = 0.0;
  int degenerate_scores = 0;
  double mean() const { return (sofa + sapsii + oasis) / 3.0; }
};

PooledRho pooled_acuity_rho(const model::CdeAutoencoder& m,
                            const std::vector<const cohort::Trajectory*>& batch,
                            const ode::SolverConfig& solver, bool parallel = true);

ode::ControlPath path_of(const cohort::Trajectory& tr);

}  // namespace stablecde::train
