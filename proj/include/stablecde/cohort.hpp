#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stablecde/array.hpp"

namespace stablecde::cohort {

constexpr std::size_t kFeatureDim = 33;
constexpr int kActionCount = 25;

struct Trajectory {
  std::string patient_id;
  std::vector<double> times;   // hours in [0, 72], strictly increasing
  ad::Array observations;      // K x 33
  std::vector<int> actions;    // one per step, in [0, 24]
  std::vector<double> sofa, sapsii, oasis;
  bool died = false;

  std::size_t steps() const { return times.size(); }
  // Terminal-only reward: +1 survived, -1 died, 0 elsewhere.
  double reward_at(std::size_t k) const {
    if (k + 1 != times.size()) return 0.0;
    return died ? -1.0 : 1.0;
  }
  double undiscounted_return() const { return died ? -1.0 : 1.0; }
};

struct CohortParams {
  double horizon_hours = 72.0;
  double cadence_hours = 4.0;
  double time_jitter = 1.2;
  double drop_prob = 0.12;

  // Severity process. process_noise scales every stochastic component of
  // the latent path, so zero gives one shared deterministic path.
  double process_noise = 1.0;
  double action_effect = 1.0;   // scales treatment drift terms
  double event_prob = 0.07;     // sharp deterioration events
  double mean_reversion = 0.12;
  double recovery_drift = 0.045;     // per appropriately treated step
  double mistreat_drift = 0.07;      // per unit bin distance per step
  double severity_noise = 0.05;
  double behavior_accuracy = 0.70;   // P(clinician picks the indicated bin)

  double obs_noise = 0.30;
  int nuisance_factors = 3;
  double nuisance_weight = 0.9;

  double target_mortality = 0.092;
  double mortality_band = 0.005;  // enforced for n >= 2000
};

struct CohortSplit {
  std::vector<std::string> train, val, test;
  double mortality_train = 0.0, mortality_val = 0.0, mortality_test = 0.0;
  double mortality_global = 0.0;
};

// App-A dosage bins. Right-closed intervals; zero dose is its own bin.
int vaso_bin(double dose);
int fluid_bin(double dose);
int bin_action(double vaso_dose, double fluid_dose);

// The severity band the generator treats as the indicated prescription.
int indicated_vaso_bin(double severity);
int indicated_fluid_bin(double severity);

std::vector<Trajectory> generate_cohort(int n, std::uint64_t seed,
                                        const CohortParams& params,
                                        bool parallel = true);

CohortSplit split_cohort(const std::vector<Trajectory>& trajectories,
                         double train_ratio, double val_ratio, double test_ratio,
                         std::uint64_t seed);

void write_cohort_csv(const std::vector<Trajectory>& cohort,
                      const std::string& path);
std::vector<Trajectory> read_cohort_csv(const std::string& path);

// Pull the subset with the given ids, in id order.
std::vector<Trajectory> select_by_ids(const std::vector<Trajectory>& cohort,
                                      const std::vector<std::string>& ids);

}  // namespace stablecde::cohort
