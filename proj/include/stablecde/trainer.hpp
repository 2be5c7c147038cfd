#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stablecde/batch_loss.hpp"
#include "stablecde/earlystop.hpp"

namespace stablecde::train {

struct TrainConfig {
  std::uint64_t seed = 25;
  int epochs = 100;
  int batch_size = 64;
  double lr = 2e-4;
  double lambda = 1.0;
  model::ModelConfig model;
  ode::SolverConfig solver;
  stab::StabilizerConfig stabilizer;
  stop::StopCriteria criteria;
  int rho_subsample = 512;          // fixed train subsample for criterion 3
  double max_batch_failure_frac = 0.10;
  bool parallel = true;
  std::string out_dir;              // when set, selected checkpoints are written
};

struct TrainOutput {
  stop::TrainRecord record;
  stop::CheckpointSelection selection;
  model::ModelConfig model_cfg;
  std::vector<std::vector<double>> snapshots;  // flat params per epoch
  std::vector<double> penalty_series;          // stiffness penalty per epoch
  std::vector<double> objective_series;        // optimized objective per epoch
  std::vector<int> skipped_batches;            // solver failures per epoch
  int rejected_steps = 0;
  std::string report;
  std::string optimal_path, overtrained_path, final_path;
};

TrainOutput train_model(const std::vector<const cohort::Trajectory*>& train_set,
                        const std::vector<const cohort::Trajectory*>& val_set,
                        const TrainConfig& cfg);

// Rebuild the model as it was after the given epoch.
model::CdeAutoencoder materialize(const TrainOutput& out, int epoch);

// Write one epoch snapshot as a checkpoint file.
void save_model_checkpoint(const std::string& path, const TrainOutput& out,
                           int epoch, const TrainConfig& cfg);

model::CdeAutoencoder load_model_checkpoint(const std::string& path);

}  // namespace stablecde::train
