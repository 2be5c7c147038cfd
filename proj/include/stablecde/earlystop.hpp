#pragma once

#include <optional>
#include <string>
#include <vector>

namespace stablecde::stop {

struct StopCriteria {
  double eps1 = 0.1;          // near-optimal validation loss margin
  int p = 30;                 // plateau window (epochs e-p..e inclusive)
  double eps2 = 0.02;         // plateau tolerance, relative to window min
  double rho_threshold = 0.7; // mean train acuity correlation
};

struct EpochEntry {
  double l_total = 0.0;
  double l_mse = 0.0;
  double l_corr = 0.0;
  double l_val = 0.0;
  double rho_train = 0.0;
  double grad_norm = 0.0;
  std::string checkpoint;
};

struct TrainRecord {
  double lambda = 1.0;
  std::vector<EpochEntry> epochs;
};

struct StopDecision {
  bool stop = false;
  bool c1 = false, c2 = false, c3 = false;
  bool absolute_fallback = false;  // window min <= 0 triggered absolute eps2
};

// Evaluates the three stopping criteria at epoch e using only epochs <= e.
StopDecision check_stop(const TrainRecord& record, const StopCriteria& criteria,
                        int e);

struct CheckpointSelection {
  bool found = false;
  int optimal_stable = -1;
  int overtrained_unstable = -1;
  // Per-criterion diagnosis when the criteria were never all satisfied.
  std::string failure_diagnosis;
};

CheckpointSelection select_checkpoints(const TrainRecord& record,
                                       const StopCriteria& criteria);

// Human-readable stopping report naming e*, the criterion values there and
// the checkpoint files.
std::string stopping_report(const TrainRecord& record, const StopCriteria& criteria,
                            const CheckpointSelection& sel);

}  // namespace stablecde::stop
