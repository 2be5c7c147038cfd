#include "stablecde/earlystop.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stablecde/errors.hpp"

namespace stablecde::stop {

StopDecision check_stop(const TrainRecord& record, const StopCriteria& criteria,
                        int e) {
  const auto& ep = record.epochs;
  if (e < 0 || static_cast<std::size_t>(e) >= ep.size())
    throw ContractError("check_stop: epoch out of range");
  if (e < criteria.p)
    throw ContractError("check_stop: criterion 2 needs a full window (e >= p)");

  StopDecision d;
  // (1) Near-optimal validation loss over everything seen so far.
  double min_val = ep[0].l_val;
  for (int i = 1; i <= e; ++i) min_val = std::min(min_val, ep[static_cast<std::size_t>(i)].l_val);
  d.c1 = ep[static_cast<std::size_t>(e)].l_val <= min_val + criteria.eps1;

  // (2) Stable plateau over epochs e-p .. e inclusive.
  double wmin = ep[static_cast<std::size_t>(e - criteria.p)].l_total;
  double wmax = wmin;
  for (int i = e - criteria.p; i <= e; ++i) {
    const double v = ep[static_cast<std::size_t>(i)].l_total;
    wmin = std::min(wmin, v);
    wmax = std::max(wmax, v);
  }
  d.absolute_fallback = !(wmin > 0.0);
  const double band = d.absolute_fallback ? criteria.eps2 : criteria.eps2 * wmin;
  d.c2 = (wmax - wmin) <= band;

  // (3) Clinically meaningful representations.
  d.c3 = ep[static_cast<std::size_t>(e)].rho_train >= criteria.rho_threshold;

  d.stop = d.c1 && d.c2 && d.c3;
  return d;
}

CheckpointSelection select_checkpoints(const TrainRecord& record,
                                       const StopCriteria& criteria) {
  const int n = static_cast<int>(record.epochs.size());
  CheckpointSelection sel;
  if (n == 0) throw ContractError("select_checkpoints: empty record");

  int estar = -1;
  for (int e = criteria.p; e < n; ++e) {
    if (check_stop(record, criteria, e).stop) {
      estar = e;
      break;
    }
  }
  if (estar < 0) {
    // Closest-miss diagnosis: which criteria were never satisfied, and how
    // close each came.
    int c1_hits = 0, c2_hits = 0, c3_hits = 0, evals = 0;
    double best_rho = -1.0;
    for (int e = criteria.p; e < n; ++e) {
      const StopDecision d = check_stop(record, criteria, e);
      ++evals;
      c1_hits += d.c1 ? 1 : 0;
      c2_hits += d.c2 ? 1 : 0;
      c3_hits += d.c3 ? 1 : 0;
      best_rho = std::max(best_rho, record.epochs[static_cast<std::size_t>(e)].rho_train);
    }
    std::ostringstream os;
    os << "no stable checkpoint: ";
    bool first = true;
    auto name_miss = [&](int hits, const char* label) {
      if (hits == 0) {
        if (!first) os << ", ";
        os << label;
        first = false;
      }
    };
    name_miss(c1_hits, "criterion 1 (near-optimal validation loss) never satisfied");
    name_miss(c2_hits, "criterion 2 (stable training plateau) never satisfied");
    name_miss(c3_hits, "criterion 3 (acuity correlation threshold) never satisfied");
    if (first) os << "criteria individually satisfied but never simultaneously";
    os << " [c1 " << c1_hits << "/" << evals << ", c2 " << c2_hits << "/" << evals
       << ", c3 " << c3_hits << "/" << evals << ", best rho " << best_rho << "]";
    sel.failure_diagnosis = os.str();
    return sel;
  }

  sel.found = true;
  sel.optimal_stable = estar;

  // Overtrained/unstable foil. Find the plateau exit after e*; if the stop
  // predicate never fires again after that exit, the run degraded to the end
  // and the final epoch is the foil; otherwise the worst post-e* validation
  // epoch is.
  int plateau_exit = -1;
  for (int e = estar + 1; e < n; ++e) {
    if (!check_stop(record, criteria, e).c2) {
      plateau_exit = e;
      break;
    }
  }
  bool refires = false;
  if (plateau_exit >= 0) {
    for (int e = plateau_exit + 1; e < n; ++e) {
      if (check_stop(record, criteria, e).stop) {
        refires = true;
        break;
      }
    }
  }
  if (plateau_exit >= 0 && refires) {
    int worst = estar + 1 < n ? estar + 1 : estar;
    for (int e = estar + 1; e < n; ++e)
      if (record.epochs[static_cast<std::size_t>(e)].l_val >
          record.epochs[static_cast<std::size_t>(worst)].l_val)
        worst = e;
    sel.overtrained_unstable = worst;
  } else {
    sel.overtrained_unstable = n - 1;
  }
  return sel;
}

std::string stopping_report(const TrainRecord& record, const StopCriteria& criteria,
                            const CheckpointSelection& sel) {
  std::ostringstream os;
  os << "early stopping report\n";
  os << "criteria: eps1=" << criteria.eps1 << " p=" << criteria.p
     << " eps2=" << criteria.eps2 << " rho_threshold=" << criteria.rho_threshold
     << "\n";
  if (!sel.found) {
    os << sel.failure_diagnosis << "\n";
    return os.str();
  }
  const auto& e = record.epochs[static_cast<std::size_t>(sel.optimal_stable)];
  const auto& o = record.epochs[static_cast<std::size_t>(sel.overtrained_unstable)];
  os << "optimal_stable epoch e*=" << sel.optimal_stable << "\n";
  os << "  l_val=" << e.l_val << " l_total=" << e.l_total << " rho=" << e.rho_train
     << "\n";
  os << "  checkpoint: " << e.checkpoint << "\n";
  os << "overtrained_unstable epoch=" << sel.overtrained_unstable << "\n";
  os << "  l_val=" << o.l_val << " l_total=" << o.l_total << " rho=" << o.rho_train
     << "\n";
  os << "  checkpoint: " << o.checkpoint << "\n";
  return os.str();
}

}  // namespace stablecde::stop
