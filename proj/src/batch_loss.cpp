#include "stablecde/batch_loss.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stablecde::train {

namespace {

using cohort::Trajectory;
using model::CdeAutoencoder;
using model::ParamNodes;

// Exec policy that additionally linearizes the stiffness score at every
// accepted solver step. The Jacobian is assembled on-tape from central
// differences in h, so the penalty stays differentiable with respect to the
// parameters while the eigenvectors are held fixed.
struct StiffnessExec : model::TapeExec {
  bool collect = false;
  double fd_delta = 1e-4;
  std::vector<int>* penalty_nodes = nullptr;
  std::size_t* step_counter = nullptr;
  int* fallbacks = nullptr;

  void on_step(double, State h) {
    ++(*step_counter);
    if (!collect) return;
    ad::Tape& t = *tape;
    const std::size_t hs = t.value(h).size();
    std::vector<int> entry_nodes(hs * hs);
    ad::Array jac({hs, hs});
    ad::Array bump({hs});
    for (std::size_t j = 0; j < hs; ++j) {
      bump.fill(0.0);
      bump[j] = fd_delta;
      int hp = t.add(h, t.constant(bump));
      bump[j] = -fd_delta;
      int hm = t.add(h, t.constant(bump));
      int col = t.scale(t.sub(eval(hp), eval(hm)), 1.0 / (2.0 * fd_delta));
      const ad::Array& cv = t.value(col);
      for (std::size_t i = 0; i < hs; ++i) {
        jac.at2(i, j) = cv[i];
        entry_nodes[i * hs + j] = t.pick(col, i);
      }
    }
    stab::StiffnessResult sr = stab::stiffness_score_jacobian(jac, true);
    if (sr.fallback) {
      ++(*fallbacks);
      // No eigenpair gradient available; the fallback score enters the
      // penalty as a constant of this step.
      std::vector<double> w(hs * hs, 0.0);
      penalty_nodes->push_back(
          t.lincomb(entry_nodes, w, sr.score));
      return;
    }
    double offset = sr.score;
    std::vector<double> w(hs * hs);
    for (std::size_t i = 0; i < hs; ++i)
      for (std::size_t j = 0; j < hs; ++j) {
        w[i * hs + j] = sr.dscore_djac.at2(i, j);
        offset -= sr.dscore_djac.at2(i, j) * jac.at2(i, j);
      }
    penalty_nodes->push_back(t.lincomb(entry_nodes, w, offset));
  }
};

struct TrajRun {
  std::vector<int> state_nodes;
  std::vector<int> penalty_nodes;
  int sse_node = -1;
  double sse = 0.0;
  std::size_t rows = 0;
  std::size_t steps = 0;
  int fallbacks = 0;
  std::exception_ptr error;
};

ad::Array pooled_scores(const std::vector<const Trajectory*>& batch, int which) {
  std::size_t n = 0;
  for (const auto* tr : batch) n += tr->steps();
  ad::Array out({n});
  std::size_t pos = 0;
  for (const auto* tr : batch) {
    const std::vector<double>& src =
        which == 0 ? tr->sofa : (which == 1 ? tr->sapsii : tr->oasis);
    for (double v : src) out[pos++] = v;
  }
  return out;
}

bool column_has_variance(const ad::Array& col) {
  for (std::size_t i = 1; i < col.size(); ++i)
    if (col[i] != col[0]) return true;
  return false;
}

// Mean |pearson| over latent dims on the batch tape; returns -1 node when
// the score column is degenerate.
int rho_on_tape(ad::Tape& t, int pooled_node, const ad::Array& scores,
                std::size_t hdim) {
  if (!column_has_variance(scores)) return -1;
  int score_node = t.constant(scores);
  std::vector<int> abs_nodes;
  for (std::size_t k = 0; k < hdim; ++k) {
    int col = t.slice_col(pooled_node, k);
    if (!column_has_variance(t.value(col))) continue;  // contributes 0
    abs_nodes.push_back(t.abs_(t.pearson(col, score_node)));
  }
  if (abs_nodes.empty()) return -1;
  std::vector<double> w(abs_nodes.size(), 1.0 / static_cast<double>(hdim));
  return t.lincomb(abs_nodes, w, 0.0);
}

}  // namespace

ode::ControlPath path_of(const Trajectory& tr) {
  return ode::ControlPath(tr.times, tr.observations);
}

BatchResult batch_loss_and_grads(const CdeAutoencoder& m,
                                 const std::vector<const Trajectory*>& batch,
                                 const BatchConfig& cfg, BatchWorkspace& ws) {
  const std::size_t B = batch.size();
  if (B == 0) throw ContractError("batch_loss_and_grads: empty batch");
  const std::size_t hdim = m.cfg.hidden_size, d = m.cfg.feature_dim;
  const bool stiff = cfg.stabilizer.method == stab::StabilizerMethod::kStiffnessReg;

  if (ws.tapes.size() < B) ws.tapes.resize(B);
  if (ws.grad_slots.size() < B) ws.grad_slots.resize(B);

  std::vector<TrajRun> runs(B);
  std::vector<ParamNodes> pnodes(B);

  // Forward: record one tape per trajectory.
  auto forward_one = [&](std::size_t i) {
    TrajRun& run = runs[i];
    try {
      ad::Tape& tape = ws.tapes[i];
      tape.rewind();
      pnodes[i] = model::make_param_nodes(tape, m);
      const Trajectory& tr = *batch[i];
      ode::ControlPath path = path_of(tr);

      StiffnessExec ex;
      ex.tape = &tape;
      ex.model = &m;
      ex.pnodes = &pnodes[i];
      ex.collect = stiff;
      ex.penalty_nodes = &run.penalty_nodes;
      ex.step_counter = &run.steps;
      ex.fallbacks = &run.fallbacks;
      run.state_nodes = model::encode_tape_core(ex, tape, m, pnodes[i], path, cfg.solver);
      run.rows = tr.steps();

      std::vector<int> step_sse;
      step_sse.reserve(tr.steps());
      for (std::size_t k = 0; k < tr.steps(); ++k) {
        int dec = model::decode_tape(tape, m, pnodes[i], run.state_nodes[k]);
        ad::Array target({d});
        for (std::size_t j = 0; j < d; ++j) target[j] = tr.observations.at2(k, j);
        int diff = tape.sub(dec, tape.constant(target));
        step_sse.push_back(tape.sum(tape.mul(diff, diff)));
      }
      std::vector<double> ones(step_sse.size(), 1.0);
      run.sse_node = tape.lincomb(step_sse, ones, 0.0);
      run.sse = tape.value(run.sse_node).scalar_value();
    } catch (...) {
      run.error = std::current_exception();
    }
  };

#ifdef _OPENMP
  if (cfg.parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(B); ++i) forward_one(static_cast<std::size_t>(i));
  } else
#endif
  {
    for (std::size_t i = 0; i < B; ++i) forward_one(i);
  }
  for (const auto& run : runs)
    if (run.error) std::rethrow_exception(run.error);

  // Batch-pooled correlation on a small separate tape.
  std::size_t total_rows = 0, total_steps = 0;
  int fallbacks = 0;
  for (const auto& run : runs) {
    total_rows += run.rows;
    total_steps += run.steps;
    fallbacks += run.fallbacks;
  }
  ad::Array pooled({total_rows, hdim});
  {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < B; ++i) {
      const ad::Tape& tape = ws.tapes[i];
      for (int node : runs[i].state_nodes) {
        const ad::Array& v = tape.value(node);
        for (std::size_t k = 0; k < hdim; ++k) pooled.at2(pos, k) = v[k];
        ++pos;
      }
    }
  }

  BatchResult res;
  ad::Tape corr_tape;
  int pooled_node = corr_tape.leaf(pooled);
  double rho_vals[3] = {0.0, 0.0, 0.0};
  std::vector<int> rho_nodes;
  std::vector<double> rho_w;
  for (int s = 0; s < 3; ++s) {
    int node = rho_on_tape(corr_tape, pooled_node, pooled_scores(batch, s), hdim);
    if (node < 0) {
      ++res.loss.degenerate_scores;
      continue;
    }
    rho_vals[s] = corr_tape.value(node).scalar_value();
    rho_nodes.push_back(node);
    rho_w.push_back(-1.0);
  }
  res.loss.rho_sofa = rho_vals[0];
  res.loss.rho_sapsii = rho_vals[1];
  res.loss.rho_oasis = rho_vals[2];
  res.loss.corr = -(rho_vals[0] + rho_vals[1] + rho_vals[2]);

  bool have_corr_grad = false;
  if (!rho_nodes.empty() && cfg.lambda != 0.0) {
    int corr_node = corr_tape.lincomb(rho_nodes, rho_w, 0.0);
    corr_tape.backward(corr_node);
    have_corr_grad = corr_tape.has_grad(pooled_node);
  }

  double sse_total = 0.0;
  double penalty_total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    sse_total += runs[i].sse;
    for (int pn : runs[i].penalty_nodes)
      penalty_total += ws.tapes[i].value(pn).scalar_value();
  }
  const double mse_w = 1.0 / (static_cast<double>(total_rows) * static_cast<double>(d));
  res.loss.mse = sse_total * mse_w;
  res.loss.total = res.loss.mse + cfg.lambda * res.loss.corr;
  res.solver_steps = total_steps;
  res.stiffness_fallbacks = fallbacks;
  res.stiffness_penalty =
      total_steps > 0 ? penalty_total / static_cast<double>(total_steps) : 0.0;
  res.objective = res.loss.total;
  if (stiff) res.objective += cfg.stabilizer.lambda_reg * res.stiffness_penalty;

  // Backward per trajectory with injected cotangents, then ordered reduce.
  const ad::Array mse_seed = ad::Array::scalar(mse_w);
  const ad::Array pen_seed = ad::Array::scalar(
      stiff && total_steps > 0
          ? cfg.stabilizer.lambda_reg / static_cast<double>(total_steps)
          : 0.0);
  std::vector<std::size_t> row_offset(B, 0);
  {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < B; ++i) {
      row_offset[i] = pos;
      pos += runs[i].rows;
    }
  }
  const ad::Array* pooled_grad = have_corr_grad ? &corr_tape.grad(pooled_node) : nullptr;

  auto backward_one = [&](std::size_t i) {
    TrajRun& run = runs[i];
    try {
      ad::Tape& tape = ws.tapes[i];
      std::vector<std::pair<int, const ad::Array*>> seeds;
      std::vector<ad::Array> cot_rows;
      seeds.emplace_back(run.sse_node, &mse_seed);
      if (pooled_grad) {
        cot_rows.resize(run.rows);
        for (std::size_t k = 0; k < run.rows; ++k) {
          cot_rows[k].assign_zeros({hdim});
          for (std::size_t c = 0; c < hdim; ++c)
            cot_rows[k][c] = cfg.lambda * pooled_grad->at2(row_offset[i] + k, c);
          seeds.emplace_back(run.state_nodes[k], &cot_rows[k]);
        }
      }
      for (int pn : run.penalty_nodes) seeds.emplace_back(pn, &pen_seed);
      tape.backward_seeded(seeds);

      std::vector<double>& slot = ws.grad_slots[i];
      slot.clear();
      for (int pid : pnodes[i].ordered()) {
        const ad::Array& val = tape.value(pid);
        if (tape.has_grad(pid)) {
          const ad::Array& g = tape.grad(pid);
          slot.insert(slot.end(), g.data(), g.data() + g.size());
        } else {
          slot.insert(slot.end(), val.size(), 0.0);
        }
      }
    } catch (...) {
      run.error = std::current_exception();
    }
  };

#ifdef _OPENMP
  if (cfg.parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(B); ++i) backward_one(static_cast<std::size_t>(i));
  } else
#endif
  {
    for (std::size_t i = 0; i < B; ++i) backward_one(i);
  }
  for (const auto& run : runs)
    if (run.error) std::rethrow_exception(run.error);

  res.grads.assign(ws.grad_slots[0].size(), 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& slot = ws.grad_slots[i];
    for (std::size_t g = 0; g < res.grads.size(); ++g) res.grads[g] += slot[g];
  }
  return res;
}

model::LossBreakdown eval_loss(const CdeAutoencoder& m,
                               const std::vector<const Trajectory*>& batch,
                               double lambda, const ode::SolverConfig& solver,
                               bool parallel) {
  const std::size_t B = batch.size();
  if (B == 0) throw ContractError("eval_loss: empty batch");
  const std::size_t hdim = m.cfg.hidden_size, d = m.cfg.feature_dim;

  std::vector<double> sse(B, 0.0);
  std::vector<std::vector<ad::Array>> latents(B);
  std::vector<std::exception_ptr> errs(B);

  auto eval_one = [&](std::size_t i) {
    try {
      const Trajectory& tr = *batch[i];
      ode::HiddenTrajectory ht = model::encode(m, path_of(tr), solver);
      double acc = 0.0;
      for (std::size_t k = 0; k < tr.steps(); ++k) {
        ad::Array dec = m.decode(ht.states[k]);
        for (std::size_t j = 0; j < d; ++j) {
          const double e = dec[j] - tr.observations.at2(k, j);
          acc += e * e;
        }
      }
      sse[i] = acc;
      latents[i] = std::move(ht.states);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  };

#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(B); ++i) eval_one(static_cast<std::size_t>(i));
  } else
#endif
  {
    for (std::size_t i = 0; i < B; ++i) eval_one(i);
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);

  std::size_t total_rows = 0;
  double sse_total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    total_rows += latents[i].size();
    sse_total += sse[i];
  }
  ad::Array pooled({total_rows, hdim});
  std::size_t pos = 0;
  for (std::size_t i = 0; i < B; ++i)
    for (const auto& st : latents[i]) {
      for (std::size_t k = 0; k < hdim; ++k) pooled.at2(pos, k) = st[k];
      ++pos;
    }

  model::LossBreakdown lb;
  lb.mse = sse_total / (static_cast<double>(total_rows) * static_cast<double>(d));
  double rho[3] = {0.0, 0.0, 0.0};
  for (int s = 0; s < 3; ++s) {
    ad::Array scores = pooled_scores(batch, s);
    try {
      rho[s] = model::acuity_correlation(pooled, scores);
    } catch (const UndefinedCorrelationError&) {
      ++lb.degenerate_scores;
    }
  }
  lb.rho_sofa = rho[0];
  lb.rho_sapsii = rho[1];
  lb.rho_oasis = rho[2];
  lb.corr = -(rho[0] + rho[1] + rho[2]);
  lb.total = lb.mse + lambda * lb.corr;
  return lb;
}

std::vector<ode::HiddenTrajectory> encode_batch(
    const CdeAutoencoder& m, const std::vector<const Trajectory*>& batch,
    const ode::SolverConfig& solver, bool parallel) {
  std::vector<ode::HiddenTrajectory> out(batch.size());
  std::vector<std::exception_ptr> errs(batch.size());
  auto one = [&](std::size_t i) {
    try {
      out[i] = model::encode(m, path_of(*batch[i]), solver);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  };
#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(batch.size()); ++i) one(static_cast<std::size_t>(i));
  } else
#endif
  {
    for (std::size_t i = 0; i < batch.size(); ++i) one(i);
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

PooledRho pooled_acuity_rho(const CdeAutoencoder& m,
                            const std::vector<const Trajectory*>& batch,
                            const ode::SolverConfig& solver, bool parallel) {
  auto encs = encode_batch(m, batch, solver, parallel);
  const std::size_t hdim = m.cfg.hidden_size;
  std::size_t total_rows = 0;
  for (const auto& e : encs) total_rows += e.states.size();
  ad::Array pooled({total_rows, hdim});
  std::size_t pos = 0;
  for (const auto& e : encs)
    for (const auto& st : e.states) {
      for (std::size_t k = 0; k < hdim; ++k) pooled.at2(pos, k) = st[k];
      ++pos;
    }
  PooledRho r;
  double vals[3] = {0.0, 0.0, 0.0};
  for (int s = 0; s < 3; ++s) {
    try {
      vals[s] = model::acuity_correlation(pooled, pooled_scores(batch, s));
    } catch (const UndefinedCorrelationError&) {
      ++r.degenerate_scores;
    }
  }
  r.sofa = vals[0];
  r.sapsii = vals[1];
  r.oasis = vals[2];
  return r;
}

}  // namespace stablecde::train
