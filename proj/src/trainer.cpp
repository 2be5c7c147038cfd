#include "stablecde/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "stablecde/adam.hpp"
#include "stablecde/checkpoint.hpp"
#include "stablecde/rng.hpp"

namespace stablecde::train {

namespace {

nlohmann::json model_cfg_json(const model::ModelConfig& mc) {
  return {{"feature_dim", mc.feature_dim},
          {"hidden_size", mc.hidden_size},
          {"field_width", mc.field_width},
          {"decoder_width", mc.decoder_width},
          {"ln_eps", mc.ln_eps}};
}

model::ModelConfig model_cfg_from_json(const nlohmann::json& j) {
  model::ModelConfig mc;
  mc.feature_dim = j.at("feature_dim").get<std::size_t>();
  mc.hidden_size = j.at("hidden_size").get<std::size_t>();
  mc.field_width = j.at("field_width").get<std::size_t>();
  mc.decoder_width = j.at("decoder_width").get<std::size_t>();
  mc.ln_eps = j.at("ln_eps").get<double>();
  return mc;
}

}  // namespace

TrainOutput train_model(const std::vector<const cohort::Trajectory*>& train_set,
                        const std::vector<const cohort::Trajectory*>& val_set,
                        const TrainConfig& cfg) {
  if (train_set.empty() || val_set.empty())
    throw DataError("train_model: empty train or validation set");

  model::CdeAutoencoder m(cfg.model);
  m.init_params(cfg.seed);

  TrainOutput out;
  out.model_cfg = cfg.model;
  out.record.lambda = cfg.lambda;

  BatchConfig bcfg;
  bcfg.lambda = cfg.lambda;
  bcfg.solver = cfg.solver;
  bcfg.stabilizer = cfg.stabilizer;
  if (cfg.stabilizer.method == stab::StabilizerMethod::kImplicitAdams)
    bcfg.solver.kind = ode::SolverKind::kImplicitAdams;
  bcfg.parallel = cfg.parallel;

  BatchWorkspace ws;
  Adam opt(cfg.lr);
  std::vector<double> flat, prev;
  m.flatten(flat);

  // Fixed train subsample for the per-epoch acuity correlation.
  std::vector<const cohort::Trajectory*> rho_set;
  {
    std::vector<std::size_t> idx(train_set.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(cfg.seed ^ 0x50b5e7ULL);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.rho_subsample), idx.size());
    for (std::size_t i = 0; i < take; ++i) rho_set.push_back(train_set[idx[i]]);
  }

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(cfg.seed ^ 0x0bdeULL);

  const bool clip = cfg.stabilizer.method == stab::StabilizerMethod::kGradClip;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double sum_total = 0.0, sum_mse = 0.0, sum_corr = 0.0, sum_pen = 0.0,
           sum_obj = 0.0;
    double max_grad_norm = 0.0;
    int batches = 0, skipped = 0;

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      if (stop - start < 2) continue;  // pearson needs pooled variance
      std::vector<const cohort::Trajectory*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);

      BatchResult br;
      try {
        br = batch_loss_and_grads(m, batch, bcfg, ws);
      } catch (const StiffnessFailure&) {
        ++skipped;
        continue;  // surfaced as a diagnostic; batch skipped
      } catch (const SolverDivergence&) {
        ++skipped;
        continue;
      }
      ++batches;
      sum_total += br.loss.total;
      sum_mse += br.loss.mse;
      sum_corr += br.loss.corr;
      sum_pen += br.stiffness_penalty;
      sum_obj += br.objective;

      if (clip) stab::clip_gradients(br.grads, cfg.stabilizer.clip_norm);
      double sq = 0.0;
      for (double g : br.grads) sq += g * g;
      max_grad_norm = std::max(max_grad_norm, std::sqrt(sq));

      prev = flat;
      opt.step(flat, br.grads);
      m.unflatten(flat);
      if (!m.all_finite()) {
        // Reject the step and restore the previous parameters.
        flat = prev;
        m.unflatten(flat);
        ++out.rejected_steps;
      }
    }

    const int total_batches = batches + skipped;
    if (total_batches > 0 &&
        static_cast<double>(skipped) >
            cfg.max_batch_failure_frac * static_cast<double>(total_batches))
      throw NumericalError(
          "train_model: solver failed on " + std::to_string(skipped) + "/" +
          std::to_string(total_batches) + " batches in epoch " +
          std::to_string(epoch) + "; dynamics too stiff for the configured solver");
    if (batches == 0)
      throw NumericalError("train_model: no batch completed in epoch " +
                           std::to_string(epoch));

    stop::EpochEntry entry;
    entry.l_total = sum_total / batches;
    entry.l_mse = sum_mse / batches;
    entry.l_corr = sum_corr / batches;
    entry.grad_norm = max_grad_norm;
    entry.l_val =
        eval_loss(m, val_set, cfg.lambda, cfg.solver, cfg.parallel).total;
    entry.rho_train =
        pooled_acuity_rho(m, rho_set, cfg.solver, cfg.parallel).mean();
    out.record.epochs.push_back(entry);
    out.penalty_series.push_back(batches > 0 ? sum_pen / batches : 0.0);
    out.objective_series.push_back(batches > 0 ? sum_obj / batches : 0.0);
    out.skipped_batches.push_back(skipped);
    out.snapshots.push_back(flat);
  }

  out.selection = stop::select_checkpoints(out.record, cfg.criteria);

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const int final_epoch = cfg.epochs - 1;
    out.final_path = cfg.out_dir + "/final.ckpt";
    save_model_checkpoint(out.final_path, out, final_epoch, cfg);
    if (out.selection.found) {
      out.optimal_path = cfg.out_dir + "/optimal_stable.ckpt";
      out.overtrained_path = cfg.out_dir + "/overtrained_unstable.ckpt";
      save_model_checkpoint(out.optimal_path, out, out.selection.optimal_stable, cfg);
      save_model_checkpoint(out.overtrained_path, out,
                            out.selection.overtrained_unstable, cfg);
      out.record.epochs[static_cast<std::size_t>(out.selection.optimal_stable)]
          .checkpoint = out.optimal_path;
      out.record.epochs[static_cast<std::size_t>(out.selection.overtrained_unstable)]
          .checkpoint = out.overtrained_path;
    }
  }
  out.report = stop::stopping_report(out.record, cfg.criteria, out.selection);
  return out;
}

model::CdeAutoencoder materialize(const TrainOutput& out, int epoch) {
  if (epoch < 0 || static_cast<std::size_t>(epoch) >= out.snapshots.size())
    throw ContractError("materialize: epoch out of range");
  model::CdeAutoencoder m(out.model_cfg);
  m.unflatten(out.snapshots[static_cast<std::size_t>(epoch)]);
  return m;
}

void save_model_checkpoint(const std::string& path, const TrainOutput& out,
                           int epoch, const TrainConfig& cfg) {
  model::CdeAutoencoder m = materialize(out, epoch);
  const auto& e = out.record.epochs[static_cast<std::size_t>(epoch)];
  nlohmann::json header;
  header["kind"] = "model";
  header["epoch"] = epoch;
  header["model_config"] = model_cfg_json(out.model_cfg);
  header["train"] = {{"seed", cfg.seed},
                     {"lr", cfg.lr},
                     {"lambda", cfg.lambda},
                     {"epochs", cfg.epochs},
                     {"batch_size", cfg.batch_size},
                     {"solver_dt", cfg.solver.dt},
                     {"stabilizer", stab::stabilizer_name(cfg.stabilizer.method)}};
  header["loss"] = {{"l_total", e.l_total}, {"l_mse", e.l_mse},
                    {"l_corr", e.l_corr},   {"l_val", e.l_val},
                    {"rho_train", e.rho_train}};
  std::vector<std::pair<std::string, const ad::Array*>> arrays;
  for (auto& [name, p] : m.params()) arrays.emplace_back(name, p);
  io::save_checkpoint(path, header, arrays);
}

model::CdeAutoencoder load_model_checkpoint(const std::string& path) {
  io::LoadedCheckpoint lc = io::load_checkpoint(path);
  if (lc.header.at("kind").get<std::string>() != "model")
    throw DataError("load_model_checkpoint: not a model checkpoint: " + path);
  model::CdeAutoencoder m(model_cfg_from_json(lc.header.at("model_config")));
  for (auto& [name, p] : m.params()) {
    const ad::Array& src = lc.get(name);
    if (!src.same_shape(*p))
      throw DataError("load_model_checkpoint: shape mismatch for " + name);
    *p = src;
  }
  return m;
}

}  // namespace stablecde::train
