#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stablecde/array.hpp"
#include "stablecde/tape.hpp"

namespace stablecde::rl {

constexpr int kActionCount = 25;

// Small MLP head over a latent state; hidden == 0 makes it linear.
struct MlpHead {
  std::size_t in_dim = 0, hidden = 64, out_dim = kActionCount;
  ad::Array w1, b1, w2, b2;

  void allocate();
  void init_params(std::uint64_t seed, double scale = 1.0);
  ad::Array forward(const ad::Array& x) const;
  int forward_tape(ad::Tape& t, const struct MlpHeadNodes& p, int x) const;
  std::vector<ad::Array*> params();
  std::vector<const ad::Array*> params() const;
  std::size_t param_count() const;
  void flatten(std::vector<double>& out) const;
  void unflatten(const std::vector<double>& in);
};

struct MlpHeadNodes {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  static MlpHeadNodes make(ad::Tape& t, const MlpHead& h);
  std::vector<int> ordered() const;
};

// Supervised model of the logged action distribution.
struct BehaviorPolicy {
  MlpHead net;
  // Softmax over logits; strictly positive, sums to one.
  std::vector<double> probs(const ad::Array& state) const;
};

struct QPolicy {
  MlpHead online;
  MlpHead target;
  double tau_bc = 0.3;
  int sync_interval = 1000;
};

// One per-step record of an encoded trajectory.
struct LatentTrajectory {
  std::string patient_id;
  std::vector<ad::Array> states;  // one latent per observation
  std::vector<int> actions;       // aligned with states
  double ret = 0.0;               // terminal-only return, +1 or -1
};

struct Transition {
  const ad::Array* s;
  int a;
  double r;
  const ad::Array* s2;
  bool done;
};

std::vector<Transition> build_transitions(
    const std::vector<LatentTrajectory>& trajectories);

struct BcConfig {
  double lr = 1e-3;
  int epochs = 30;
  int batch = 256;
  std::size_t hidden = 64;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
};

struct BcResult {
  BehaviorPolicy policy;
  double val_accuracy = 0.0;
  bool degenerate_single_class = false;
};

BcResult train_behavior(const std::vector<LatentTrajectory>& data,
                        const BcConfig& cfg);

struct DbcqConfig {
  double lr = 1e-5;
  long steps = 200000;
  int batch = 256;
  double gamma = 0.99;
  double tau_bc = 0.3;
  int sync_interval = 1000;
  std::size_t hidden = 64;
  std::uint64_t seed = 0;
  double divergence_margin = 1.0;
};

// Actions whose behavior probability is within tau_bc of the per-state
// maximum. Never empty: the argmax always qualifies.
std::vector<int> admissible_actions(const std::vector<double>& behavior_probs,
                                    double tau_bc);

int greedy_action(const QPolicy& q, const BehaviorPolicy& behavior,
                  const ad::Array& state);

QPolicy train_dbcq(const std::vector<Transition>& transitions,
                   const BehaviorPolicy& behavior, const DbcqConfig& cfg);

struct WisReport {
  double wis_return = 0.0;
  double effective_sample_size = 0.0;
  std::vector<double> weights;  // per trajectory, unnormalized
};

// Weighted importance sampling of the epsilon-softened greedy policy
// against the cloned behavior policy.
WisReport wis_evaluate(const QPolicy& policy, const BehaviorPolicy& behavior,
                       const std::vector<LatentTrajectory>& trajectories,
                       double epsilon_soft = 0.01, bool parallel = true);

}  // namespace stablecde::rl
