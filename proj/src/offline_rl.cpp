#include "stablecde/offline_rl.hpp"

#include <algorithm>
#include <cmath>

#include "stablecde/adam.hpp"
#include "stablecde/errors.hpp"
#include "stablecde/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stablecde::rl {

void MlpHead::allocate() {
  if (hidden > 0) {
    w1.assign_zeros({hidden, in_dim});
    b1.assign_zeros({hidden});
    w2.assign_zeros({out_dim, hidden});
    b2.assign_zeros({out_dim});
  } else {
    w1.assign_zeros({0});
    b1.assign_zeros({0});
    w2.assign_zeros({out_dim, in_dim});
    b2.assign_zeros({out_dim});
  }
}

void MlpHead::init_params(std::uint64_t seed, double scale) {
  Rng rng(seed ^ 0x31cULL);
  auto xavier = [&](ad::Array& w, std::size_t fi, std::size_t fo) {
    const double s = scale * std::sqrt(6.0 / static_cast<double>(fi + fo));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
  };
  if (hidden > 0) {
    xavier(w1, in_dim, hidden);
    b1.fill(0.0);
    xavier(w2, hidden, out_dim);
    b2.fill(0.0);
  } else {
    xavier(w2, in_dim, out_dim);
    b2.fill(0.0);
  }
}

ad::Array MlpHead::forward(const ad::Array& x) const {
  if (hidden == 0) {
    ad::Array out({out_dim});
    for (std::size_t i = 0; i < out_dim; ++i) {
      const double* row = w2.data() + i * in_dim;
      double acc = b2[i];
      for (std::size_t j = 0; j < in_dim; ++j) acc += row[j] * x[j];
      out[i] = acc;
    }
    return out;
  }
  std::vector<double> a1(hidden);
  for (std::size_t i = 0; i < hidden; ++i) {
    const double* row = w1.data() + i * in_dim;
    double acc = b1[i];
    for (std::size_t j = 0; j < in_dim; ++j) acc += row[j] * x[j];
    a1[i] = acc > 0.0 ? acc : 0.0;
  }
  ad::Array out({out_dim});
  for (std::size_t i = 0; i < out_dim; ++i) {
    const double* row = w2.data() + i * hidden;
    double acc = b2[i];
    for (std::size_t j = 0; j < hidden; ++j) acc += row[j] * a1[j];
    out[i] = acc;
  }
  return out;
}

MlpHeadNodes MlpHeadNodes::make(ad::Tape& t, const MlpHead& h) {
  MlpHeadNodes p;
  if (h.hidden > 0) {
    p.w1 = t.leaf(h.w1);
    p.b1 = t.leaf(h.b1);
  }
  p.w2 = t.leaf(h.w2);
  p.b2 = t.leaf(h.b2);
  return p;
}

std::vector<int> MlpHeadNodes::ordered() const {
  std::vector<int> v;
  if (w1 >= 0) {
    v.push_back(w1);
    v.push_back(b1);
  }
  v.push_back(w2);
  v.push_back(b2);
  return v;
}

int MlpHead::forward_tape(ad::Tape& t, const MlpHeadNodes& p, int x) const {
  if (hidden == 0) return t.add(t.matvec(p.w2, x), p.b2);
  int a1 = t.relu(t.add(t.matvec(p.w1, x), p.b1));
  return t.add(t.matvec(p.w2, a1), p.b2);
}

std::vector<ad::Array*> MlpHead::params() {
  if (hidden > 0) return {&w1, &b1, &w2, &b2};
  return {&w2, &b2};
}

std::vector<const ad::Array*> MlpHead::params() const {
  auto mut = const_cast<MlpHead*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::size_t MlpHead::param_count() const {
  std::size_t n = 0;
  for (auto* p : params()) n += p->size();
  return n;
}

void MlpHead::flatten(std::vector<double>& out) const {
  out.clear();
  for (auto* p : params()) out.insert(out.end(), p->data(), p->data() + p->size());
}

void MlpHead::unflatten(const std::vector<double>& in) {
  std::size_t off = 0;
  for (auto* p : params()) {
    for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = in[off + i];
    off += p->size();
  }
}

std::vector<double> BehaviorPolicy::probs(const ad::Array& state) const {
  const ad::Array logits = net.forward(state);
  double m = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

std::vector<Transition> build_transitions(
    const std::vector<LatentTrajectory>& trajectories) {
  std::vector<Transition> out;
  for (const auto& tr : trajectories) {
    if (tr.states.size() != tr.actions.size())
      throw ContractError("build_transitions: state/action length mismatch");
    for (std::size_t k = 0; k + 1 < tr.states.size(); ++k) {
      Transition t;
      t.s = &tr.states[k];
      t.a = tr.actions[k];
      t.s2 = &tr.states[k + 1];
      t.done = k + 2 == tr.states.size();
      t.r = t.done ? tr.ret : 0.0;
      out.push_back(t);
    }
  }
  return out;
}

BcResult train_behavior(const std::vector<LatentTrajectory>& data,
                        const BcConfig& cfg) {
  struct Sample {
    const ad::Array* s;
    int a;
  };
  std::vector<Sample> samples;
  for (const auto& tr : data)
    for (std::size_t k = 0; k < tr.states.size(); ++k)
      samples.push_back({&tr.states[k], tr.actions[k]});
  if (samples.empty()) throw DataError("train_behavior: empty dataset");

  BcResult res;
  int first_action = samples[0].a;
  res.degenerate_single_class = std::all_of(
      samples.begin(), samples.end(),
      [&](const Sample& s) { return s.a == first_action; });

  Rng rng(cfg.seed ^ 0xbcbcULL);
  // Deterministic holdout split for reported accuracy.
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(
                                   cfg.val_fraction * static_cast<double>(samples.size())));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());
  if (train_idx.empty()) train_idx = val_idx;

  res.policy.net.in_dim = samples[0].s->size();
  res.policy.net.hidden = cfg.hidden;
  res.policy.net.out_dim = kActionCount;
  res.policy.net.allocate();
  res.policy.net.init_params(cfg.seed);

  std::vector<double> flat, grad;
  res.policy.net.flatten(flat);
  Adam opt(cfg.lr);
  ad::Tape tape;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[rng.below(i)]);
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop =
          std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch));
      tape.rewind();
      MlpHeadNodes p = MlpHeadNodes::make(tape, res.policy.net);
      std::vector<int> losses;
      for (std::size_t i = start; i < stop; ++i) {
        const Sample& s = samples[train_idx[i]];
        int x = tape.constant(*s.s);
        int logits = res.policy.net.forward_tape(tape, p, x);
        losses.push_back(tape.softmax_cross_entropy(logits, s.a));
      }
      std::vector<double> ones(losses.size(), 1.0 / static_cast<double>(losses.size()));
      int root = tape.lincomb(losses, ones, 0.0);
      tape.backward(root);
      grad.clear();
      for (int pid : p.ordered()) {
        const ad::Array& g = tape.grad(pid);
        grad.insert(grad.end(), g.data(), g.data() + g.size());
      }
      opt.step(flat, grad);
      res.policy.net.unflatten(flat);
    }
  }

  std::size_t hits = 0;
  for (std::size_t i : val_idx) {
    const auto pr = res.policy.probs(*samples[i].s);
    const int top = static_cast<int>(std::max_element(pr.begin(), pr.end()) - pr.begin());
    if (top == samples[i].a) ++hits;
  }
  res.val_accuracy = static_cast<double>(hits) / static_cast<double>(val_idx.size());
  return res;
}

std::vector<int> admissible_actions(const std::vector<double>& behavior_probs,
                                    double tau_bc) {
  double m = 0.0;
  for (double p : behavior_probs) m = std::max(m, p);
  std::vector<int> out;
  for (std::size_t a = 0; a < behavior_probs.size(); ++a)
    if (behavior_probs[a] / m >= tau_bc) out.push_back(static_cast<int>(a));
  return out;
}

int greedy_action(const QPolicy& q, const BehaviorPolicy& behavior,
                  const ad::Array& state) {
  const auto probs = behavior.probs(state);
  const auto adm = admissible_actions(probs, q.tau_bc);
  const ad::Array qv = q.online.forward(state);
  int best = adm[0];
  for (int a : adm)
    if (qv[static_cast<std::size_t>(a)] > qv[static_cast<std::size_t>(best)]) best = a;
  return best;
}

QPolicy train_dbcq(const std::vector<Transition>& transitions,
                   const BehaviorPolicy& behavior, const DbcqConfig& cfg) {
  if (transitions.empty()) throw DataError("train_dbcq: no transitions");
  QPolicy q;
  q.tau_bc = cfg.tau_bc;
  q.sync_interval = cfg.sync_interval;
  q.online.in_dim = transitions[0].s->size();
  q.online.hidden = cfg.hidden;
  q.online.out_dim = kActionCount;
  q.online.allocate();
  q.online.init_params(cfg.seed + 1, 0.1);
  q.target = q.online;

  const double q_bound = 1.0 / (1.0 - cfg.gamma) + cfg.divergence_margin;

  Rng rng(cfg.seed ^ 0xdbcdbcULL);
  std::vector<double> flat, grad;
  q.online.flatten(flat);
  Adam opt(cfg.lr);
  ad::Tape tape;

  for (long step = 0; step < cfg.steps; ++step) {
    tape.rewind();
    MlpHeadNodes p = MlpHeadNodes::make(tape, q.online);
    std::vector<int> losses;
    double max_abs_q = 0.0;
    const int bsz = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), transitions.size()));
    for (int i = 0; i < bsz; ++i) {
      const Transition& tr = transitions[rng.below(transitions.size())];
      double y = tr.r;
      if (!tr.done) {
        // Bootstrap restricted to behavior-admissible actions; action chosen
        // by the online net, value taken from the target copy.
        const auto probs = behavior.probs(*tr.s2);
        const auto adm = admissible_actions(probs, cfg.tau_bc);
        const ad::Array qon = q.online.forward(*tr.s2);
        int astar = adm[0];
        for (int a : adm)
          if (qon[static_cast<std::size_t>(a)] > qon[static_cast<std::size_t>(astar)])
            astar = a;
        const ad::Array qt = q.target.forward(*tr.s2);
        y += cfg.gamma * qt[static_cast<std::size_t>(astar)];
      }
      int x = tape.constant(*tr.s);
      int qrow = q.online.forward_tape(tape, p, x);
      max_abs_q = std::max(max_abs_q, std::fabs(tape.value(qrow)[static_cast<std::size_t>(tr.a)]));
      int qa = tape.pick(qrow, static_cast<std::size_t>(tr.a));
      int diff = tape.add(qa, tape.constant(ad::Array::scalar(-y)));
      losses.push_back(tape.mul(diff, diff));
    }
    if (max_abs_q > q_bound)
      throw NumericalError("train_dbcq: diverging Q values (|Q| = " +
                           std::to_string(max_abs_q) + " > bound " +
                           std::to_string(q_bound) + " at step " +
                           std::to_string(step) + ")");
    std::vector<double> ws(losses.size(), 1.0 / static_cast<double>(losses.size()));
    int root = tape.lincomb(losses, ws, 0.0);
    tape.backward(root);
    grad.clear();
    for (int pid : p.ordered()) {
      const ad::Array& g = tape.grad(pid);
      grad.insert(grad.end(), g.data(), g.data() + g.size());
    }
    opt.step(flat, grad);
    q.online.unflatten(flat);
    if ((step + 1) % cfg.sync_interval == 0) q.target = q.online;
  }
  return q;
}

WisReport wis_evaluate(const QPolicy& policy, const BehaviorPolicy& behavior,
                       const std::vector<LatentTrajectory>& trajectories,
                       double epsilon_soft, bool parallel) {
  if (trajectories.empty()) throw DataError("wis_evaluate: no trajectories");
  const std::size_t n = trajectories.size();
  WisReport rep;
  rep.weights.assign(n, 0.0);
  const double uniform = epsilon_soft / static_cast<double>(kActionCount);

  auto weight_of = [&](const LatentTrajectory& tr) {
    double w = 1.0;
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
      const auto probs = behavior.probs(tr.states[k]);
      const int g = greedy_action(policy, behavior, tr.states[k]);
      const double pe =
          (g == tr.actions[k] ? 1.0 - epsilon_soft : 0.0) + uniform;
      w *= pe / probs[static_cast<std::size_t>(tr.actions[k])];
    }
    return w;
  };

#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (long i = 0; i < static_cast<long>(n); ++i)
      rep.weights[static_cast<std::size_t>(i)] =
          weight_of(trajectories[static_cast<std::size_t>(i)]);
  } else
#endif
  {
    for (std::size_t i = 0; i < n; ++i) rep.weights[i] = weight_of(trajectories[i]);
  }

  double sw = 0.0, swg = 0.0, sw2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += rep.weights[i];
    swg += rep.weights[i] * trajectories[i].ret;
    sw2 += rep.weights[i] * rep.weights[i];
  }
  if (sw <= 0.0) throw NumericalError("wis_evaluate: all importance weights zero");
  rep.wis_return = swg / sw;
  rep.effective_sample_size = sw * sw / sw2;
  return rep;
}

}  // namespace stablecde::rl
