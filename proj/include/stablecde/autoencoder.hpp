#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stablecde/solver.hpp"
#include "stablecde/tape.hpp"

namespace stablecde::model {

struct ModelConfig {
  std::size_t feature_dim = 33;
  std::size_t hidden_size = 64;
  std::size_t field_width = 128;    // both hidden layers of the vector field
  std::size_t decoder_width = 64;
  double ln_eps = 1e-5;
};

// CDE autoencoder: initial linear map, vector-field MLP
// (h -> width -> width -> h*d, ReLU + layer norm on hidden layers, tanh
// output), and a one-hidden-layer decoder back to feature space.
struct CdeAutoencoder {
  ModelConfig cfg;

  ad::Array init_w, init_b;
  ad::Array f_w1, f_b1, f_g1, f_be1;
  ad::Array f_w2, f_b2, f_g2, f_be2;
  ad::Array f_w3, f_b3;
  ad::Array dec_w1, dec_b1, dec_w2, dec_b2;

  explicit CdeAutoencoder(const ModelConfig& c) : cfg(c) { allocate(); }

  void allocate();
  void init_params(std::uint64_t seed);

  std::vector<std::pair<std::string, ad::Array*>> params();
  std::vector<std::pair<std::string, const ad::Array*>> params() const;
  std::size_t param_count() const;
  void flatten(std::vector<double>& out) const;
  void unflatten(const std::vector<double>& in);
  bool all_finite() const;

  // dh/dt for one control slope; both paths produce bitwise-equal values.
  ad::Array field_apply(const ad::Array& h, const ad::Array& slope) const;
  ad::Array decode(const ad::Array& hidden) const;
  ad::Array initial_state(const ad::Array& o0) const;
};

// Node ids of the model parameters as leaves on one tape.
struct ParamNodes {
  int init_w, init_b;
  int f_w1, f_b1, f_g1, f_be1;
  int f_w2, f_b2, f_g2, f_be2;
  int f_w3, f_b3;
  int dec_w1, dec_b1, dec_w2, dec_b2;

  std::vector<int> ordered() const {
    return {init_w, init_b, f_w1, f_b1, f_g1, f_be1, f_w2, f_b2,
            f_g2,   f_be2,  f_w3, f_b3, dec_w1, dec_b1, dec_w2, dec_b2};
  }
};

ParamNodes make_param_nodes(ad::Tape& tape, const CdeAutoencoder& m);

int field_forward_tape(ad::Tape& tape, const CdeAutoencoder& m,
                       const ParamNodes& p, int h_node, int slope_node);
int decode_tape(ad::Tape& tape, const CdeAutoencoder& m, const ParamNodes& p,
                int h_node);

// Tape-backed solver execution: states are node ids, the step sequence is
// value-identical to the plain path.
struct TapeExec {
  using State = int;
  ad::Tape* tape;
  const CdeAutoencoder* model;
  const ParamNodes* pnodes;
  int slope_node = -1;

  void bind_slope(const ad::Array& s) { slope_node = tape->constant(s); }
  void on_step(double /*t*/, State /*h*/) {}
  State eval(State h) {
    return field_forward_tape(*tape, *model, *pnodes, h, slope_node);
  }
  State axpy(State x, double a, State y) { return tape->add(x, tape->scale(y, a)); }
  double inf_norm(State s) const {
    const ad::Array& v = tape->value(s);
    double m = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) m = std::max(m, std::fabs(v[i]));
    return m;
  }
  double dot(State a, State b) const {
    const ad::Array& va = tape->value(a);
    const ad::Array& vb = tape->value(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) acc += va[i] * vb[i];
    return acc;
  }
  bool finite(State s) const { return tape->value(s).all_finite(); }
};

// Hidden states at every observation time of a control path (plain values).
ode::HiddenTrajectory encode(const CdeAutoencoder& m, const ode::ControlPath& path,
                             const ode::SolverConfig& scfg);

// Tape-recorded encode: returns the node id of the state at every knot.
std::vector<int> encode_tape(ad::Tape& tape, const CdeAutoencoder& m,
                             const ParamNodes& p, const ode::ControlPath& path,
                             const ode::SolverConfig& scfg);

// Same, but with a caller-supplied exec policy (e.g. one collecting
// per-step stiffness terms).
template <class Exec>
std::vector<int> encode_tape_core(Exec& ex, ad::Tape& tape,
                                  const CdeAutoencoder& /*m*/,
                                  const ParamNodes& p, const ode::ControlPath& path,
                                  const ode::SolverConfig& scfg) {
  int o0 = tape.constant(path.knot_value(0));
  int h0 = tape.add(tape.matvec(p.init_w, o0), p.init_b);
  std::vector<int> nodes(path.knot_count(), -1);
  ode::integrate_core(
      ex, h0, path,
      std::span<const double>(path.times().data(), path.times().size()), scfg,
      [&](std::size_t i, int node) { nodes[i] = node; });
  return nodes;
}

// Mean over latent dimensions of |pearson(dim, scores)|; zero-variance
// dimensions contribute 0. Throws UndefinedCorrelationError when the score
// column itself has no variance.
double acuity_correlation(const ad::Array& latents, const ad::Array& scores);

struct LossBreakdown {
  double mse = 0.0;
  double corr = 0.0;
  double total = 0.0;
  double rho_sofa = 0.0;
  double rho_sapsii = 0.0;
  double rho_oasis = 0.0;
  // Scores whose batch column had no variance (contributed 0, logged).
  int degenerate_scores = 0;
};

}  // namespace stablecde::model
