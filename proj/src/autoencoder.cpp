#include "stablecde/autoencoder.hpp"

#include <cmath>

#include "stablecde/rng.hpp"

namespace stablecde::model {

namespace {

void xavier_init(ad::Array& w, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                 double gain = 1.0) {
  const double s = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
}

// Inference-path layer norm; must stay loop-for-loop identical to the tape op.
void layer_norm_plain(const double* x, const double* g, const double* b,
                      double eps, std::size_t n, double* out) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv_std * g[i] + b[i];
}

void matvec_plain(const ad::Array& w, const double* x, double* y) {
  const std::size_t m = w.rows(), k = w.cols();
  const double* pw = w.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = pw + i * k;
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

}  // namespace

void CdeAutoencoder::allocate() {
  const std::size_t d = cfg.feature_dim, h = cfg.hidden_size, w = cfg.field_width,
                    dw = cfg.decoder_width;
  init_w.assign_zeros({h, d});
  init_b.assign_zeros({h});
  f_w1.assign_zeros({w, h});
  f_b1.assign_zeros({w});
  f_g1.assign_zeros({w});
  f_be1.assign_zeros({w});
  f_w2.assign_zeros({w, w});
  f_b2.assign_zeros({w});
  f_g2.assign_zeros({w});
  f_be2.assign_zeros({w});
  f_w3.assign_zeros({h * d, w});
  f_b3.assign_zeros({h * d});
  dec_w1.assign_zeros({dw, h});
  dec_b1.assign_zeros({dw});
  dec_w2.assign_zeros({d, dw});
  dec_b2.assign_zeros({d});
}

void CdeAutoencoder::init_params(std::uint64_t seed) {
  Rng rng(seed ^ 0x5ca1ab1eULL);
  const std::size_t d = cfg.feature_dim, h = cfg.hidden_size, w = cfg.field_width,
                    dw = cfg.decoder_width;
  xavier_init(init_w, d, h, rng);
  init_b.fill(0.0);
  xavier_init(f_w1, h, w, rng);
  f_b1.fill(0.0);
  f_g1.fill(1.0);
  f_be1.fill(0.0);
  xavier_init(f_w2, w, w, rng);
  f_b2.fill(0.0);
  f_g2.fill(1.0);
  f_be2.fill(0.0);
  // Small output layer keeps the initial dynamics mild.
  xavier_init(f_w3, w, h * d, rng, 0.1);
  f_b3.fill(0.0);
  xavier_init(dec_w1, h, dw, rng);
  dec_b1.fill(0.0);
  xavier_init(dec_w2, dw, d, rng);
  dec_b2.fill(0.0);
}

std::vector<std::pair<std::string, ad::Array*>> CdeAutoencoder::params() {
  return {{"init_w", &init_w},   {"init_b", &init_b}, {"f_w1", &f_w1},
          {"f_b1", &f_b1},       {"f_g1", &f_g1},     {"f_be1", &f_be1},
          {"f_w2", &f_w2},       {"f_b2", &f_b2},     {"f_g2", &f_g2},
          {"f_be2", &f_be2},     {"f_w3", &f_w3},     {"f_b3", &f_b3},
          {"dec_w1", &dec_w1},   {"dec_b1", &dec_b1}, {"dec_w2", &dec_w2},
          {"dec_b2", &dec_b2}};
}

std::vector<std::pair<std::string, const ad::Array*>> CdeAutoencoder::params() const {
  auto mut = const_cast<CdeAutoencoder*>(this)->params();
  std::vector<std::pair<std::string, const ad::Array*>> out;
  out.reserve(mut.size());
  for (auto& [n, p] : mut) out.emplace_back(n, p);
  return out;
}

std::size_t CdeAutoencoder::param_count() const {
  std::size_t n = 0;
  for (auto& [name, p] : params()) n += p->size();
  return n;
}

void CdeAutoencoder::flatten(std::vector<double>& out) const {
  out.clear();
  out.reserve(param_count());
  for (auto& [name, p] : params())
    out.insert(out.end(), p->data(), p->data() + p->size());
}

void CdeAutoencoder::unflatten(const std::vector<double>& in) {
  if (in.size() != param_count())
    throw DimensionError("unflatten: parameter count mismatch");
  std::size_t off = 0;
  for (auto& [name, p] : params()) {
    for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = in[off + i];
    off += p->size();
  }
}

bool CdeAutoencoder::all_finite() const {
  for (auto& [name, p] : params())
    if (!p->all_finite()) return false;
  return true;
}

ad::Array CdeAutoencoder::field_apply(const ad::Array& h,
                                      const ad::Array& slope) const {
  const std::size_t hs = cfg.hidden_size, d = cfg.feature_dim, w = cfg.field_width;
  std::vector<double> a1(w), n1(w), a2(w), n2(w), a3(hs * d);
  matvec_plain(f_w1, h.data(), a1.data());
  for (std::size_t i = 0; i < w; ++i) {
    a1[i] += f_b1[i];
    if (a1[i] < 0.0) a1[i] = 0.0;
  }
  layer_norm_plain(a1.data(), f_g1.data(), f_be1.data(), cfg.ln_eps, w, n1.data());
  matvec_plain(f_w2, n1.data(), a2.data());
  for (std::size_t i = 0; i < w; ++i) {
    a2[i] += f_b2[i];
    if (a2[i] < 0.0) a2[i] = 0.0;
  }
  layer_norm_plain(a2.data(), f_g2.data(), f_be2.data(), cfg.ln_eps, w, n2.data());
  matvec_plain(f_w3, n2.data(), a3.data());
  ad::Array out({hs});
  for (std::size_t i = 0; i < hs; ++i) {
    double acc = 0.0;
    const double* row = a3.data() + i * d;
    const double* b3row = f_b3.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) acc += std::tanh(row[j] + b3row[j]) * slope[j];
    out[i] = acc;
  }
  return out;
}

ad::Array CdeAutoencoder::decode(const ad::Array& hidden) const {
  const std::size_t d = cfg.feature_dim, dw = cfg.decoder_width;
  std::vector<double> a1(dw);
  matvec_plain(dec_w1, hidden.data(), a1.data());
  for (std::size_t i = 0; i < dw; ++i) {
    a1[i] += dec_b1[i];
    if (a1[i] < 0.0) a1[i] = 0.0;
  }
  ad::Array out({d});
  matvec_plain(dec_w2, a1.data(), out.data());
  for (std::size_t i = 0; i < d; ++i) out[i] += dec_b2[i];
  return out;
}

ad::Array CdeAutoencoder::initial_state(const ad::Array& o0) const {
  const std::size_t h = cfg.hidden_size;
  ad::Array out({h});
  matvec_plain(init_w, o0.data(), out.data());
  for (std::size_t i = 0; i < h; ++i) out[i] += init_b[i];
  return out;
}

ParamNodes make_param_nodes(ad::Tape& tape, const CdeAutoencoder& m) {
  ParamNodes p{};
  p.init_w = tape.leaf(m.init_w);
  p.init_b = tape.leaf(m.init_b);
  p.f_w1 = tape.leaf(m.f_w1);
  p.f_b1 = tape.leaf(m.f_b1);
  p.f_g1 = tape.leaf(m.f_g1);
  p.f_be1 = tape.leaf(m.f_be1);
  p.f_w2 = tape.leaf(m.f_w2);
  p.f_b2 = tape.leaf(m.f_b2);
  p.f_g2 = tape.leaf(m.f_g2);
  p.f_be2 = tape.leaf(m.f_be2);
  p.f_w3 = tape.leaf(m.f_w3);
  p.f_b3 = tape.leaf(m.f_b3);
  p.dec_w1 = tape.leaf(m.dec_w1);
  p.dec_b1 = tape.leaf(m.dec_b1);
  p.dec_w2 = tape.leaf(m.dec_w2);
  p.dec_b2 = tape.leaf(m.dec_b2);
  return p;
}

int field_forward_tape(ad::Tape& tape, const CdeAutoencoder& m,
                       const ParamNodes& p, int h_node, int slope_node) {
  const std::size_t hs = m.cfg.hidden_size, d = m.cfg.feature_dim;
  int a1 = tape.relu(tape.add(tape.matvec(p.f_w1, h_node), p.f_b1));
  int n1 = tape.layer_norm(a1, p.f_g1, p.f_be1, m.cfg.ln_eps);
  int a2 = tape.relu(tape.add(tape.matvec(p.f_w2, n1), p.f_b2));
  int n2 = tape.layer_norm(a2, p.f_g2, p.f_be2, m.cfg.ln_eps);
  int a3 = tape.tanh_(tape.add(tape.matvec(p.f_w3, n2), p.f_b3));
  int mat = tape.reshape(a3, {hs, d});
  return tape.matvec(mat, slope_node);
}

int decode_tape(ad::Tape& tape, const CdeAutoencoder& m, const ParamNodes& p,
                int h_node) {
  int a1 = tape.relu(tape.add(tape.matvec(p.dec_w1, h_node), p.dec_b1));
  return tape.add(tape.matvec(p.dec_w2, a1), p.dec_b2);
}

ode::HiddenTrajectory encode(const CdeAutoencoder& m, const ode::ControlPath& path,
                             const ode::SolverConfig& scfg) {
  ode::PlainExec ex;
  ex.field = [&m](const ad::Array& h, const ad::Array& s) {
    return m.field_apply(h, s);
  };
  ad::Array h0 = m.initial_state(path.knot_value(0));
  ode::HiddenTrajectory out;
  out.times = path.times();
  out.states.resize(out.times.size());
  ode::integrate_core(ex, h0, path,
                      std::span<const double>(out.times.data(), out.times.size()),
                      scfg,
                      [&](std::size_t i, const ad::Array& h) { out.states[i] = h; });
  return out;
}

std::vector<int> encode_tape(ad::Tape& tape, const CdeAutoencoder& m,
                             const ParamNodes& p, const ode::ControlPath& path,
                             const ode::SolverConfig& scfg) {
  TapeExec ex;
  ex.tape = &tape;
  ex.model = &m;
  ex.pnodes = &p;
  return encode_tape_core(ex, tape, m, p, path, scfg);
}

double acuity_correlation(const ad::Array& latents, const ad::Array& scores) {
  if (latents.rank() != 2 || scores.rank() != 1 || latents.rows() != scores.rows())
    throw DimensionError("acuity_correlation: latents N x h with N scores required");
  const std::size_t n = latents.rows(), h = latents.cols();
  if (n < 2) throw DegenerateInputError("acuity_correlation: needs N >= 2");
  double ms = 0.0;
  for (std::size_t i = 0; i < n; ++i) ms += scores[i];
  ms /= static_cast<double>(n);
  double svar = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = scores[i] - ms;
    svar += d * d;
  }
  if (svar == 0.0)
    throw UndefinedCorrelationError("acuity_correlation: zero-variance scores");
  double acc = 0.0;
  ad::Array col({n});
  for (std::size_t k = 0; k < h; ++k) {
    for (std::size_t i = 0; i < n; ++i) col[i] = latents.at2(i, k);
    try {
      acc += std::fabs(ad::pearson_value(col, scores));
    } catch (const UndefinedCorrelationError&) {
      // Zero-variance latent dimension contributes 0.
    }
  }
  return acc / static_cast<double>(h);
}

}  // namespace stablecde::model
