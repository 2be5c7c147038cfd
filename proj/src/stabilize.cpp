#include "stablecde/stabilize.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>

namespace stablecde::stab {

const char* stabilizer_name(StabilizerMethod m) {
  switch (m) {
    case StabilizerMethod::kNone: return "none";
    case StabilizerMethod::kGradClip: return "grad_clip";
    case StabilizerMethod::kImplicitAdams: return "implicit_adams";
    case StabilizerMethod::kStiffnessReg: return "stiffness_reg";
  }
  return "none";
}

StabilizerMethod stabilizer_from_name(const std::string& name) {
  if (name == "none") return StabilizerMethod::kNone;
  if (name == "grad_clip") return StabilizerMethod::kGradClip;
  if (name == "implicit_adams") return StabilizerMethod::kImplicitAdams;
  if (name == "stiffness_reg") return StabilizerMethod::kStiffnessReg;
  throw ConfigError("unknown stabilizer: " + name);
}

void clip_gradients(std::span<double> grads, double tau) {
  if (!(tau > 0.0)) throw ContractError("clip_gradients: tau must be positive");
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= tau) return;
  const double s = tau / norm;
  for (double& g : grads) g *= s;
}

StiffnessResult stiffness_score_jacobian(const ad::Array& jac, bool want_gradient) {
  if (jac.rank() != 2 || jac.rows() != jac.cols())
    throw DimensionError("stiffness_score: square Jacobian required");
  const std::size_t n = jac.rows();
  Eigen::MatrixXd J(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) J(i, j) = jac.at2(i, j);

  StiffnessResult res;
  Eigen::EigenSolver<Eigen::MatrixXd> es(J, want_gradient);
  if (es.info() != Eigen::Success) {
    // Conservative fallback: Frobenius norm bounds every |Re lambda|.
    res.fallback = true;
    res.score = J.norm();
    return res;
  }
  const auto& vals = es.eigenvalues();
  int best = 0;
  double best_abs = std::fabs(vals[0].real());
  for (int i = 1; i < vals.size(); ++i) {
    const double a = std::fabs(vals[i].real());
    if (a > best_abs) {
      best_abs = a;
      best = i;
    }
  }
  res.score = best_abs;
  if (want_gradient) {
    // d lambda / dJ_ij = conj(y_i) x_j / (y^H x) for right/left eigenvectors
    // x, y of a simple eigenvalue; eigenvectors are treated as constants.
    const Eigen::VectorXcd x = es.eigenvectors().col(best);
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> esl(J.transpose().cast<std::complex<double>>());
    // Left eigenvector: eigenvector of J^T for the same eigenvalue.
    int li = 0;
    double ld = std::abs(esl.eigenvalues()[0] - vals[best]);
    for (int i = 1; i < esl.eigenvalues().size(); ++i) {
      const double d = std::abs(esl.eigenvalues()[i] - vals[best]);
      if (d < ld) {
        ld = d;
        li = i;
      }
    }
    const Eigen::VectorXcd y = esl.eigenvectors().col(li);
    const std::complex<double> denom = (y.conjugate().transpose() * x)(0, 0);
    res.dscore_djac.assign_zeros({n, n});
    if (std::abs(denom) > 1e-300) {
      const double sgn = vals[best].real() >= 0.0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const std::complex<double> d = std::conj(y(i)) * x(j) / denom;
          res.dscore_djac.at2(i, j) = sgn * d.real();
        }
    }
  }
  return res;
}

ad::Array field_jacobian_fd(const model::CdeAutoencoder& m, const ad::Array& h,
                            const ad::Array& slope, double delta) {
  const std::size_t n = h.size();
  ad::Array jac({n, n});
  ad::Array hp = h, hm = h;
  for (std::size_t j = 0; j < n; ++j) {
    hp[j] = h[j] + delta;
    hm[j] = h[j] - delta;
    const ad::Array fp = m.field_apply(hp, slope);
    const ad::Array fm = m.field_apply(hm, slope);
    const double inv = 1.0 / (2.0 * delta);
    for (std::size_t i = 0; i < n; ++i) jac.at2(i, j) = (fp[i] - fm[i]) * inv;
    hp[j] = h[j];
    hm[j] = h[j];
  }
  return jac;
}

double stiffness_score(const model::CdeAutoencoder& m, const ad::Array& h,
                       const ad::Array& slope) {
  return stiffness_score_jacobian(field_jacobian_fd(m, h, slope), false).score;
}

FlatnessReport flatness(std::span<const double> losses, double eps2) {
  if (losses.size() < 2)
    throw DegenerateInputError("flatness: need at least 2 epochs");
  double min_loss = losses[0];
  for (double l : losses) min_loss = std::min(min_loss, l);
  FlatnessReport rep;
  // Relative band around the minimum; absolute when the minimum is not
  // positive (the total loss may go negative under correlation terms).
  rep.absolute_fallback = !(min_loss > 0.0);
  const double band = rep.absolute_fallback ? eps2 : eps2 * min_loss;

  int best_len = 0, best_start = 0;
  int cur_len = 0, cur_start = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (std::fabs(losses[i] - min_loss) <= band) {
      if (cur_len == 0) cur_start = static_cast<int>(i);
      ++cur_len;
      if (cur_len > best_len) {
        best_len = cur_len;
        best_start = cur_start;
      }
    } else {
      cur_len = 0;
    }
  }
  rep.plateau_length = best_len;
  rep.plateau_start = best_start;
  if (best_len >= 2) {
    double acc = 0.0;
    for (int i = best_start; i < best_start + best_len - 1; ++i)
      acc += std::fabs(losses[static_cast<std::size_t>(i) + 1] -
                       losses[static_cast<std::size_t>(i)]);
    rep.mean_abs_slope = acc / static_cast<double>(best_len - 1);
    rep.s1_defined = true;
  }
  return rep;
}

}  // namespace stablecde::stab
