#pragma once

#include <span>
#include <vector>

#include "stablecde/autoencoder.hpp"

namespace stablecde::stab {

enum class StabilizerMethod { kNone, kGradClip, kImplicitAdams, kStiffnessReg };

struct StabilizerConfig {
  StabilizerMethod method = StabilizerMethod::kNone;
  double clip_norm = 1.0;     // tau, paper grid {0.1, 0.5, 1.0, 1.5}
  double lambda_reg = 0.01;   // paper grid {0.005, 0.01, 0.015}
};

const char* stabilizer_name(StabilizerMethod m);
StabilizerMethod stabilizer_from_name(const std::string& name);

// Global-norm clip over one flattened gradient vector: unchanged when
// ||g|| <= tau, otherwise rescaled to norm exactly tau.
void clip_gradients(std::span<double> grads, double tau);

struct StiffnessResult {
  double score = 0.0;    // max |Re lambda| of the local Jacobian
  bool fallback = false; // eigensolve failed; Frobenius bound used
  // d score / d J with eigenvectors held fixed (simple-eigenvalue
  // perturbation); empty when the fallback was taken.
  ad::Array dscore_djac;
};

// Score of an explicit h x h Jacobian.
StiffnessResult stiffness_score_jacobian(const ad::Array& jac, bool want_gradient);

// Jacobian of the slope-contracted field at h, by central differences in h.
ad::Array field_jacobian_fd(const model::CdeAutoencoder& m, const ad::Array& h,
                            const ad::Array& slope, double delta = 1e-4);

// Convenience: score of the field at a state (builds the Jacobian).
double stiffness_score(const model::CdeAutoencoder& m, const ad::Array& h,
                       const ad::Array& slope);

struct FlatnessReport {
  int plateau_length = 0;
  double mean_abs_slope = 0.0;  // S1; 0 when undefined (plateau < 2 epochs)
  int plateau_start = 0;
  bool s1_defined = false;
  bool absolute_fallback = false;  // min loss <= 0, absolute tolerance used
};

// Maximal run of epochs with |L(i) - min L| <= eps2 * min L (absolute eps2
// when min L <= 0), and the mean absolute epoch-to-epoch change on it.
FlatnessReport flatness(std::span<const double> losses, double eps2);

}  // namespace stablecde::stab
