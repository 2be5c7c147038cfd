#pragma once

#include <stdexcept>
#include <string>

namespace stablecde {

// Exit-code families used by the CLI: config=2, data=3, numerical=4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape disagreement between operands.
struct DimensionError : NumericalError {
  explicit DimensionError(const std::string& msg) : NumericalError(msg) {}
};

// API misuse (non-scalar backward root, double backward without reset, ...).
struct ContractError : NumericalError {
  explicit ContractError(const std::string& msg) : NumericalError(msg) {}
};

// Input too small/degenerate for the requested statistic.
struct DegenerateInputError : NumericalError {
  explicit DegenerateInputError(const std::string& msg) : NumericalError(msg) {}
};

// Pearson correlation of a zero-variance sequence.
struct UndefinedCorrelationError : NumericalError {
  explicit UndefinedCorrelationError(const std::string& msg)
      : NumericalError(msg) {}
};

// Non-finite value produced inside an integration step.
struct SolverDivergence : NumericalError {
  double t;
  int stage;
  SolverDivergence(double t_, int stage_, const std::string& msg)
      : NumericalError(msg), t(t_), stage(stage_) {}
};

// Implicit solve ran out of iterations; surfaced as a diagnostic by training.
struct StiffnessFailure : NumericalError {
  double t;
  explicit StiffnessFailure(double t_, const std::string& msg)
      : NumericalError(msg), t(t_) {}
};

// Row-addressed CSV/schema problems.
struct IngestionError : DataError {
  explicit IngestionError(const std::string& msg) : DataError(msg) {}
};

struct SplitError : DataError {
  explicit SplitError(const std::string& msg) : DataError(msg) {}
};

}  // namespace stablecde
