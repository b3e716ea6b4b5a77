#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace attnflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a per-sample argmax over token scores is not unique.
struct TieError : std::runtime_error {
  explicit TieError(Index sample)
      : std::runtime_error("token score argmax tied for sample " + std::to_string(sample)),
        sample(sample) {}
  Index sample;
};

struct StiffnessError : NumericalError {
  using NumericalError::NumericalError;
};

// Margin-normalization requested for weights that do not separate (margin <= 0).
struct NotSeparatingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dual estimate requested before the margin exceeds 1 (log-margin normalizer <= 0).
struct DualUndefinedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().allFinite();
}

}  // namespace attnflow
