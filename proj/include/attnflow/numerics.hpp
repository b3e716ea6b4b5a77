#pragma once

#include "attnflow/types.hpp"

namespace attnflow {

// Softmax with max-subtraction so large logits cannot overflow. Entries are
// positive and sum to one.
inline Vec softmax(const Eigen::Ref<const Vec>& x) {
  if (x.size() == 0) throw DimensionError("softmax: empty input");
  if (!x.allFinite()) throw NumericalError("softmax: non-finite input");
  Vec e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

// Sigma(g) = Diag(S(g)) - S(g) S(g)^T: symmetric, PSD, rows sum to zero.
inline Mat softmax_jacobian(const Eigen::Ref<const Vec>& g) {
  const Vec s = softmax(g);
  Mat sigma = -s * s.transpose();
  sigma.diagonal() += s;
  return sigma;
}

// Full product Sigma(g) * gamma without forming the matrix.
inline Vec sigma_gamma(const Eigen::Ref<const Vec>& g, const Eigen::Ref<const Vec>& gamma) {
  if (g.size() != gamma.size()) throw DimensionError("sigma_gamma: length mismatch");
  const Vec s = softmax(g);
  const double avg = s.dot(gamma);
  return s.array() * (gamma.array() - avg);
}

// l-th component of Sigma(g) * gamma via the product form S_l(g) (gamma_l - S(g)^T gamma).
inline double sigma_gamma_component(const Eigen::Ref<const Vec>& g,
                                    const Eigen::Ref<const Vec>& gamma, Index l) {
  if (g.size() != gamma.size()) throw DimensionError("sigma_gamma_component: length mismatch");
  if (l < 0 || l >= g.size()) throw std::out_of_range("sigma_gamma_component: index out of bounds");
  const Vec s = softmax(g);
  return s[l] * (gamma[l] - s.dot(gamma));
}

}  // namespace attnflow
