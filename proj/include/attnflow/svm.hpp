#pragma once

#include <string>
#include <utility>
#include <vector>

#include "attnflow/dataset.hpp"
#include "attnflow/types.hpp"

namespace attnflow {

// Separating constraints beta^T B_il >= 1, one column per (sample, non-optimal
// token), in (i, l) lexicographic order.
struct ConstraintSystem {
  enum class Form { Diagonal, Aligned, VectorizedMatrix };
  Form form = Form::Diagonal;
  Mat B;  // dim x m, columns B_il
  std::vector<std::pair<Index, Index>> index;  // (i, l) per column

  Index dim() const { return B.rows(); }
  Index count() const { return B.cols(); }
};

// B_il = z_i . (x_{i,opt} - x_il): the diagonal-weights form.
ConstraintSystem build_constraints_diagonal(const Dataset& data);

// B_il = sign(<x_opt, z>) <x_opt - x_il, z> e_{pi(i)}: single-coordinate
// columns in the aligned frame.
ConstraintSystem build_constraints_aligned(const Dataset& data, const AlignedStructure& structure);

// vec(A_il) with A_il = (x_opt - x_il) z_i^T: matrix constraints flattened
// row-major, used for separability and the Frobenius problem.
ConstraintSystem build_constraints_vectorized(const Dataset& data);

struct KktReport {
  double epsilon = 0.0;        // stationarity: distance of B*lambda from the subdifferential
  double epsilon_prime = 0.0;  // distance to the support-truncated point
  double delta = 0.0;          // complementary slackness + feasibility deficit
  double dual_violation = 0.0; // worst negative lambda entry, as a magnitude
  Vec subgradient;             // (B*lambda)_j per coordinate (l1) or core diag (nuclear)
  std::vector<std::pair<Index, Index>> support;      // active constraints
  std::vector<std::pair<Index, Index>> non_support;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, IterationLimit };

struct SvmSolution {
  SolveStatus status = SolveStatus::Infeasible;
  Vec beta;           // vector-form solution (empty for matrix-form problems)
  Mat W;              // matrix-form solution (empty for vector-form problems)
  double objective = 0.0;
  Vec lambda;         // dual multipliers, ordered like the constraint system
  KktReport kkt;
  int iterations = 0;
  double duality_gap = 0.0;  // primal objective minus dual objective at exit
};

// min ||beta||_1 s.t. beta^T B_il >= 1, solved exactly as an LP by splitting
// beta = beta+ - beta- (two-phase simplex, Bland's rule). Duals come from the
// optimal basis and the solution is KKT-certified before returning.
SvmSolution solve_l1_svm(const ConstraintSystem& cs);

// min ||W||_F s.t. <A_il, W> >= 1, via projected gradient ascent on the dual
// of the squared-norm problem with fixed step 1/L and a 1e5 iteration cap.
SvmSolution solve_frobenius_svm(const Dataset& data);

// Nuclear-norm separator for aligned data: solves the single-coordinate l1
// problem and lifts W* = U_K Diag(beta*) U_Q^T; nuclear objective equals the
// l1 objective and feasibility is re-certified on the matrix constraints.
SvmSolution solve_nuclear_svm_aligned(const Dataset& data, const AlignedStructure& structure);

// Approximate-KKT residuals of (beta_hat, lambda) for the l1 problem.
// Coordinates of beta_hat at or below zero_tol_rel * ||beta_hat||_inf are
// treated as zero when classifying the subdifferential box.
KktReport kkt_check_l1(const Vec& beta_hat, const Vec& lambda, const ConstraintSystem& cs,
                       double zero_tol_rel = 1e-6, double active_tol = 1e-6);

// Approximate-KKT residuals of (W_hat, lambda) for the nuclear-norm problem:
// G = sum lambda_il A_il must sit in the nuclear-norm subdifferential at
// W_hat (U+ V+^T on the positive singular subspace, spectral norm <= 1 off it).
KktReport kkt_check_nuclear(const Mat& W_hat, const Vec& lambda, const Dataset& data,
                            double zero_tol_rel = 1e-6, double active_tol = 1e-6);

struct OracleResult {
  bool feasible = false;
  double objective = 0.0;     // +inf when infeasible
  Vec argmin;                 // one optimal point when feasible
  int optimal_vertex_count = 0;  // distinct enumerated optima within 1e-9
};

// Independent l1 oracle: enumerates every intersection of dim() hyperplanes
// drawn from the active constraints and the coordinate planes, filters
// feasible points, and returns the minimum l1 norm. Limits: dim <= 4, m <= 8.
OracleResult brute_force_l1_oracle(const ConstraintSystem& cs);

// {status, objective, beta or W (row-major), lambda, kkt{...}} as JSON text.
std::string solution_to_json(const SvmSolution& sol);

}  // namespace attnflow
