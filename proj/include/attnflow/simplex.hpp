#pragma once

#include "attnflow/types.hpp"

namespace attnflow {

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Vec x;         // primal solution (size = #vars)
  Vec dual;      // one multiplier per constraint row, >= 0 at optimality
  double objective = 0.0;
  int iterations = 0;
};

// Dense two-phase tableau simplex with Bland's anticycling rule for
//   min c^T x   s.t.   A x >= b,  x >= 0.
// Duals are read off the surplus columns of the optimal tableau.
LpResult solve_lp_geq(const Vec& c, const Mat& A, const Vec& b);

}  // namespace attnflow
