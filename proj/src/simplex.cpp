#include "attnflow/simplex.hpp"

#include <cmath>
#include <vector>

namespace attnflow {

namespace {

constexpr double kReducedCostTol = 1e-9;
constexpr double kPivotTol = 1e-9;
constexpr double kPhase1Tol = 1e-8;

// Dense tableau over the equality form [A' | surplus | artificial | rhs] with
// rhs >= 0. Bland's rule on both the entering and leaving choices.
struct Tableau {
  Mat T;                    // m x (ncols + 1), last column is rhs
  Vec rc;                   // reduced costs, size ncols
  double neg_obj = 0.0;     // -objective of the current basis
  std::vector<int> basis;   // basic variable per row
  int m, nv, ncols;         // ncols = nv + m surplus + m artificial
  int iterations = 0;

  int surplus_col(int r) const { return nv + r; }
  int artificial_col(int r) const { return nv + m + r; }

  void pivot(int row, int col) {
    T.row(row) /= T(row, col);
    for (int i = 0; i < m; ++i) {
      if (i == row) continue;
      const double f = T(i, col);
      if (f != 0.0) T.row(i) -= f * T.row(row);
    }
    const double f = rc[col];
    if (f != 0.0) {
      rc -= f * T.row(row).head(ncols).transpose();
      neg_obj -= f * T(row, ncols);
    }
    basis[static_cast<std::size_t>(row)] = col;
    ++iterations;
  }

  // Price the objective c (per-column costs) against the current basis.
  void reprice(const Vec& c) {
    rc = c;
    neg_obj = 0.0;
    for (int i = 0; i < m; ++i) {
      const double cb = c[basis[static_cast<std::size_t>(i)]];
      if (cb != 0.0) {
        rc -= cb * T.row(i).head(ncols).transpose();
        neg_obj -= cb * T(i, ncols);
      }
    }
  }

  // One simplex phase; allowed[j] masks columns that may enter.
  // Returns false when unbounded.
  bool run(const std::vector<bool>& allowed) {
    const int cap = 50000 + 200 * (m + ncols);
    while (true) {
      int enter = -1;
      for (int j = 0; j < ncols; ++j) {
        if (!allowed[static_cast<std::size_t>(j)]) continue;
        if (rc[j] < -kReducedCostTol) {
          enter = j;
          break;  // Bland: lowest index
        }
      }
      if (enter < 0) return true;
      int leave = -1;
      double best = 0.0;
      for (int i = 0; i < m; ++i) {
        if (T(i, enter) <= kPivotTol) continue;
        const double ratio = T(i, ncols) / T(i, enter);
        if (leave < 0 || ratio < best - 1e-12 ||
            (ratio < best + 1e-12 &&
             basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
          leave = i;
          best = ratio;
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
      if (iterations > cap) throw NumericalError("simplex: iteration cap exceeded");
    }
  }
};

}  // namespace

LpResult solve_lp_geq(const Vec& c, const Mat& A, const Vec& b) {
  const int m = static_cast<int>(A.rows());
  const int nv = static_cast<int>(A.cols());
  if (c.size() != nv || b.size() != m) throw DimensionError("solve_lp_geq: shape mismatch");

  LpResult out;
  if (m == 0) {
    for (int j = 0; j < nv; ++j)
      if (c[j] < -kReducedCostTol) {
        out.status = LpStatus::Unbounded;
        return out;
      }
    out.status = LpStatus::Optimal;
    out.x = Vec::Zero(nv);
    out.dual = Vec();
    out.objective = 0.0;
    return out;
  }

  Tableau tb;
  tb.m = m;
  tb.nv = nv;
  tb.ncols = nv + 2 * m;
  tb.T = Mat::Zero(m, tb.ncols + 1);
  tb.basis.assign(static_cast<std::size_t>(m), -1);

  std::vector<bool> is_artificial_row(static_cast<std::size_t>(m), false);
  for (int r = 0; r < m; ++r) {
    const double sign = b[r] >= 0.0 ? 1.0 : -1.0;
    tb.T.row(r).head(nv) = sign * A.row(r);
    tb.T(r, tb.surplus_col(r)) = -sign;
    tb.T(r, tb.ncols) = sign * b[r];
    if (sign > 0.0) {
      tb.T(r, tb.artificial_col(r)) = 1.0;
      tb.basis[static_cast<std::size_t>(r)] = tb.artificial_col(r);
      is_artificial_row[static_cast<std::size_t>(r)] = true;
    } else {
      tb.basis[static_cast<std::size_t>(r)] = tb.surplus_col(r);
    }
  }

  // Phase 1: minimize the artificial sum.
  Vec c1 = Vec::Zero(tb.ncols);
  bool need_phase1 = false;
  for (int r = 0; r < m; ++r)
    if (is_artificial_row[static_cast<std::size_t>(r)]) {
      c1[tb.artificial_col(r)] = 1.0;
      need_phase1 = true;
    }
  std::vector<bool> allow_all(static_cast<std::size_t>(tb.ncols), true);
  if (need_phase1) {
    tb.reprice(c1);
    if (!tb.run(allow_all)) throw NumericalError("simplex: phase 1 unbounded");
    if (-tb.neg_obj > kPhase1Tol) {
      out.status = LpStatus::Infeasible;
      out.iterations = tb.iterations;
      return out;
    }
    // Drive stray artificials out of the basis where a pivot exists.
    for (int r = 0; r < m; ++r) {
      const int bv = tb.basis[static_cast<std::size_t>(r)];
      if (bv < nv + m) continue;
      for (int j = 0; j < nv + m; ++j) {
        if (std::abs(tb.T(r, j)) > kPivotTol) {
          tb.pivot(r, j);
          break;
        }
      }
    }
  }

  // Phase 2 over the original objective; artificial columns may not enter.
  Vec c2 = Vec::Zero(tb.ncols);
  c2.head(nv) = c;
  tb.reprice(c2);
  std::vector<bool> allowed(static_cast<std::size_t>(tb.ncols), true);
  for (int r = 0; r < m; ++r) allowed[static_cast<std::size_t>(tb.artificial_col(r))] = false;
  if (!tb.run(allowed)) {
    out.status = LpStatus::Unbounded;
    out.iterations = tb.iterations;
    return out;
  }

  out.status = LpStatus::Optimal;
  out.x = Vec::Zero(nv);
  for (int r = 0; r < m; ++r) {
    const int bv = tb.basis[static_cast<std::size_t>(r)];
    if (bv < nv) out.x[bv] = tb.T(r, tb.ncols);
  }
  out.dual = Vec(m);
  for (int r = 0; r < m; ++r) out.dual[r] = tb.rc[tb.surplus_col(r)];
  out.objective = c.dot(out.x);
  out.iterations = tb.iterations;
  return out;
}

}  // namespace attnflow
