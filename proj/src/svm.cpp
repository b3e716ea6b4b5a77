#include "attnflow/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "attnflow/simplex.hpp"

namespace attnflow {

using nlohmann::json;

namespace {

std::vector<std::pair<Index, Index>> constraint_index(const Dataset& data) {
  std::vector<std::pair<Index, Index>> idx;
  for (Index i = 0; i < data.n(); ++i)
    for (Index l = 0; l < data.L(); ++l)
      if (l != data.opt[static_cast<std::size_t>(i)]) idx.emplace_back(i, l);
  return idx;
}

// Difference vector x_{i,opt} - x_{il} for constraint (i, l).
Vec token_gap(const Dataset& data, Index i, Index l) {
  const Sample& s = data.samples[static_cast<std::size_t>(i)];
  return (s.X.row(data.opt[static_cast<std::size_t>(i)]) - s.X.row(l)).transpose();
}

}  // namespace

ConstraintSystem build_constraints_diagonal(const Dataset& data) {
  ConstraintSystem cs;
  cs.form = ConstraintSystem::Form::Diagonal;
  cs.index = constraint_index(data);
  cs.B = Mat(data.d(), static_cast<Index>(cs.index.size()));
  for (std::size_t k = 0; k < cs.index.size(); ++k) {
    const auto [i, l] = cs.index[k];
    cs.B.col(static_cast<Index>(k)) =
        (data.samples[static_cast<std::size_t>(i)].z.array() * token_gap(data, i, l).array())
            .matrix();
  }
  return cs;
}

ConstraintSystem build_constraints_aligned(const Dataset& data,
                                           const AlignedStructure& structure) {
  ConstraintSystem cs;
  cs.form = ConstraintSystem::Form::Aligned;
  cs.index = constraint_index(data);
  cs.B = Mat::Zero(data.d(), static_cast<Index>(cs.index.size()));
  for (std::size_t k = 0; k < cs.index.size(); ++k) {
    const auto [i, l] = cs.index[k];
    const Sample& s = data.samples[static_cast<std::size_t>(i)];
    const Vec x_opt = s.X.row(data.opt[static_cast<std::size_t>(i)]).transpose();
    const double sgn = x_opt.dot(s.z) >= 0.0 ? 1.0 : -1.0;
    cs.B(structure.pi[static_cast<std::size_t>(i)], static_cast<Index>(k)) =
        sgn * token_gap(data, i, l).dot(s.z);
  }
  return cs;
}

ConstraintSystem build_constraints_vectorized(const Dataset& data) {
  ConstraintSystem cs;
  cs.form = ConstraintSystem::Form::VectorizedMatrix;
  cs.index = constraint_index(data);
  const Index d = data.d();
  cs.B = Mat(d * d, static_cast<Index>(cs.index.size()));
  for (std::size_t k = 0; k < cs.index.size(); ++k) {
    const auto [i, l] = cs.index[k];
    const Mat A = token_gap(data, i, l) * data.samples[static_cast<std::size_t>(i)].z.transpose();
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < d; ++c) cs.B(r * d + c, static_cast<Index>(k)) = A(r, c);
  }
  return cs;
}

KktReport kkt_check_l1(const Vec& beta_hat, const Vec& lambda, const ConstraintSystem& cs,
                       double zero_tol_rel, double active_tol) {
  if (beta_hat.size() != cs.dim() || lambda.size() != cs.count())
    throw DimensionError("kkt_check_l1: shape mismatch");
  KktReport rep;
  rep.dual_violation = lambda.size() ? std::max(0.0, -lambda.minCoeff()) : 0.0;

  const double zero_tol = zero_tol_rel * beta_hat.lpNorm<Eigen::Infinity>();
  Vec beta_check = beta_hat;
  for (Index j = 0; j < beta_check.size(); ++j)
    if (std::abs(beta_check[j]) <= zero_tol) beta_check[j] = 0.0;
  rep.epsilon_prime = (beta_hat - beta_check).norm();

  rep.subgradient = cs.B * lambda;
  double eps_sq = 0.0;
  for (Index j = 0; j < beta_check.size(); ++j) {
    const double g = rep.subgradient[j];
    const double dist = beta_check[j] != 0.0 ? std::abs(g - (beta_check[j] > 0.0 ? 1.0 : -1.0))
                                             : std::max(0.0, std::abs(g) - 1.0);
    eps_sq += dist * dist;
  }
  rep.epsilon = std::sqrt(eps_sq);

  const Vec values = cs.B.transpose() * beta_hat;
  double comp = 0.0, deficit = 0.0;
  for (Index k = 0; k < values.size(); ++k) {
    comp = std::max(comp, lambda[k] * std::max(0.0, values[k] - 1.0));
    deficit = std::max(deficit, 1.0 - values[k]);
    if (values[k] <= 1.0 + active_tol)
      rep.support.push_back(cs.index[static_cast<std::size_t>(k)]);
    else
      rep.non_support.push_back(cs.index[static_cast<std::size_t>(k)]);
  }
  rep.delta = comp + std::max(0.0, deficit);
  return rep;
}

SvmSolution solve_l1_svm(const ConstraintSystem& cs) {
  const Index d = cs.dim();
  const Index m = cs.count();
  Mat A(m, 2 * d);
  A.leftCols(d) = cs.B.transpose();
  A.rightCols(d) = -cs.B.transpose();
  const LpResult lp = solve_lp_geq(Vec::Ones(2 * d), A, Vec::Ones(m));

  SvmSolution sol;
  sol.iterations = lp.iterations;
  switch (lp.status) {
    case LpStatus::Optimal:
      sol.status = SolveStatus::Optimal;
      break;
    case LpStatus::Infeasible:
      sol.status = SolveStatus::Infeasible;
      return sol;
    case LpStatus::Unbounded:
      sol.status = SolveStatus::Unbounded;
      return sol;
  }
  sol.beta = lp.x.head(d) - lp.x.tail(d);
  sol.objective = lp.objective;
  sol.lambda = lp.dual;
  sol.duality_gap = sol.objective - sol.lambda.sum();
  sol.kkt = kkt_check_l1(sol.beta, sol.lambda, cs);
  return sol;
}

SvmSolution solve_frobenius_svm(const Dataset& data) {
  const auto idx = constraint_index(data);
  const Index m = static_cast<Index>(idx.size());
  const Index d = data.d();

  // Gram of the rank-one constraint matrices A_il = (x_opt - x_l) z_i^T.
  std::vector<Vec> gaps(static_cast<std::size_t>(m));
  for (Index k = 0; k < m; ++k)
    gaps[static_cast<std::size_t>(k)] = token_gap(data, idx[static_cast<std::size_t>(k)].first,
                                                  idx[static_cast<std::size_t>(k)].second);
  Mat G(m, m);
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b <= a; ++b) {
      const double val =
          gaps[static_cast<std::size_t>(a)].dot(gaps[static_cast<std::size_t>(b)]) *
          data.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)].first)].z.dot(
              data.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)].first)].z);
      G(a, b) = val;
      G(b, a) = val;
    }

  SvmSolution sol;
  sol.kkt.subgradient = Vec();
  Eigen::SelfAdjointEigenSolver<Mat> es(G);
  const double lip = es.eigenvalues().maxCoeff();
  if (!(lip > 0.0)) {
    sol.status = SolveStatus::Infeasible;  // all constraint matrices vanish
    return sol;
  }
  const double step = 1.0 / lip;

  constexpr int kCap = 100000;
  constexpr double kResidTol = 1e-10;
  Vec lambda = Vec::Zero(m);
  Vec values = Vec::Zero(m);
  double resid = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < kCap; ++it) {
    values.noalias() = G * lambda;
    const Vec next = (lambda + step * (Vec::Ones(m) - values)).cwiseMax(0.0);
    resid = (next - lambda).lpNorm<Eigen::Infinity>() / step;
    lambda = next;
    if (resid <= kResidTol && it % 10 == 0) break;
  }
  values.noalias() = G * lambda;

  Mat W = Mat::Zero(d, d);
  for (Index k = 0; k < m; ++k)
    W += lambda[k] * gaps[static_cast<std::size_t>(k)] *
         data.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)].first)]
             .z.transpose();

  sol.status = resid <= kResidTol ? SolveStatus::Optimal : SolveStatus::IterationLimit;
  sol.W = W;
  sol.objective = W.norm();
  sol.lambda = lambda;
  sol.iterations = it;
  sol.duality_gap = W.squaredNorm() - lambda.sum();

  double comp = 0.0, deficit = 0.0;
  for (Index k = 0; k < m; ++k) {
    comp = std::max(comp, lambda[k] * std::max(0.0, values[k] - 1.0));
    deficit = std::max(deficit, 1.0 - values[k]);
    if (values[k] <= 1.0 + 1e-6)
      sol.kkt.support.push_back(idx[static_cast<std::size_t>(k)]);
    else
      sol.kkt.non_support.push_back(idx[static_cast<std::size_t>(k)]);
  }
  sol.kkt.delta = comp + std::max(0.0, deficit);
  sol.kkt.epsilon = 0.0;  // W is assembled from the duals, stationarity is exact
  sol.kkt.epsilon_prime = 0.0;
  return sol;
}

SvmSolution solve_nuclear_svm_aligned(const Dataset& data, const AlignedStructure& structure) {
  const ConstraintSystem cs = build_constraints_aligned(data, structure);
  SvmSolution sol = solve_l1_svm(cs);
  if (sol.status != SolveStatus::Optimal) return sol;
  sol.W = structure.U_K * sol.beta.asDiagonal() * structure.U_Q.transpose();
  sol.kkt = kkt_check_nuclear(sol.W, sol.lambda, data);
  return sol;
}

KktReport kkt_check_nuclear(const Mat& W_hat, const Vec& lambda, const Dataset& data,
                            double zero_tol_rel, double active_tol) {
  const auto idx = constraint_index(data);
  if (lambda.size() != static_cast<Index>(idx.size()))
    throw DimensionError("kkt_check_nuclear: dual length mismatch");
  KktReport rep;
  rep.dual_violation = lambda.size() ? std::max(0.0, -lambda.minCoeff()) : 0.0;

  Mat G = Mat::Zero(W_hat.rows(), W_hat.cols());
  for (std::size_t k = 0; k < idx.size(); ++k)
    G += lambda[static_cast<Index>(k)] * token_gap(data, idx[k].first, idx[k].second) *
         data.samples[static_cast<std::size_t>(idx[k].first)].z.transpose();

  Eigen::JacobiSVD<Mat> svd(W_hat, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec sigma = svd.singularValues();
  const double smax = sigma.size() ? sigma[0] : 0.0;
  Index rank = 0;
  while (rank < sigma.size() && sigma[rank] > zero_tol_rel * smax && sigma[rank] > 0.0) ++rank;

  double trunc_sq = 0.0;
  for (Index j = rank; j < sigma.size(); ++j) trunc_sq += sigma[j] * sigma[j];
  rep.epsilon_prime = std::sqrt(trunc_sq);

  const Mat U1 = svd.matrixU().leftCols(rank);
  const Mat V1 = svd.matrixV().leftCols(rank);
  const Mat core = U1.transpose() * G * V1;
  const double eps_core = (core - Mat::Identity(rank, rank)).norm();
  const Mat off = G - U1 * core * V1.transpose();
  double off_spec = 0.0;
  if (off.size() > 0) {
    Eigen::JacobiSVD<Mat> off_svd(off);
    off_spec = off_svd.singularValues().size() ? off_svd.singularValues()[0] : 0.0;
  }
  rep.epsilon = eps_core + std::max(0.0, off_spec - 1.0);
  rep.subgradient = (svd.matrixU().transpose() * G * svd.matrixV()).diagonal();

  double comp = 0.0, deficit = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double value =
        token_gap(data, idx[k].first, idx[k].second)
            .dot(W_hat * data.samples[static_cast<std::size_t>(idx[k].first)].z);
    comp = std::max(comp, lambda[static_cast<Index>(k)] * std::max(0.0, value - 1.0));
    deficit = std::max(deficit, 1.0 - value);
    if (value <= 1.0 + active_tol)
      rep.support.push_back(idx[k]);
    else
      rep.non_support.push_back(idx[k]);
  }
  rep.delta = comp + std::max(0.0, deficit);
  return rep;
}

OracleResult brute_force_l1_oracle(const ConstraintSystem& cs) {
  const Index d = cs.dim();
  const Index m = cs.count();
  if (d > 4 || m > 8)
    throw DimensionError("brute_force_l1_oracle: instance too large (d <= 4, m <= 8)");

  OracleResult out;
  out.objective = std::numeric_limits<double>::infinity();
  if (m == 0) {
    out.feasible = true;
    out.objective = 0.0;
    out.argmin = Vec::Zero(d);
    out.optimal_vertex_count = 1;
    return out;
  }

  // Hyperplanes: columns of B at level 1, then coordinate planes at level 0.
  const Index total = m + d;
  std::vector<Index> pick(static_cast<std::size_t>(d));
  std::vector<Vec> optima;

  const std::function<void(Index, Index)> recurse = [&](Index start, Index chosen) {
    if (chosen == d) {
      Mat M(d, d);
      Vec rhs(d);
      for (Index r = 0; r < d; ++r) {
        const Index h = pick[static_cast<std::size_t>(r)];
        if (h < m) {
          M.row(r) = cs.B.col(h).transpose();
          rhs[r] = 1.0;
        } else {
          M.row(r) = Vec::Unit(d, h - m).transpose();
          rhs[r] = 0.0;
        }
      }
      Eigen::FullPivLU<Mat> lu(M);
      if (!lu.isInvertible()) return;
      const Vec beta = lu.solve(rhs);
      if (((cs.B.transpose() * beta).array() < 1.0 - 1e-9).any()) return;
      const double obj = beta.lpNorm<1>();
      if (obj < out.objective - 1e-9) {
        out.objective = obj;
        out.argmin = beta;
        out.feasible = true;
        optima.clear();
        optima.push_back(beta);
      } else if (obj <= out.objective + 1e-9) {
        bool dup = false;
        for (const Vec& p : optima)
          if ((p - beta).lpNorm<Eigen::Infinity>() <= 1e-9) dup = true;
        if (!dup) optima.push_back(beta);
      }
      return;
    }
    for (Index h = start; h < total; ++h) {
      pick[static_cast<std::size_t>(chosen)] = h;
      recurse(h + 1, chosen + 1);
    }
  };
  recurse(0, 0);
  out.optimal_vertex_count = static_cast<int>(optima.size());
  return out;
}

std::string solution_to_json(const SvmSolution& sol) {
  json root;
  switch (sol.status) {
    case SolveStatus::Optimal: root["status"] = "optimal"; break;
    case SolveStatus::Infeasible: root["status"] = "infeasible"; break;
    case SolveStatus::Unbounded: root["status"] = "unbounded"; break;
    case SolveStatus::IterationLimit: root["status"] = "iteration_limit"; break;
  }
  root["objective"] = sol.objective;
  if (sol.beta.size()) {
    json b = json::array();
    for (Index j = 0; j < sol.beta.size(); ++j) b.push_back(sol.beta[j]);
    root["beta"] = std::move(b);
  }
  if (sol.W.size()) {
    json w = json::array();
    for (Index r = 0; r < sol.W.rows(); ++r)
      for (Index c = 0; c < sol.W.cols(); ++c) w.push_back(sol.W(r, c));
    root["W"] = std::move(w);
  }
  json lam = json::array();
  for (Index k = 0; k < sol.lambda.size(); ++k) lam.push_back(sol.lambda[k]);
  root["lambda"] = std::move(lam);
  json kkt;
  kkt["epsilon"] = sol.kkt.epsilon;
  kkt["epsilon_prime"] = sol.kkt.epsilon_prime;
  kkt["delta"] = sol.kkt.delta;
  json supp = json::array();
  for (const auto& [i, l] : sol.kkt.support) supp.push_back(json::array({i, l}));
  kkt["support"] = std::move(supp);
  root["kkt"] = std::move(kkt);
  return root.dump(2);
}

}  // namespace attnflow
