#include <doctest.h>

#include <cmath>

#include <Eigen/SVD>

#include "attnflow/dataset.hpp"
#include "attnflow/rng.hpp"
#include "attnflow/simplex.hpp"
#include "attnflow/svm.hpp"

using namespace attnflow;

TEST_CASE("constraint builders") {
  const Dataset d1 = reference_d1();
  const ConstraintSystem cs = build_constraints_diagonal(d1);
  REQUIRE(cs.count() == 1);
  CHECK(cs.B(0, 0) == 1.0);
  CHECK(cs.B(1, 0) == -1.0);
  CHECK(cs.index[0] == std::pair<Index, Index>{0, 1});

  // Scaling the query scales the columns linearly.
  Dataset scaled = d1;
  scaled.samples[0].z *= 2.0;
  scaled.finalize();
  CHECK((build_constraints_diagonal(scaled).B - 2.0 * cs.B).lpNorm<Eigen::Infinity>() == 0.0);

  // Aligned columns live on a single coordinate, paired tokens give equal
  // columns, and flipping the query sign leaves them unchanged.
  auto [adata, st] = generate_aligned_dataset(2, 3, 4, 3);
  const B1Report rep = check_assumption_B1(adata);
  REQUIRE(rep.holds);
  const ConstraintSystem ac = build_constraints_aligned(adata, rep.structure);
  for (Index k = 0; k < ac.count(); ++k) {
    Index nonzero = 0;
    for (Index r = 0; r < ac.dim(); ++r)
      if (ac.B(r, k) != 0.0) ++nonzero;
    CHECK(nonzero == 1);
  }
  for (Index i = 0; i < adata.n(); ++i) {
    for (const auto& [a, b] : rep.structure.pairing[static_cast<std::size_t>(i)]) {
      Index col_a = -1, col_b = -1;
      for (Index k = 0; k < ac.count(); ++k) {
        if (ac.index[static_cast<std::size_t>(k)] == std::pair<Index, Index>{i, a}) col_a = k;
        if (ac.index[static_cast<std::size_t>(k)] == std::pair<Index, Index>{i, b}) col_b = k;
      }
      REQUIRE(col_a >= 0);
      REQUIRE(col_b >= 0);
      CHECK((ac.B.col(col_a) - ac.B.col(col_b)).lpNorm<Eigen::Infinity>() <= 1e-10);
    }
  }
  Dataset flipped = adata;
  flipped.samples[0].z *= -1.0;
  flipped.finalize();
  const B1Report rep2 = check_assumption_B1(flipped);
  REQUIRE(rep2.holds);
  const ConstraintSystem ac2 = build_constraints_aligned(flipped, rep.structure);
  CHECK((ac2.B - ac.B).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("l1 separator on D1") {
  const Dataset d1 = reference_d1();
  const ConstraintSystem cs = build_constraints_diagonal(d1);
  const SvmSolution sol = solve_l1_svm(cs);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.beta.lpNorm<1>() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.beta.dot(cs.B.col(0)) >= 1.0 - 1e-9);
  REQUIRE(sol.lambda.size() == 1);
  CHECK(sol.lambda[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.kkt.epsilon <= 1e-8);
  CHECK(sol.kkt.epsilon_prime <= 1e-8);
  CHECK(sol.kkt.delta <= 1e-8);
  CHECK(std::abs(sol.duality_gap) <= 1e-9);
}

TEST_CASE("l1 separator infeasible system") {
  ConstraintSystem cs;
  cs.B = Mat(1, 2);
  cs.B << 1.0, -1.0;  // beta >= 1 and -beta >= 1
  cs.index = {{0, 1}, {1, 0}};
  CHECK(solve_l1_svm(cs).status == SolveStatus::Infeasible);
  const OracleResult oracle = brute_force_l1_oracle(cs);
  CHECK_FALSE(oracle.feasible);
  CHECK(std::isinf(oracle.objective));
}

TEST_CASE("l1 separator vs enumeration oracle and weak duality") {
  Rng rng(37);
  int feasible_seen = 0;
  for (int k = 0; k < 400 && feasible_seen < 100; ++k) {
    const Index d = 2 + static_cast<Index>(rng.below(3));
    const Index m = 2 + static_cast<Index>(rng.below(5));
    ConstraintSystem cs;
    cs.B = Mat(d, m);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < m; ++c) cs.B(r, c) = rng.normal();
    for (Index c = 0; c < m; ++c) cs.index.emplace_back(c, 0);
    const SvmSolution sol = solve_l1_svm(cs);
    const OracleResult oracle = brute_force_l1_oracle(cs);
    CHECK((sol.status == SolveStatus::Optimal) == oracle.feasible);
    if (sol.status != SolveStatus::Optimal) continue;
    ++feasible_seen;
    CHECK(std::abs(sol.objective - oracle.objective) <= 1e-9);

    // The basis certificate is an exact approximate-KKT point.
    CHECK(sol.kkt.epsilon <= 1e-8);
    CHECK(sol.kkt.epsilon_prime <= 1e-8);
    CHECK(sol.kkt.delta <= 1e-8);
    CHECK(sol.kkt.dual_violation <= 1e-12);

    // Strong duality at the reported optimum, weak duality off it.
    CHECK(std::abs(sol.lambda.sum() - sol.objective) <= 1e-9);
    for (double scale : {1.5, 2.0, 4.0})
      CHECK(sol.lambda.sum() <= scale * sol.beta.lpNorm<1>() + 1e-9);

    // Vertex property: positive parts and slacks fit in the basis.
    Index positives = 0;
    for (Index j = 0; j < d; ++j)
      if (std::abs(sol.beta[j]) > 1e-9) ++positives;
    const Vec values = cs.B.transpose() * sol.beta;
    for (Index c = 0; c < m; ++c)
      if (values[c] > 1.0 + 1e-9) ++positives;
    CHECK(positives <= m);
  }
  CHECK(feasible_seen == 100);
}

TEST_CASE("frobenius separator closed forms") {
  const Dataset d1 = reference_d1();
  const SvmSolution sol = solve_frobenius_svm(d1);
  REQUIRE(sol.status == SolveStatus::Optimal);
  // Single constraint <A, W> >= 1: W* = A / ||A||_F^2 with A = (x0 - x1) z^T.
  Mat A(2, 2);
  A << 1.0, 1.0, -1.0, -1.0;
  CHECK((sol.W - A / 4.0).lpNorm<Eigen::Infinity>() <= 1e-9);
  CHECK(sol.objective == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(sol.kkt.delta <= 1e-8);
}

TEST_CASE("nuclear separator on aligned data") {
  auto [data, st] = generate_aligned_dataset(1, 3, 3, 9);
  const B1Report rep = check_assumption_B1(data);
  REQUIRE(rep.holds);
  const SvmSolution nuc = solve_nuclear_svm_aligned(data, rep.structure);
  REQUIRE(nuc.status == SolveStatus::Optimal);

  // Single sample: one active coordinate, so the lift is rank one.
  Eigen::JacobiSVD<Mat> svd(nuc.W);
  CHECK(svd.singularValues()[0] > 0.0);
  for (Index j = 1; j < svd.singularValues().size(); ++j)
    CHECK(svd.singularValues()[j] <= 1e-9 * svd.singularValues()[0]);

  // Orthogonal lifting preserves the objective exactly.
  CHECK(std::abs(svd.singularValues().sum() - nuc.beta.lpNorm<1>()) <= 1e-12);

  // Feasible for the raw matrix constraints.
  const ConstraintSystem mat_cs = build_constraints_vectorized(data);
  Vec wvec(data.d() * data.d());
  for (Index r = 0; r < data.d(); ++r)
    for (Index c = 0; c < data.d(); ++c) wvec[r * data.d() + c] = nuc.W(r, c);
  CHECK((mat_cs.B.transpose() * wvec).minCoeff() >= 1.0 - 1e-9);
  CHECK(nuc.kkt.epsilon <= 1e-7);
  CHECK(nuc.kkt.delta <= 1e-7);

  // Each optimum beats the other in its own norm.
  const SvmSolution fro = solve_frobenius_svm(data);
  REQUIRE(fro.status == SolveStatus::Optimal);
  Eigen::JacobiSVD<Mat> fro_svd(fro.W);
  CHECK(fro.W.norm() <= nuc.W.norm() + 1e-8);
  CHECK(svd.singularValues().sum() <= fro_svd.singularValues().sum() + 1e-8);
}

TEST_CASE("approximate-KKT checker for the l1 problem") {
  const Dataset d1 = reference_d1();
  const ConstraintSystem cs = build_constraints_diagonal(d1);
  const SvmSolution sol = solve_l1_svm(cs);

  // Doubling the point opens a complementary-slackness violation.
  const KktReport doubled = kkt_check_l1(Vec(2.0 * sol.beta), sol.lambda, cs);
  CHECK(doubled.delta > 0.5);

  // Zero duals on a feasible nonzero point leave the full sign vector.
  const KktReport zl = kkt_check_l1(sol.beta, Vec::Zero(1), cs);
  Index support = 0;
  for (Index j = 0; j < sol.beta.size(); ++j)
    if (std::abs(sol.beta[j]) > 1e-6 * sol.beta.lpNorm<Eigen::Infinity>()) ++support;
  CHECK(zl.epsilon == doctest::Approx(std::sqrt(double(support))).epsilon(1e-12));

  // Negative duals are reported, not silently clamped.
  CHECK(kkt_check_l1(sol.beta, Vec::Constant(1, -0.5), cs).dual_violation ==
        doctest::Approx(0.5));
}

TEST_CASE("approximate-KKT checker for the nuclear problem") {
  auto [data, st] = generate_aligned_dataset(2, 3, 4, 13);
  const B1Report rep = check_assumption_B1(data);
  REQUIRE(rep.holds);
  const SvmSolution nuc = solve_nuclear_svm_aligned(data, rep.structure);
  REQUIRE(nuc.status == SolveStatus::Optimal);
  const KktReport exact = kkt_check_nuclear(nuc.W, nuc.lambda, data);
  CHECK(exact.epsilon <= 1e-7);
  CHECK(exact.delta <= 1e-7);

  // At W = 0 with zero duals, stationarity holds and feasibility fails by 1.
  const KktReport zero =
      kkt_check_nuclear(Mat::Zero(data.d(), data.d()), Vec::Zero(nuc.lambda.size()), data);
  CHECK(zero.epsilon == 0.0);
  CHECK(zero.delta == doctest::Approx(1.0));

  // Doubling the duals doubles the core against the fixed target U V^T.
  Eigen::JacobiSVD<Mat> svd(nuc.W);
  Index rank = 0;
  for (Index j = 0; j < svd.singularValues().size(); ++j)
    if (svd.singularValues()[j] > 1e-6 * svd.singularValues()[0]) ++rank;
  const KktReport twice = kkt_check_nuclear(nuc.W, Vec(2.0 * nuc.lambda), data);
  CHECK(twice.epsilon >= std::sqrt(static_cast<double>(rank)) - 0.05);
}

TEST_CASE("enumeration oracle basics") {
  const Dataset d1 = reference_d1();
  const OracleResult oracle = brute_force_l1_oracle(build_constraints_diagonal(d1));
  REQUIRE(oracle.feasible);
  CHECK(oracle.objective == doctest::Approx(1.0).epsilon(1e-12));
  // D1's optimal face has two vertices: (1, 0) and (0, -1).
  CHECK(oracle.optimal_vertex_count == 2);

  ConstraintSystem big;
  big.B = Mat::Zero(5, 1);
  big.index = {{0, 1}};
  CHECK_THROWS_AS(brute_force_l1_oracle(big), DimensionError);
}

TEST_CASE("simplex corner cases") {
  // Unbounded phase 2.
  Vec c(1);
  c << -1.0;
  Mat A(1, 1);
  A << 1.0;
  Vec b(1);
  b << 1.0;
  CHECK(solve_lp_geq(c, A, b).status == LpStatus::Unbounded);

  // No constraints: the origin is optimal for nonnegative costs.
  const LpResult trivial = solve_lp_geq(Vec::Ones(3), Mat(0, 3), Vec(0));
  CHECK(trivial.status == LpStatus::Optimal);
  CHECK(trivial.objective == 0.0);

  // Negative right-hand sides exercise the slack-basis path.
  Vec c2 = Vec::Ones(2);
  Mat A2(2, 2);
  A2 << 1.0, 1.0, -1.0, 0.0;
  Vec b2(2);
  b2 << 2.0, -5.0;  // x0 + x1 >= 2, x0 <= 5
  const LpResult r2 = solve_lp_geq(c2, A2, b2);
  REQUIRE(r2.status == LpStatus::Optimal);
  CHECK(r2.objective == doctest::Approx(2.0).epsilon(1e-9));
}
