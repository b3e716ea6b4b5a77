#include <doctest.h>

#include <cmath>

#include "attnflow/dataset.hpp"
#include "attnflow/flow.hpp"
#include "attnflow/svm.hpp"

using namespace attnflow;

namespace {

// Sample with prescribed per-token scores: v = e_1, token l = (score_l, tail).
Dataset dataset_with_scores(const std::vector<std::vector<double>>& rows) {
  Dataset data;
  const Index L = static_cast<Index>(rows.front().size());
  const Index d = L + 1;
  data.v = Vec::Unit(d, 0);
  for (const auto& row : rows) {
    Sample s;
    s.y = 1.0;
    s.z = Vec::Ones(d);
    s.X = Mat::Zero(L, d);
    for (Index l = 0; l < L; ++l) {
      s.X(l, 0) = row[static_cast<std::size_t>(l)];
      s.X(l, 1 + l) = 1.0;  // keeps tokens distinct off the score axis
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace

TEST_CASE("reference dataset D1") {
  const Dataset d1 = reference_d1();
  CHECK(d1.n() == 1);
  CHECK(d1.L() == 2);
  CHECK(d1.d() == 2);
  CHECK(d1.scores(0, 0) == 1.0);
  CHECK(d1.scores(0, 1) == 0.0);
  CHECK(d1.opt[0] == 0);
  REQUIRE(d1.has_gamma_nonopt);
  CHECK(d1.gamma_nonopt[0] == 0.0);

  const ConstraintSystem cs = build_constraints_diagonal(d1);
  REQUIRE(cs.count() == 1);
  CHECK(cs.B(0, 0) == 1.0);
  CHECK(cs.B(1, 0) == -1.0);

  const Feasibility feas = check_separability(d1);
  CHECK(feas.feasible);
  CHECK(feas.margin >= 1.0 - 1e-9);
  CHECK(margin(feas.witness, d1) >= 1.0 - 1e-9);
  // Scaling a witness preserves feasibility.
  CHECK(margin(Mat(2.0 * feas.witness), d1) >= 2.0 - 1e-9);

  // beta = (1, 0) separates with margin 1.
  Vec beta(2);
  beta << 1.0, 0.0;
  CHECK(margin(Mat(beta.asDiagonal()), d1) == doctest::Approx(1.0));
}

TEST_CASE("token_scores hand cases") {
  Dataset data;
  data.v = Vec(2);
  data.v << 1.0, 0.0;
  Sample s;
  s.X = Mat(2, 2);
  s.X << 1.0, 0.0, 0.0, 1.0;
  s.z = Vec::Ones(2);
  s.y = 1.0;
  data.samples.push_back(s);
  Mat gamma = token_scores(data);
  CHECK(gamma(0, 0) == 1.0);
  CHECK(gamma(0, 1) == 0.0);

  // Sign flip of the label flips all scores.
  data.samples[0].y = -1.0;
  const Mat flipped = token_scores(data);
  CHECK((flipped + gamma).lpNorm<Eigen::Infinity>() == 0.0);

  // Exact linearity in the head.
  data.samples[0].y = 1.0;
  data.v *= 2.0;
  CHECK((token_scores(data) - 2.0 * gamma).lpNorm<Eigen::Infinity>() == 0.0);

  // Zero head: all scores vanish and the argmax ties downstream.
  data.v.setZero();
  const Mat zeros = token_scores(data);
  CHECK(zeros.lpNorm<Eigen::Infinity>() == 0.0);
  CHECK_THROWS_AS(optimal_tokens(zeros), TieError);
}

TEST_CASE("optimal_tokens tie detection") {
  Mat ok(1, 2);
  ok << 1.0, 0.0;
  CHECK(optimal_tokens(ok) == std::vector<Index>{0});

  Mat tie(1, 2);
  tie << 1.0, 1.0;
  CHECK_THROWS_AS(optimal_tokens(tie), TieError);

  Mat tie3(1, 3);
  tie3 << 0.2, 0.9, 0.9;
  CHECK_THROWS_AS(optimal_tokens(tie3), TieError);
}

TEST_CASE("equal non-optimal score check") {
  Dataset pass = dataset_with_scores({{2.0, 0.0, 0.0}});
  CHECK(check_assumption_A1(pass).holds);
  CHECK(check_assumption_A1(pass).gamma_nonopt[0] == 0.0);

  Dataset spread = dataset_with_scores({{2.0, 0.0, 0.1}});
  CHECK_FALSE(check_assumption_A1(spread).holds);

  Dataset tied = dataset_with_scores({{2.0, 2.0, 0.0}});
  CHECK_FALSE(check_assumption_A1(tied).holds);
}

TEST_CASE("duplicate optimal token is inseparable") {
  Dataset data;
  data.v = Vec(2);
  data.v << 1.0, 0.0;
  Sample s;
  s.X = Mat(2, 2);
  s.X << 1.0, 0.0, 1.0, 0.0;  // token 1 duplicates the optimal token
  s.z = Vec::Ones(2);
  s.y = 1.0;
  data.samples.push_back(s);
  data.scores = token_scores(data);
  data.opt = {0};  // set by hand, the argmax is tied by construction
  CHECK_FALSE(check_separability(data).feasible);
}

TEST_CASE("aligned-structure check on a hand-built pairing") {
  const double c = 0.4, sphase = 0.8;
  Dataset data;
  data.v = Vec::Unit(3, 0);
  Sample s;
  s.y = 1.0;
  s.z = Vec::Unit(3, 0);
  s.X = Mat(3, 3);
  s.X.row(0) = Vec::Unit(3, 0).transpose();
  s.X.row(1) << c, sphase, 0.0;
  s.X.row(2) << c, -sphase, 0.0;
  data.samples.push_back(s);

  const B1Report rep = check_assumption_B1(data);
  REQUIRE(rep.holds);
  REQUIRE(rep.structure.pairing[0].size() == 1);
  CHECK(rep.structure.pair_constants[0][0] == doctest::Approx(c).epsilon(1e-12));
  CHECK(rep.structure.pi[0] == 0);
  const Index d = 3;
  CHECK((rep.structure.U_K.transpose() * rep.structure.U_K - Mat::Identity(d, d))
            .lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("aligned-structure violations") {
  // Two samples sharing a query direction break cross-sample orthogonality.
  Dataset data;
  data.v = Vec(4);
  data.v << 1.0, 1.0, 0.0, 0.0;
  for (int i = 0; i < 2; ++i) {
    Sample s;
    s.y = 1.0;
    const Vec axis = Vec::Unit(4, i);
    s.z = Vec::Unit(4, 0);  // both queries on the same axis
    s.X = Mat(3, 4);
    s.X.row(0) = axis.transpose();
    s.X.row(1) = (0.5 * axis).transpose();
    s.X.row(2) = (0.5 * axis).transpose();
    data.samples.push_back(s);
  }
  const B1Report rep = check_assumption_B1(data);
  CHECK_FALSE(rep.holds);
  CHECK(!rep.violations.empty());

  // A query off the optimal-token axis breaks the parallelism condition.
  Dataset solo;
  solo.v = Vec::Unit(3, 0);
  Sample s;
  s.y = 1.0;
  s.z = Vec(3);
  s.z << 1.0, 1.0, 0.0;
  s.X = Mat(3, 3);
  s.X.row(0) = Vec::Unit(3, 0).transpose();
  s.X.row(1) << 0.5, 0.3, 0.0;
  s.X.row(2) << 0.5, -0.3, 0.0;
  solo.samples.push_back(s);
  CHECK_FALSE(check_assumption_B1(solo).holds);

  // Even L cannot pair the non-optimal tokens at all.
  const Dataset d1 = reference_d1();
  CHECK_THROWS_AS(check_assumption_B1(d1), DimensionError);
}

TEST_CASE("diagonal generator round-trips through its checkers") {
  const Dataset data = generate_diagonal_dataset(2, 3, 3, 1.5, 42);
  CHECK(check_assumption_A1(data).holds);
  CHECK(check_separability(data).feasible);
  CHECK(data.scores(0, data.opt[0]) == doctest::Approx(1.5).epsilon(1e-12));

  // Determinism: identical seeds give identical bytes.
  const Dataset again = generate_diagonal_dataset(2, 3, 3, 1.5, 42);
  CHECK(dataset_to_json(data) == dataset_to_json(again));
  const Dataset other = generate_diagonal_dataset(2, 3, 3, 1.5, 43);
  CHECK(dataset_to_json(data) != dataset_to_json(other));

  CHECK_THROWS_AS(generate_diagonal_dataset(2, 3, 3, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_diagonal_dataset(2, 1, 3, 1.0, 1), DimensionError);
}

TEST_CASE("aligned generator satisfies the structure checks") {
  auto [data, st] = generate_aligned_dataset(2, 3, 4, 5);
  CHECK(check_assumption_A1(data).holds);
  const B1Report rep = check_assumption_B1(data);
  REQUIRE(rep.holds);

  // Reconstructed frames carry the normalized tokens and queries columnwise.
  for (Index i = 0; i < data.n(); ++i) {
    const Vec x = data.samples[i].X.row(data.opt[i]).transpose();
    const Vec z = data.samples[i].z;
    const Index col = rep.structure.pi[static_cast<std::size_t>(i)];
    CHECK((rep.structure.U_K.col(col) - x / x.norm()).lpNorm<Eigen::Infinity>() <= 1e-10);
    CHECK((rep.structure.U_Q.col(col) - z / z.norm()).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
  for (const auto& per_sample : st.pair_constants)
    for (double c : per_sample) {
      CHECK(c >= -1.0);
      CHECK(c < 1.0);
    }
  CHECK(check_separability(data).feasible);

  CHECK_THROWS_AS(generate_aligned_dataset(5, 3, 4, 1), DimensionError);  // n > d
  CHECK_THROWS_AS(generate_aligned_dataset(2, 4, 4, 1), DimensionError);  // even L
}

TEST_CASE("dataset JSON round-trip is exact") {
  const Dataset data = generate_diagonal_dataset(2, 2, 3, 2.0, 99);
  const std::string text = dataset_to_json(data);
  const Dataset back = dataset_from_json(text);
  CHECK(dataset_to_json(back) == text);
  CHECK(dataset_hash(back) == dataset_hash(data));
  for (Index i = 0; i < data.n(); ++i) {
    CHECK((back.samples[i].X - data.samples[i].X).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((back.samples[i].z - data.samples[i].z).lpNorm<Eigen::Infinity>() == 0.0);
  }
}
