#include <doctest.h>

#include <cmath>

#include "attnflow/dataset.hpp"
#include "attnflow/model.hpp"
#include "attnflow/rng.hpp"

using namespace attnflow;

namespace {

Params random_params(Rng& rng, int kind, Index d, double scale = 0.6) {
  const auto vec = [&](Index n) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
    return v;
  };
  const auto mat = [&](Index r, Index c) {
    Mat m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
  };
  switch (kind) {
    case 0: return DiagonalParams{vec(d), vec(d), d};
    case 1: return ReparParams{vec(d), vec(d), d};
    case 2: return FullParams{mat(d, d), mat(d, d)};
    default: return CombinedParams{mat(d, d)};
  }
}

Vec fd_gradient(const Params& theta, const Dataset& data, double h = 1e-5) {
  const Vec flat = pack(theta);
  Vec g(flat.size());
  for (Index i = 0; i < flat.size(); ++i) {
    Vec fp = flat, fm = flat;
    fp[i] += h;
    fm[i] -= h;
    g[i] = (empirical_loss(unpack_like(theta, fp), data) -
            empirical_loss(unpack_like(theta, fm), data)) /
           (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("attention logits") {
  const Dataset d1 = reference_d1();
  const Sample& s = d1.samples[0];

  const Params zero = CombinedParams{Mat::Zero(2, 2)};
  CHECK(attention_logits(zero, s).lpNorm<Eigen::Infinity>() == 0.0);

  // D1 with beta = (1, 0): g = X diag(1,0) (1,1) = (1, 0).
  Vec xk(2), xq(2);
  xk << 1.0, 1.0;
  xq << 1.0, 0.0;
  const Params diag = DiagonalParams{xk, xq, 2};
  const Vec g = attention_logits(diag, s);
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(0.0));

  // Factored and combined weights induce identical logits.
  Rng rng(5);
  Mat K(2, 2), Q(2, 2);
  K << 0.3, -0.7, 1.1, 0.2;
  Q << -0.4, 0.9, 0.5, 0.8;
  const Vec gf = attention_logits(Params{FullParams{K, Q}}, s);
  const Vec gc = attention_logits(Params{CombinedParams{K * Q.transpose()}}, s);
  CHECK((gf - gc).lpNorm<Eigen::Infinity>() <= 1e-15);
}

TEST_CASE("attention output") {
  const Dataset d1 = reference_d1();
  const Params zero = CombinedParams{Mat::Zero(2, 2)};
  CHECK(attention_output(zero, d1.samples[0], d1.v) == doctest::Approx(0.5));

  // Single token: the softmax is the scalar 1 and theta is irrelevant.
  Sample single;
  single.X = Mat(1, 2);
  single.X << 0.7, -0.2;
  single.z = Vec::Ones(2);
  single.y = 1.0;
  Mat W(2, 2);
  W << 3.0, -1.0, 2.0, 5.0;
  Vec v(2);
  v << 1.0, 2.0;
  CHECK(attention_output(Params{CombinedParams{W}}, single, v) == doctest::Approx(0.3));

  // The output is a softmax convex combination of per-token scores.
  Rng rng(11);
  const Dataset data = generate_diagonal_dataset(2, 3, 3, 1.0, 7);
  for (int rep = 0; rep < 20; ++rep) {
    const Params theta = random_params(rng, rep % 4, 3);
    for (Index i = 0; i < data.n(); ++i) {
      const double out = data.samples[i].y *
                         attention_output(theta, data.samples[i], data.v);
      CHECK(out >= data.scores.row(i).minCoeff() - 1e-12);
      CHECK(out <= data.scores.row(i).maxCoeff() + 1e-12);
    }
  }
}

TEST_CASE("empirical loss and its infimum") {
  const Dataset d1 = reference_d1();
  const Params zero = DiagonalParams{Vec::Zero(2), Vec::Zero(2), 2};
  CHECK(empirical_loss(zero, d1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(loss_infimum(d1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  // Losses approach exp(-gamma_opt) as the separating direction grows.
  Vec xk(2), xq(2);
  xk << 40.0, 0.0;
  xq << 1.0, 0.0;
  CHECK(empirical_loss(Params{DiagonalParams{xk, xq, 2}}, d1) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-9));

  // The infimum is a strict lower bound at finite weights.
  Rng rng(13);
  const Dataset data = generate_diagonal_dataset(2, 3, 3, 1.0, 3);
  const double inf = loss_infimum(data);
  for (int rep = 0; rep < 100; ++rep) {
    const Params theta = random_params(rng, rep % 4, 3, 1.0);
    CHECK(empirical_loss(theta, data) > inf);
  }

  // Direct substitution cases for the infimum.
  Dataset flat;
  flat.v = Vec::Unit(2, 0);
  for (double opt_score : {1.0, 2.0}) {
    Sample s;
    s.y = 1.0;
    s.z = Vec::Ones(2);
    s.X = Mat(2, 2);
    s.X << opt_score, 0.0, 0.0, 1.0;
    flat.samples.push_back(s);
  }
  flat.finalize();
  CHECK(loss_infimum(flat) ==
        doctest::Approx(0.5 * (std::exp(-1.0) + std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("parameterization value equivalence") {
  Rng rng(17);
  const Dataset data = generate_diagonal_dataset(2, 3, 4, 1.0, 19);
  for (int rep = 0; rep < 25; ++rep) {
    Vec xk(4), xq(4);
    for (Index j = 0; j < 4; ++j) {
      xk[j] = rng.normal();
      xq[j] = rng.normal();
    }
    const Vec beta = (xk.array() * xq.array()).matrix();
    // w = (w+^2 - w-^2)/2 matches beta under the rotation map.
    const Vec wp = ((xk + xq) / std::sqrt(2.0)).eval();
    const Vec wm = ((xk - xq) / std::sqrt(2.0)).eval();
    const Params pd = DiagonalParams{xk, xq, 4};
    const Params pr = ReparParams{wp, wm, 4};
    const Params pf = FullParams{Mat(xk.asDiagonal()), Mat(xq.asDiagonal())};
    const Params pc = CombinedParams{Mat(beta.asDiagonal())};
    const double base = empirical_loss(pd, data);
    CHECK(std::abs(empirical_loss(pr, data) - base) <= 1e-12);
    CHECK(std::abs(empirical_loss(pf, data) - base) <= 1e-12);
    CHECK(std::abs(empirical_loss(pc, data) - base) <= 1e-12);
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(23);
  const Dataset d1 = reference_d1();
  auto [aligned, st] = generate_aligned_dataset(2, 3, 4, 11);
  (void)st;
  const Dataset* sets[] = {&d1, &aligned};
  for (const Dataset* data : sets) {
    for (int kind = 0; kind < 4; ++kind) {
      for (int rep = 0; rep < 5; ++rep) {
        const Params theta = random_params(rng, kind, data->d());
        const Vec ga = pack_gradient(gradients(theta, *data));
        const Vec gf = fd_gradient(theta, *data);
        const double rel = (ga - gf).lpNorm<Eigen::Infinity>() /
                           std::max(ga.lpNorm<Eigen::Infinity>(), 1e-10);
        CHECK(rel <= 1e-6);
      }
    }
  }
}

TEST_CASE("gradient vanishes when all token scores agree") {
  Dataset data;
  data.v = Vec::Unit(3, 2);
  Sample s;
  s.y = 1.0;
  s.z = Vec::Ones(3);
  s.X = Mat(2, 3);
  s.X << 1.0, 0.0, 1.0, 0.0, 1.0, 1.0;  // equal third coordinates, equal scores
  data.samples.push_back(s);
  data.scores = token_scores(data);
  data.opt = {0};  // tied by construction, pinned by hand
  Rng rng(29);
  for (int kind = 0; kind < 4; ++kind) {
    const Params theta = random_params(rng, kind, 3);
    CHECK(pack_gradient(gradients(theta, data)).lpNorm<Eigen::Infinity>() <= 1e-14);
  }
}

TEST_CASE("combined-to-factored gradient chain rule") {
  Rng rng(31);
  const Dataset data = generate_diagonal_dataset(3, 2, 3, 1.0, 23);
  for (int rep = 0; rep < 10; ++rep) {
    const Params pf = random_params(rng, 2, 3);
    const auto& full = std::get<FullParams>(pf);
    const GradOut gk = gradients(pf, data);
    const GradOut gw = gradients(Params{CombinedParams{full.K * full.Q.transpose()}}, data);
    const Mat& W_grad = std::get<CombinedParams>(gw.grad).W;
    const auto& fg = std::get<FullParams>(gk.grad);
    CHECK((fg.K - W_grad * full.Q).lpNorm<Eigen::Infinity>() <= 1e-10);
    CHECK((fg.Q - W_grad.transpose() * full.K).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
}

TEST_CASE("initial-loss bound check") {
  const Dataset d1 = reference_d1();
  const Params zero = DiagonalParams{Vec::Zero(2), Vec::Zero(2), 2};
  const A2Report rep = check_assumption_A2(zero, d1);
  CHECK(rep.holds);
  CHECK(rep.loss_at_init == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  // Single sample: the bound is exactly exp(-gamma_nonopt).
  CHECK(rep.threshold == doctest::Approx(1.0).epsilon(1e-15));

  // A small score gap leaves the zero start above the bound.
  Dataset narrow;
  narrow.v = Vec::Unit(2, 0);
  for (int i = 0; i < 2; ++i) {
    Sample s;
    s.y = 1.0;
    s.z = Vec::Ones(2);
    s.X = Mat(3, 2);
    s.X << 0.0, 0.0, -0.1, 1.0, -0.1, -1.0;
    narrow.samples.push_back(s);
  }
  narrow.finalize();
  REQUIRE(narrow.has_gamma_nonopt);
  const A2Report bad = check_assumption_A2(Params{DiagonalParams{Vec::Zero(2), Vec::Zero(2), 2}},
                                           narrow);
  CHECK_FALSE(bad.holds);
}
