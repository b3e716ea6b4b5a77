#include "attnflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attnflow/rng.hpp"
#include "attnflow/svm.hpp"

namespace attnflow {

using nlohmann::json;

void Dataset::finalize() {
  scores = token_scores(*this);
  opt = optimal_tokens(scores);
  const A1Report a1 = check_assumption_A1(*this);
  has_gamma_nonopt = a1.holds;
  gamma_nonopt = a1.holds ? a1.gamma_nonopt : Vec();
}

Mat token_scores(const Dataset& data) {
  const Index n = data.n();
  if (n == 0) throw DimensionError("token_scores: empty dataset");
  const Index L = data.L();
  const Index d = data.d();
  Mat gamma(n, L);
  for (Index i = 0; i < n; ++i) {
    const Sample& s = data.samples[static_cast<std::size_t>(i)];
    if (s.X.rows() != L || s.X.cols() != d || s.z.size() != d)
      throw DimensionError("token_scores: inconsistent sample dimensions");
    gamma.row(i) = s.y * (s.X * data.v).transpose();
  }
  return gamma;
}

std::vector<Index> optimal_tokens(const Mat& scores) {
  std::vector<Index> opt(static_cast<std::size_t>(scores.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    Index arg = 0;
    const double best = scores.row(i).maxCoeff(&arg);
    Index hits = 0;
    for (Index l = 0; l < scores.cols(); ++l)
      if (scores(i, l) == best) ++hits;
    if (hits != 1) throw TieError(i);
    opt[static_cast<std::size_t>(i)] = arg;
  }
  return opt;
}

Feasibility check_separability(const Dataset& data) {
  const ConstraintSystem cs = build_constraints_vectorized(data);
  const SvmSolution sol = solve_l1_svm(cs);
  Feasibility out;
  if (sol.status != SolveStatus::Optimal) return out;
  const Index d = data.d();
  Mat W(d, d);
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < d; ++c) W(r, c) = sol.beta[r * d + c];
  out.feasible = true;
  out.witness = W;
  out.margin = (cs.B.transpose() * sol.beta).minCoeff();
  return out;
}

A1Report check_assumption_A1(const Dataset& data, double tol) {
  A1Report rep;
  const Mat gamma = token_scores(data);
  const Index n = gamma.rows();
  const Index L = gamma.cols();
  rep.gamma_nonopt = Vec::Zero(n);
  rep.holds = true;
  for (Index i = 0; i < n; ++i) {
    Index arg = 0;
    const double best = gamma.row(i).maxCoeff(&arg);
    Index hits = 0;
    for (Index l = 0; l < L; ++l)
      if (gamma(i, l) == best) ++hits;
    if (hits != 1) {
      rep.holds = false;
      rep.violations.push_back("sample " + std::to_string(i) + ": optimal token not unique");
      continue;
    }
    if (L == 1) continue;
    double mean = 0.0;
    for (Index l = 0; l < L; ++l)
      if (l != arg) mean += gamma(i, l);
    mean /= static_cast<double>(L - 1);
    rep.gamma_nonopt[i] = mean;
    for (Index l = 0; l < L; ++l) {
      if (l == arg) continue;
      if (std::abs(gamma(i, l) - mean) > tol) {
        rep.holds = false;
        rep.violations.push_back("sample " + std::to_string(i) + ": non-optimal score spread " +
                                 std::to_string(std::abs(gamma(i, l) - mean)));
        break;
      }
    }
  }
  return rep;
}

namespace {

// Recursive perfect-matching search over the non-optimal tokens of one
// sample. Candidate pairs must project equally onto the optimal token and
// sum to 2c * x_opt with c in [-1, 1).
bool match_pairs(const Mat& X, const Vec& x_opt, std::vector<Index>& pool,
                 std::vector<std::pair<Index, Index>>& pairs, std::vector<double>& constants,
                 double tol) {
  if (pool.empty()) return true;
  const double x2 = x_opt.squaredNorm();
  const double scale = std::max(1.0, x_opt.lpNorm<Eigen::Infinity>());
  const Index a = pool.front();
  for (std::size_t k = 1; k < pool.size(); ++k) {
    const Index b = pool[k];
    const Vec xa = X.row(a).transpose();
    const Vec xb = X.row(b).transpose();
    if (std::abs(x_opt.dot(xa - xb)) > tol * scale * scale) continue;
    const Vec sum = xa + xb;
    const double c = x_opt.dot(sum) / (2.0 * x2);
    if (!(c >= -1.0 - tol && c < 1.0 - tol)) continue;
    if ((sum - 2.0 * c * x_opt).lpNorm<Eigen::Infinity>() > tol * scale) continue;

    std::vector<Index> rest;
    rest.reserve(pool.size() - 2);
    for (std::size_t j = 1; j < pool.size(); ++j)
      if (j != k) rest.push_back(pool[j]);
    pairs.emplace_back(a, b);
    constants.push_back(c);
    if (match_pairs(X, x_opt, rest, pairs, constants, tol)) return true;
    pairs.pop_back();
    constants.pop_back();
  }
  return false;
}

// Extend the given orthonormal columns to a full orthogonal basis.
Mat gram_schmidt_complete(const Mat& partial_cols, const std::vector<Index>& occupied, Index d) {
  Mat U = Mat::Zero(d, d);
  std::vector<bool> used(static_cast<std::size_t>(d), false);
  for (std::size_t i = 0; i < occupied.size(); ++i) {
    U.col(occupied[i]) = partial_cols.col(static_cast<Index>(i));
    used[static_cast<std::size_t>(occupied[i])] = true;
  }
  Index next_axis = 0;
  for (Index j = 0; j < d; ++j) {
    if (used[static_cast<std::size_t>(j)]) continue;
    // First canonical axis with a nonnegligible residual against the basis so far.
    for (; next_axis <= d; ++next_axis) {
      if (next_axis == d) throw NumericalError("gram_schmidt_complete: basis completion failed");
      Vec cand = Vec::Unit(d, next_axis);
      for (Index k = 0; k < d; ++k) {
        if (U.col(k).squaredNorm() > 0.5) cand -= U.col(k).dot(cand) * U.col(k);
      }
      if (cand.norm() > 1e-6) {
        cand -= U * (U.transpose() * cand);  // second pass for orthogonality
        U.col(j) = cand / cand.norm();
        ++next_axis;
        break;
      }
    }
    used[static_cast<std::size_t>(j)] = true;
  }
  return U;
}

}  // namespace

B1Report check_assumption_B1(const Dataset& data, double tol) {
  B1Report rep;
  const Index n = data.n();
  const Index L = data.L();
  const Index d = data.d();
  Dataset work = data;
  work.finalize();

  if (L % 2 == 0)
    throw DimensionError("check_assumption_B1: L must be odd so non-optimal tokens can pair up");
  if (n > d) {
    rep.violations.push_back("n > d: no injective coordinate assignment exists");
    return rep;
  }

  rep.holds = true;
  // (i) cross-sample orthogonality of optimal tokens and of queries.
  for (Index i = 0; i < n; ++i) {
    const Vec xi = work.samples[i].X.row(work.opt[i]).transpose();
    for (Index j = i + 1; j < n; ++j) {
      const Vec xj = work.samples[j].X.row(work.opt[j]).transpose();
      if (std::abs(xi.dot(xj)) > tol * xi.norm() * xj.norm()) {
        rep.holds = false;
        rep.violations.push_back("optimal tokens of samples " + std::to_string(i) + "," +
                                 std::to_string(j) + " not orthogonal");
      }
      if (std::abs(work.samples[i].z.dot(work.samples[j].z)) >
          tol * work.samples[i].z.norm() * work.samples[j].z.norm()) {
        rep.holds = false;
        rep.violations.push_back("queries of samples " + std::to_string(i) + "," +
                                 std::to_string(j) + " not orthogonal");
      }
    }
  }
  // (ii) query parallel to the optimal token.
  for (Index i = 0; i < n; ++i) {
    const Vec x = work.samples[i].X.row(work.opt[i]).transpose();
    const Vec& z = work.samples[i].z;
    if (std::abs(std::abs(x.dot(z)) - x.norm() * z.norm()) > tol * x.norm() * z.norm()) {
      rep.holds = false;
      rep.violations.push_back("sample " + std::to_string(i) + ": query not parallel to optimal token");
    }
  }
  // (iii) symmetric pairing of the non-optimal tokens.
  std::vector<std::vector<std::pair<Index, Index>>> pairing(n);
  std::vector<std::vector<double>> constants(n);
  for (Index i = 0; i < n; ++i) {
    const Vec x_opt = work.samples[i].X.row(work.opt[i]).transpose();
    std::vector<Index> pool;
    for (Index l = 0; l < L; ++l)
      if (l != work.opt[i]) pool.push_back(l);
    if (!match_pairs(work.samples[i].X, x_opt, pool, pairing[i], constants[i], tol)) {
      rep.holds = false;
      rep.violations.push_back("sample " + std::to_string(i) + ": no symmetric pairing found");
    }
  }
  if (!rep.holds) return rep;

  // Reconstruct the orthogonal frames with pi(i) = i.
  Mat xcols(d, n), zcols(d, n);
  std::vector<Index> occupied(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Vec x = work.samples[i].X.row(work.opt[i]).transpose();
    xcols.col(i) = x / x.norm();
    zcols.col(i) = work.samples[i].z / work.samples[i].z.norm();
    occupied[static_cast<std::size_t>(i)] = i;
  }
  AlignedStructure st;
  st.U_K = gram_schmidt_complete(xcols, occupied, d);
  st.U_Q = gram_schmidt_complete(zcols, occupied, d);
  // Share the completion columns so U_Q stays orthogonal even when the query
  // frame spans the same subspace as the token frame.
  for (Index j = n; j < d; ++j) st.U_Q.col(j) = st.U_K.col(j);
  // Re-orthogonalize U_Q's completion against its first n columns.
  for (Index j = n; j < d; ++j) {
    Vec c = st.U_Q.col(j);
    for (Index k = 0; k < j; ++k) c -= st.U_Q.col(k).dot(c) * st.U_Q.col(k);
    if (c.norm() < 1e-8) throw NumericalError("check_assumption_B1: frame completion collapsed");
    st.U_Q.col(j) = c / c.norm();
  }
  st.pi.assign(occupied.begin(), occupied.end());
  st.pairing = std::move(pairing);
  st.pair_constants = std::move(constants);

  if ((st.U_K.transpose() * st.U_K - Mat::Identity(d, d)).lpNorm<Eigen::Infinity>() > 1e-12 ||
      (st.U_Q.transpose() * st.U_Q - Mat::Identity(d, d)).lpNorm<Eigen::Infinity>() > 1e-12) {
    rep.holds = false;
    rep.violations.push_back("reconstructed frames lost orthonormality");
    return rep;
  }
  rep.structure = std::move(st);
  return rep;
}

Dataset generate_diagonal_dataset(Index n, Index L, Index d, double score_gap,
                                  std::uint64_t seed) {
  if (L < 2) throw DimensionError("generate_diagonal_dataset: L must be >= 2");
  if (d < 1) throw DimensionError("generate_diagonal_dataset: d must be >= 1");
  if (!(score_gap > 0.0))
    throw std::invalid_argument("generate_diagonal_dataset: score_gap must be positive (a zero gap ties the argmax)");

  constexpr int kMaxAttempts = 64;
  Rng root(seed, 0x6d1a60ULL);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng = root.split(static_cast<std::uint64_t>(attempt));
    Dataset data;
    data.v = rng.normal_vec(d);
    if (data.v.norm() < 1e-3) continue;
    data.samples.resize(static_cast<std::size_t>(n));
    const double v2 = data.v.squaredNorm();
    for (Index i = 0; i < n; ++i) {
      Sample& s = data.samples[static_cast<std::size_t>(i)];
      s.y = rng.coin() ? 1.0 : -1.0;
      s.z = rng.normal_vec(d);
      s.X = Mat(L, d);
      const Index opt_pos = static_cast<Index>(rng.below(static_cast<std::uint64_t>(L)));
      // Score levels are pinned (optimal = gap, non-optimal = 0) by projecting
      // tokens along v; token differences, and with them the separating
      // geometry, stay fully random.
      Vec x_opt = rng.normal_vec(d);
      x_opt += ((score_gap - s.y * data.v.dot(x_opt)) / (s.y * v2)) * data.v;
      s.X.row(opt_pos) = x_opt.transpose();
      for (Index l = 0; l < L; ++l) {
        if (l == opt_pos) continue;
        Vec x = rng.normal_vec(d);
        x += ((0.0 - s.y * data.v.dot(x)) / (s.y * v2)) * data.v;
        s.X.row(l) = x.transpose();
      }
    }
    try {
      data.finalize();
    } catch (const TieError&) {
      continue;
    }
    if (!data.has_gamma_nonopt) continue;
    if (!check_separability(data).feasible) continue;
    return data;
  }
  throw NumericalError("generate_diagonal_dataset: rejection budget exhausted after " +
                       std::to_string(kMaxAttempts) + " attempts");
}

std::pair<Dataset, AlignedStructure> generate_aligned_dataset(Index n, Index L, Index d,
                                                              std::uint64_t seed,
                                                              double constraint_scale) {
  if (L < 3 || L % 2 == 0) throw DimensionError("generate_aligned_dataset: L must be odd and >= 3");
  if (n > d) throw DimensionError("generate_aligned_dataset: n > d breaks the injective coordinate map");

  constexpr int kMaxAttempts = 16;
  Rng root(seed, 0xa119edULL);
  double head_scale = 2.2;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt, head_scale *= 1.3) {
    Rng rng = root.split(static_cast<std::uint64_t>(attempt));

    // Random orthogonal token frame via QR of a Gaussian matrix.
    Mat G(d, d);
    for (Index c = 0; c < d; ++c) G.col(c) = rng.normal_vec(d);
    Eigen::HouseholderQR<Mat> qr(G);
    Mat U_K = qr.householderQ() * Mat::Identity(d, d);

    // Injective coordinate assignment: random distinct columns.
    std::vector<Index> perm(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j) perm[static_cast<std::size_t>(j)] = j;
    for (Index j = d - 1; j > 0; --j)
      std::swap(perm[static_cast<std::size_t>(j)],
                perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(j + 1)))]);
    std::vector<Index> pi(perm.begin(), perm.begin() + n);

    Mat U_Q = U_K;
    Dataset data;
    data.samples.resize(static_cast<std::size_t>(n));
    Vec v = Vec::Zero(d);
    std::vector<double> cs(static_cast<std::size_t>(n));
    AlignedStructure st;
    st.pairing.resize(static_cast<std::size_t>(n));
    st.pair_constants.resize(static_cast<std::size_t>(n));

    // Complement columns available for in-sample perturbations.
    std::vector<Index> complement(perm.begin() + n, perm.end());

    for (Index i = 0; i < n; ++i) {
      Sample& s = data.samples[static_cast<std::size_t>(i)];
      s.y = rng.coin() ? 1.0 : -1.0;
      const double sign = rng.coin() ? 1.0 : -1.0;
      const double a = rng.uniform(0.8, 1.5);
      const double c = rng.uniform(-0.3, 0.3);
      cs[static_cast<std::size_t>(i)] = c;
      const Vec u = U_K.col(pi[static_cast<std::size_t>(i)]);
      U_Q.col(pi[static_cast<std::size_t>(i)]) = sign * u;
      const Vec x_opt = a * u;
      double b = rng.uniform(0.8, 1.5);
      if (constraint_scale > 0.0) b = constraint_scale / (a * (1.0 - c));
      s.z = sign * b * u;
      // Head component giving this sample a positive optimal score.
      v += (s.y * head_scale * rng.uniform(1.0, 1.4) / a) * u;

      s.X = Mat(L, d);
      const Index opt_pos = static_cast<Index>(rng.below(static_cast<std::uint64_t>(L)));
      s.X.row(opt_pos) = x_opt.transpose();
      std::vector<Index> slots;
      for (Index l = 0; l < L; ++l)
        if (l != opt_pos) slots.push_back(l);
      for (std::size_t k = 0; k + 1 < slots.size(); k += 2) {
        Vec r = Vec::Zero(d);
        for (Index j : complement) r += (0.3 * a * rng.normal()) * U_K.col(j);
        const Vec base = c * x_opt;
        s.X.row(slots[k]) = (base + r).transpose();
        s.X.row(slots[k + 1]) = (base - r).transpose();
        st.pairing[static_cast<std::size_t>(i)].emplace_back(slots[k], slots[k + 1]);
        st.pair_constants[static_cast<std::size_t>(i)].push_back(c);
      }
    }
    data.v = v;
    try {
      data.finalize();
    } catch (const TieError&) {
      continue;
    }
    if (!data.has_gamma_nonopt) continue;
    B1Report b1 = check_assumption_B1(data);
    if (!b1.holds) continue;

    // Loss at zero weights must clear the initial-loss bound; retry with a
    // larger head when it does not (the suite runs flows from beta(0) = 0).
    const Mat gamma = data.scores;
    double loss0 = 0.0;
    for (Index i = 0; i < n; ++i) loss0 += std::exp(-gamma.row(i).mean());
    loss0 /= static_cast<double>(n);
    double threshold = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      double t = std::exp(-data.gamma_nonopt[j]);
      for (Index i = 0; i < n; ++i)
        if (i != j) t += std::exp(-gamma(i, data.opt[static_cast<std::size_t>(i)]));
      threshold = std::min(threshold, t / static_cast<double>(n));
    }
    if (loss0 > threshold) continue;

    st.U_K = U_K;
    st.U_Q = U_Q;
    st.pi = pi;
    return {data, st};
  }
  throw NumericalError("generate_aligned_dataset: rejection budget exhausted");
}

Dataset reference_d1() {
  Dataset data;
  data.v = Vec(2);
  data.v << 1.0, 0.0;
  Sample s;
  s.X = Mat(2, 2);
  s.X << 1.0, 0.0, 0.0, 1.0;
  s.z = Vec(2);
  s.z << 1.0, 1.0;
  s.y = 1.0;
  data.samples.push_back(s);
  data.finalize();
  return data;
}

namespace {

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const json& a) {
  Vec v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace

std::string dataset_to_json(const Dataset& data) {
  json root;
  root["n"] = data.n();
  root["L"] = data.L();
  root["d"] = data.d();
  root["v"] = vec_to_json(data.v);
  json samples = json::array();
  for (const Sample& s : data.samples) {
    json js;
    json x = json::array();
    for (Index r = 0; r < s.X.rows(); ++r)
      for (Index c = 0; c < s.X.cols(); ++c) x.push_back(s.X(r, c));
    js["X"] = std::move(x);
    js["z"] = vec_to_json(s.z);
    js["y"] = static_cast<int>(s.y);
    samples.push_back(std::move(js));
  }
  root["samples"] = std::move(samples);
  return root.dump(2);
}

Dataset dataset_from_json(const std::string& text) {
  const json root = json::parse(text);
  Dataset data;
  const Index n = root.at("n").get<Index>();
  const Index L = root.at("L").get<Index>();
  const Index d = root.at("d").get<Index>();
  data.v = vec_from_json(root.at("v"));
  if (data.v.size() != d) throw DimensionError("dataset_from_json: head dimension mismatch");
  for (const json& js : root.at("samples")) {
    Sample s;
    const json& x = js.at("X");
    if (static_cast<Index>(x.size()) != L * d)
      throw DimensionError("dataset_from_json: token matrix size mismatch");
    s.X = Mat(L, d);
    for (Index r = 0; r < L; ++r)
      for (Index c = 0; c < d; ++c)
        s.X(r, c) = x[static_cast<std::size_t>(r * d + c)].get<double>();
    s.z = vec_from_json(js.at("z"));
    s.y = js.at("y").get<double>();
    if (s.z.size() != d || (s.y != 1.0 && s.y != -1.0))
      throw DimensionError("dataset_from_json: bad sample");
    data.samples.push_back(std::move(s));
  }
  if (data.n() != n) throw DimensionError("dataset_from_json: sample count mismatch");
  data.finalize();
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + tmp);
    out << dataset_to_json(data) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return dataset_from_json(ss.str());
}

std::uint64_t dataset_hash(const Dataset& data) {
  // FNV-1a over the canonical JSON serialization.
  const std::string text = dataset_to_json(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace attnflow
