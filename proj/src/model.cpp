#include "attnflow/model.hpp"

#include <cmath>
#include <limits>

#include "attnflow/numerics.hpp"

namespace attnflow {

namespace {

struct CombinedVisitor {
  Mat operator()(const FullParams& p) const { return p.K * p.Q.transpose(); }
  Mat operator()(const DiagonalParams& p) const {
    return Mat((p.xi_k.array() * p.xi_q.array()).matrix().asDiagonal());
  }
  Mat operator()(const ReparParams& p) const {
    const Vec beta = 0.5 * (p.w_plus.array().square() - p.w_minus.array().square()).matrix();
    return Mat(beta.asDiagonal());
  }
  Mat operator()(const CombinedParams& p) const { return p.W; }
};

bool is_diagonal_kind(const Params& theta) {
  return std::holds_alternative<DiagonalParams>(theta) ||
         std::holds_alternative<ReparParams>(theta);
}

}  // namespace

Mat combined_weights(const Params& theta) { return std::visit(CombinedVisitor{}, theta); }

Vec beta_of(const Params& theta) {
  if (const auto* p = std::get_if<DiagonalParams>(&theta))
    return (p->xi_k.array() * p->xi_q.array()).matrix();
  if (const auto* p = std::get_if<ReparParams>(&theta))
    return 0.5 * (p->w_plus.array().square() - p->w_minus.array().square()).matrix();
  throw DimensionError("beta_of: parameterization has no diagonal factor vector");
}

Index param_dim(const Params& theta) {
  if (const auto* p = std::get_if<FullParams>(&theta)) return p->K.size() + p->Q.size();
  if (const auto* p = std::get_if<DiagonalParams>(&theta))
    return p->xi_k.size() + p->xi_q.size();
  if (const auto* p = std::get_if<ReparParams>(&theta))
    return p->w_plus.size() + p->w_minus.size();
  return std::get<CombinedParams>(theta).W.size();
}

Vec attention_logits(const Params& theta, const Sample& sample) {
  if (is_diagonal_kind(theta)) {
    const Vec beta = beta_of(theta);
    if (sample.X.cols() != beta.size() || sample.z.size() != beta.size())
      throw DimensionError("attention_logits: dimension mismatch");
    return sample.X * (beta.array() * sample.z.array()).matrix();
  }
  const Mat W = combined_weights(theta);
  if (sample.X.cols() != W.rows() || sample.z.size() != W.cols())
    throw DimensionError("attention_logits: dimension mismatch");
  return sample.X * (W * sample.z);
}

double attention_output(const Params& theta, const Sample& sample, const Vec& v) {
  if (v.size() != sample.X.cols()) throw DimensionError("attention_output: head dimension mismatch");
  return v.dot(sample.X.transpose() * softmax(attention_logits(theta, sample)));
}

double empirical_loss(const Params& theta, const Dataset& data) {
  const Mat& gamma = data.scores;
  double acc = 0.0;
  for (Index i = 0; i < data.n(); ++i) {
    const Vec g = attention_logits(theta, data.samples[static_cast<std::size_t>(i)]);
    acc += std::exp(-gamma.row(i).dot(softmax(g).transpose()));
  }
  return acc / static_cast<double>(data.n());
}

double loss_infimum(const Dataset& data) {
  double acc = 0.0;
  for (Index i = 0; i < data.n(); ++i)
    acc += std::exp(-data.scores(i, data.opt[static_cast<std::size_t>(i)]));
  return acc / static_cast<double>(data.n());
}

GradOut gradients(const Params& theta, const Dataset& data) {
  const Index n = data.n();
  const double inv_n = 1.0 / static_cast<double>(n);
  GradOut out;
  out.per_sample.resize(static_cast<std::size_t>(n));

  // Per-sample pieces shared by every parameterization: psi_i = X^T Sigma(g) gamma
  // and the loss weight exp(-gamma^T S(g)).
  std::vector<Vec> psi(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Sample& s = data.samples[static_cast<std::size_t>(i)];
    SampleDiag& diag = out.per_sample[static_cast<std::size_t>(i)];
    diag.g = attention_logits(theta, s);
    diag.sm = softmax(diag.g);
    const Vec gamma = data.scores.row(i).transpose();
    diag.sigma_gamma = sigma_gamma(diag.g, gamma);
    diag.weight = std::exp(-gamma.dot(diag.sm));
    psi[static_cast<std::size_t>(i)] = s.X.transpose() * diag.sigma_gamma;
    out.loss += diag.weight;
  }
  out.loss *= inv_n;

  if (const auto* p = std::get_if<CombinedParams>(&theta)) {
    Mat gW = Mat::Zero(p->W.rows(), p->W.cols());
    for (Index i = 0; i < n; ++i)
      gW -= inv_n * out.per_sample[static_cast<std::size_t>(i)].weight *
            (psi[static_cast<std::size_t>(i)] * data.samples[static_cast<std::size_t>(i)].z.transpose());
    out.grad = CombinedParams{std::move(gW)};
    return out;
  }
  if (const auto* p = std::get_if<FullParams>(&theta)) {
    Mat gW = Mat::Zero(p->K.rows(), p->K.rows());
    for (Index i = 0; i < n; ++i)
      gW -= inv_n * out.per_sample[static_cast<std::size_t>(i)].weight *
            (psi[static_cast<std::size_t>(i)] * data.samples[static_cast<std::size_t>(i)].z.transpose());
    out.grad = FullParams{gW * p->Q, gW.transpose() * p->K};
    return out;
  }

  // Diagonal-like kinds share E = (1/n) sum_i w_i (z_i . psi_i) = -grad_beta.
  Vec E = Vec::Zero(data.d());
  for (Index i = 0; i < n; ++i)
    E += inv_n * out.per_sample[static_cast<std::size_t>(i)].weight *
         (data.samples[static_cast<std::size_t>(i)].z.array() *
          psi[static_cast<std::size_t>(i)].array())
             .matrix();
  if (const auto* p = std::get_if<DiagonalParams>(&theta)) {
    out.grad = DiagonalParams{(-E.array() * p->xi_q.array()).matrix(),
                              (-E.array() * p->xi_k.array()).matrix(), p->d_e};
    return out;
  }
  const auto& p = std::get<ReparParams>(theta);
  out.grad = ReparParams{(-E.array() * p.w_plus.array()).matrix(),
                         (E.array() * p.w_minus.array()).matrix(), p.d_e};
  return out;
}

A2Report check_assumption_A2(const Params& theta0, const Dataset& data) {
  if (!data.has_gamma_nonopt)
    throw DimensionError("check_assumption_A2: dataset lacks a shared non-optimal score");
  A2Report rep;
  rep.loss_at_init = empirical_loss(theta0, data);
  rep.threshold = std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(data.n());
  for (Index j = 0; j < data.n(); ++j) {
    double t = std::exp(-data.gamma_nonopt[j]);
    for (Index i = 0; i < data.n(); ++i)
      if (i != j) t += std::exp(-data.scores(i, data.opt[static_cast<std::size_t>(i)]));
    rep.threshold = std::min(rep.threshold, t / n);
  }
  rep.margin = rep.threshold - rep.loss_at_init;
  rep.holds = rep.loss_at_init <= rep.threshold;
  return rep;
}

Vec pack(const Params& theta) {
  Vec flat(param_dim(theta));
  if (const auto* p = std::get_if<FullParams>(&theta)) {
    flat << Eigen::Map<const Vec>(p->K.data(), p->K.size()),
        Eigen::Map<const Vec>(p->Q.data(), p->Q.size());
  } else if (const auto* p = std::get_if<DiagonalParams>(&theta)) {
    flat << p->xi_k, p->xi_q;
  } else if (const auto* p = std::get_if<ReparParams>(&theta)) {
    flat << p->w_plus, p->w_minus;
  } else {
    const auto& q = std::get<CombinedParams>(theta);
    flat = Eigen::Map<const Vec>(q.W.data(), q.W.size());
  }
  return flat;
}

Params unpack_like(const Params& prototype, const Vec& flat) {
  if (flat.size() != param_dim(prototype)) throw DimensionError("unpack_like: size mismatch");
  if (const auto* p = std::get_if<FullParams>(&prototype)) {
    FullParams out;
    out.K = Eigen::Map<const Mat>(flat.data(), p->K.rows(), p->K.cols());
    out.Q = Eigen::Map<const Mat>(flat.data() + p->K.size(), p->Q.rows(), p->Q.cols());
    return out;
  }
  if (const auto* p = std::get_if<DiagonalParams>(&prototype)) {
    const Index d = p->xi_k.size();
    return DiagonalParams{flat.head(d), flat.tail(d), p->d_e};
  }
  if (const auto* p = std::get_if<ReparParams>(&prototype)) {
    const Index d = p->w_plus.size();
    return ReparParams{flat.head(d), flat.tail(d), p->d_e};
  }
  const auto& p = std::get<CombinedParams>(prototype);
  CombinedParams out;
  out.W = Eigen::Map<const Mat>(flat.data(), p.W.rows(), p.W.cols());
  return out;
}

Vec pack_gradient(const GradOut& g) { return pack(g.grad); }

}  // namespace attnflow
