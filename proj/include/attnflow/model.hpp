#pragma once

#include <variant>
#include <vector>

#include "attnflow/dataset.hpp"
#include "attnflow/types.hpp"

namespace attnflow {

// The four trainings of the attention weights. Every variant exposes the
// combined weight matrix W it induces.
struct FullParams {
  Mat K;  // d x d_e
  Mat Q;  // d x d_e
};

struct DiagonalParams {
  Vec xi_k;
  Vec xi_q;
  Index d_e = 0;  // >= d; trailing columns are implicit zeros
};

struct ReparParams {
  Vec w_plus;
  Vec w_minus;
  Index d_e = 0;
};

struct CombinedParams {
  Mat W;  // d x d
};

using Params = std::variant<FullParams, DiagonalParams, ReparParams, CombinedParams>;

Mat combined_weights(const Params& theta);

// beta = xi_k . xi_q (Diagonal) or (w_+^2 - w_-^2)/2 (Repar).
Vec beta_of(const Params& theta);

Index param_dim(const Params& theta);

// Attention logits g = X W z for one sample.
Vec attention_logits(const Params& theta, const Sample& sample);

// Model output v^T X^T softmax(g).
double attention_output(const Params& theta, const Sample& sample, const Vec& v);

// Mean exponential loss in the score form: (1/n) sum_i exp(-gamma_i^T S(g_i)).
double empirical_loss(const Params& theta, const Dataset& data);

// Infimum of the loss over all weights: (1/n) sum_i exp(-gamma_{i,opt(i)}).
double loss_infimum(const Dataset& data);

struct SampleDiag {
  Vec g;            // logits
  Vec sm;           // softmax(g)
  Vec sigma_gamma;  // Sigma(g) * gamma
  double weight;    // exp(-gamma^T S(g))
};

struct GradOut {
  Params grad;  // same shape as the input parameterization
  std::vector<SampleDiag> per_sample;
  double loss = 0.0;
};

// Analytic loss gradient in the active parameterization.
GradOut gradients(const Params& theta, const Dataset& data);

struct A2Report {
  bool holds = false;
  double loss_at_init = 0.0;
  double threshold = 0.0;
  double margin = 0.0;  // threshold - loss
};

// Initial-loss bound: L(theta0) <= min_j (exp(-gamma_{j,nonopt}) +
// sum_{i != j} exp(-gamma_{i,opt})) / n. Requires equal non-optimal scores.
A2Report check_assumption_A2(const Params& theta0, const Dataset& data);

// Flat-vector adapters for the ODE integrator; pack/unpack are inverses and
// pack_gradient uses the same coordinate order as pack.
Vec pack(const Params& theta);
Params unpack_like(const Params& prototype, const Vec& flat);
Vec pack_gradient(const GradOut& g);

}  // namespace attnflow
