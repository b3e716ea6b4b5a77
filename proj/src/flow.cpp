#include "attnflow/flow.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace attnflow {

using nlohmann::json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void require_nonzero(const Vec& omega0) {
  for (Index j = 0; j < omega0.size(); ++j)
    if (omega0[j] == 0.0)
      throw std::invalid_argument("init: omega0 must have all entries nonzero or the flow is stuck");
}

}  // namespace

DiagonalParams init_diagonal(const Vec& omega0, InitMode mode, Index d_e) {
  require_nonzero(omega0);
  const Index d = omega0.size();
  if (d_e < d) throw DimensionError("init_diagonal: d_e must be >= d");
  const double s = std::sqrt(2.0);
  DiagonalParams p;
  p.d_e = d_e;
  p.xi_k = Vec::Zero(d);
  p.xi_q = Vec::Zero(d);
  if (mode == InitMode::ReparMatched) {
    p.xi_k = s * omega0;
  } else {
    for (Index j = 0; j < d; ++j) {
      if (j % 2 == 0)
        p.xi_k[j] = s * omega0[j];
      else
        p.xi_q[j] = s * omega0[j];
    }
  }
  return p;
}

ReparParams init_repar(const Vec& omega0, Index d_e) {
  require_nonzero(omega0);
  if (d_e < omega0.size()) throw DimensionError("init_repar: d_e must be >= d");
  return ReparParams{omega0, omega0, d_e};
}

FullParams init_full_aligned(const Vec& omega0, InitMode mode, const AlignedStructure& structure,
                             const Mat& V) {
  const Index d = structure.U_K.rows();
  const Index d_e = V.rows();
  if (omega0.size() != d) throw DimensionError("init_full_aligned: omega0 dimension mismatch");
  const DiagonalParams dp = init_diagonal(omega0, mode, d_e);
  Mat lam_k = Mat::Zero(d, d_e), lam_q = Mat::Zero(d, d_e);
  lam_k.diagonal().head(d) = dp.xi_k;
  lam_q.diagonal().head(d) = dp.xi_q;
  return FullParams{structure.U_K * lam_k * V.transpose(), structure.U_Q * lam_q * V.transpose()};
}

double margin(const Mat& W, const Dataset& data) {
  if (data.L() < 2) throw DimensionError("margin: no separating constraints (L < 2)");
  double mu = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < data.n(); ++i) {
    const Sample& s = data.samples[static_cast<std::size_t>(i)];
    const Vec Wz = W * s.z;
    const Vec x_opt = s.X.row(data.opt[static_cast<std::size_t>(i)]).transpose();
    for (Index l = 0; l < data.L(); ++l) {
      if (l == data.opt[static_cast<std::size_t>(i)]) continue;
      mu = std::min(mu, (x_opt - s.X.row(l).transpose()).dot(Wz));
    }
  }
  return mu;
}

MarginDirection margin_normalize(const Mat& W, const Dataset& data) {
  const double mu = margin(W, data);
  if (!(mu > 0.0)) throw NotSeparatingError("margin_normalize: margin is not positive");
  return MarginDirection{mu, W / mu};
}

double alignment_residual(const FullParams& theta, const AlignedStructure& structure,
                          const Mat& V) {
  const Index d = structure.U_K.rows();
  const Index d_e = V.rows();
  const auto check_orth = [&](const Mat& U, const char* name) {
    if ((U.transpose() * U - Mat::Identity(U.cols(), U.cols())).cwiseAbs().maxCoeff() > 1e-10)
      throw std::invalid_argument(std::string("alignment_residual: ") + name + " not orthogonal");
  };
  check_orth(structure.U_K, "U_K");
  check_orth(structure.U_Q, "U_Q");
  check_orth(V, "V");

  const auto leak = [&](const Mat& M, const Mat& U) {
    Mat inner = U.transpose() * M * V;  // d x d_e
    Mat diag_part = Mat::Zero(d, d_e);
    diag_part.diagonal().head(std::min(d, d_e)) = inner.diagonal().head(std::min(d, d_e));
    return (M - U * diag_part * V.transpose()).cwiseAbs().maxCoeff();
  };
  return std::max(leak(theta.K, structure.U_K), leak(theta.Q, structure.U_Q));
}

namespace {

struct StageEval {
  double loss = 0.0;
  Vec grad_flat;
  Vec phi_rate;
  double grad_sq = 0.0;
};

// One gradient evaluation shared by the parameter ODE, the loss-decrement
// prediction, and the dual integrand.
StageEval eval_stage(const Params& theta, const Dataset& data,
                     const std::vector<std::pair<Index, Index>>& cidx) {
  GradOut g = gradients(theta, data);
  StageEval ev;
  ev.loss = g.loss;
  ev.grad_flat = pack_gradient(g);
  ev.grad_sq = ev.grad_flat.squaredNorm();
  ev.phi_rate = Vec(static_cast<Index>(cidx.size()));
  const double scale = 2.0 / static_cast<double>(data.n());
  for (std::size_t k = 0; k < cidx.size(); ++k) {
    const auto [i, l] = cidx[k];
    const SampleDiag& diag = g.per_sample[static_cast<std::size_t>(i)];
    ev.phi_rate[static_cast<Index>(k)] = -scale * diag.weight * diag.sigma_gamma[l];
  }
  return ev;
}

struct ConservationRef {
  Vec vec_ref;   // diagonal-like invariant at t = 0
  Mat mat_ref;   // K^T K - Q^T Q at t = 0
  bool has_vec = false;
  bool has_mat = false;
};

ConservationRef conservation_reference(const Params& theta) {
  ConservationRef ref;
  if (const auto* p = std::get_if<DiagonalParams>(&theta)) {
    ref.vec_ref = (p->xi_k.array().square() - p->xi_q.array().square()).matrix();
    ref.has_vec = true;
  } else if (const auto* p = std::get_if<ReparParams>(&theta)) {
    ref.vec_ref = (p->w_plus.array() * p->w_minus.array()).matrix();
    ref.has_vec = true;
  } else if (const auto* p = std::get_if<FullParams>(&theta)) {
    ref.mat_ref = p->K.transpose() * p->K - p->Q.transpose() * p->Q;
    ref.has_mat = true;
  }
  return ref;
}

double conservation_drift(const Params& theta, const ConservationRef& ref) {
  if (ref.has_vec) {
    if (const auto* p = std::get_if<DiagonalParams>(&theta))
      return ((p->xi_k.array().square() - p->xi_q.array().square()).matrix() - ref.vec_ref)
          .cwiseAbs()
          .maxCoeff();
    const auto& p = std::get<ReparParams>(theta);
    return ((p.w_plus.array() * p.w_minus.array()).matrix() - ref.vec_ref).cwiseAbs().maxCoeff();
  }
  if (ref.has_mat) {
    const auto& p = std::get<FullParams>(theta);
    return (p.K.transpose() * p.K - p.Q.transpose() * p.Q - ref.mat_ref).cwiseAbs().maxCoeff();
  }
  return 0.0;
}

bool diagonal_kind(const Params& theta) {
  return std::holds_alternative<DiagonalParams>(theta) ||
         std::holds_alternative<ReparParams>(theta);
}

Vec direction_vector(const Params& theta, const Mat& W_hat) {
  if (diagonal_kind(theta)) return W_hat.diagonal();
  Vec flat(W_hat.size());
  for (Index r = 0; r < W_hat.rows(); ++r)
    for (Index c = 0; c < W_hat.cols(); ++c) flat[r * W_hat.cols() + c] = W_hat(r, c);
  return flat;
}

}  // namespace

Trajectory integrate(const Params& theta0, const Dataset& data, const FlowConfig& config,
                     const FlowExtras* extras) {
  if (static_cast<Index>(data.opt.size()) != data.n())
    throw DimensionError("integrate: dataset not finalized");
  if (!(config.target_margin > 0.0)) throw std::invalid_argument("integrate: target margin must be positive");
  if (!(config.loss_tol > 0.0 && config.phi_tol > 0.0))
    throw std::invalid_argument("integrate: tolerances must be positive");

  const bool diag_kind = diagonal_kind(theta0);
  const ConstraintSystem cs =
      diag_kind ? build_constraints_diagonal(data) : build_constraints_vectorized(data);
  const Index m = cs.count();
  const auto t_start = std::chrono::steady_clock::now();

  Trajectory traj;
  traj.final_params = theta0;

  // Balanced-start detection for the hyperbolic closed form.
  if (diag_kind) {
    const Vec beta0 = beta_of(theta0);
    Vec w0_sq;
    if (const auto* p = std::get_if<DiagonalParams>(&theta0))
      w0_sq = 0.5 * (p->xi_k.array().square() + p->xi_q.array().square()).matrix();
    else {
      const auto& q = std::get<ReparParams>(theta0);
      w0_sq = 0.5 * (q.w_plus.array().square() + q.w_minus.array().square()).matrix();
    }
    if (beta0.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, w0_sq.maxCoeff()) &&
        w0_sq.minCoeff() > 0.0) {
      traj.balanced_init = true;
      traj.omega0 = w0_sq.cwiseSqrt();
    }
  }

  const ConservationRef cons_ref = conservation_reference(theta0);

  Params theta = theta0;
  Vec flat = pack(theta);
  Vec phi = Vec::Zero(m);
  double t = 0.0;
  StageEval e1 = eval_stage(theta, data, cs.index);

  bool margin_latched = false;
  Vec half_direction;  // direction at the first crossing of target/2
  double half_margin_seen = -1.0;

  const auto make_record = [&](double loss_now) {
    TrajectoryRecord rec;
    rec.t = t;
    rec.loss = loss_now;
    const Mat W = combined_weights(theta);
    if (diag_kind) rec.beta_raw = beta_of(theta);
    rec.norm = diag_kind ? rec.beta_raw.norm() : W.norm();
    const double mu = margin(W, data);
    rec.phi = phi;
    rec.conservation_drift = conservation_drift(theta, cons_ref);
    if (extras && extras->structure && std::holds_alternative<FullParams>(theta))
      rec.alignment_residual =
          alignment_residual(std::get<FullParams>(theta), *extras->structure, extras->V);
    else
      rec.alignment_residual = kNan;
    if (mu > 1.0) margin_latched = true;
    const Index dir_dim = diag_kind ? data.d() : data.d() * data.d();
    if (margin_latched) {
      rec.margin = mu;
      rec.direction = direction_vector(theta, W / mu);
      // Constraint values of the normalized direction; the vectorized system
      // stores W row-major, matching direction_vector.
      Vec dirfull(cs.dim());
      if (diag_kind)
        dirfull = (W / mu).diagonal();
      else
        dirfull = rec.direction;
      rec.slack = cs.B.transpose() * dirfull;
      rec.lambda = mu > 1.0 ? Vec(phi / std::log(mu)) : Vec::Constant(m, kNan);
    } else {
      rec.margin = kNan;
      rec.direction = Vec::Constant(dir_dim, kNan);
      rec.slack = Vec::Constant(m, kNan);
      rec.lambda = Vec::Constant(m, kNan);
    }
    return rec;
  };

  traj.records.push_back(make_record(e1.loss));

  const bool replay = !config.replay_steps.empty();
  double h = replay ? config.replay_steps.front() : config.h0;
  std::uint64_t accepted = 0;
  std::uint64_t since_record = 0;

  const auto finish = [&](FlowStatus status) {
    traj.status = status;
    traj.final_params = theta;
    if (since_record != 0) traj.records.push_back(make_record(e1.loss));
    if (half_margin_seen > 0.0 && traj.records.back().margin > 0.0 &&
        half_direction.size() == traj.records.back().direction.size()) {
      const Vec a = half_direction / half_direction.norm();
      const Vec b = traj.records.back().direction / traj.records.back().direction.norm();
      const double c = std::clamp(a.dot(b), -1.0, 1.0);
      traj.direction_angle = std::acos(c);
      traj.direction_converged = traj.direction_angle <= 1e-3;
    }
    return traj;
  };

  while (true) {
    if (replay && accepted >= config.replay_steps.size()) {
      const double mu = margin(combined_weights(theta), data);
      return finish(mu >= config.target_margin ? FlowStatus::MarginReached
                                               : FlowStatus::StepBudget);
    }
    if (!replay) {
      const double mu_now = margin(combined_weights(theta), data);
      if (mu_now >= config.target_margin) return finish(FlowStatus::MarginReached);
    }
    if (accepted >= config.max_steps) return finish(FlowStatus::StepBudget);
    if (std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() >
        config.max_seconds)
      return finish(FlowStatus::WallBudget);
    if (replay) h = config.replay_steps[static_cast<std::size_t>(accepted)];

    // Classic RK4 on the augmented state (theta, phi).
    const Params th2 = unpack_like(theta, Vec(flat - 0.5 * h * e1.grad_flat));
    const StageEval e2 = eval_stage(th2, data, cs.index);
    const Params th3 = unpack_like(theta, Vec(flat - 0.5 * h * e2.grad_flat));
    const StageEval e3 = eval_stage(th3, data, cs.index);
    const Params th4 = unpack_like(theta, Vec(flat - h * e3.grad_flat));
    const StageEval e4 = eval_stage(th4, data, cs.index);

    const Vec flat_next =
        flat - (h / 6.0) * (e1.grad_flat + 2.0 * e2.grad_flat + 2.0 * e3.grad_flat + e4.grad_flat);
    const Vec phi_inc =
        (h / 6.0) * (e1.phi_rate + 2.0 * e2.phi_rate + 2.0 * e3.phi_rate + e4.phi_rate);
    if (!flat_next.allFinite() || !phi_inc.allFinite())
      throw NumericalError("integrate: non-finite state encountered");

    const Params theta_next = unpack_like(theta, flat_next);
    const StageEval e_next = eval_stage(theta_next, data, cs.index);

    const double decrement_pred =
        -(h / 6.0) * (e1.grad_sq + 2.0 * e2.grad_sq + 2.0 * e3.grad_sq + e4.grad_sq);
    const double decrement_act = e_next.loss - e1.loss;
    const double err_loss =
        std::abs(decrement_act - decrement_pred) / std::max(std::abs(decrement_pred), 1e-300);
    const Vec phi_trap = (h / 2.0) * (e1.phi_rate + e_next.phi_rate);
    const double phi_defect = m > 0 ? (phi_inc - phi_trap).cwiseAbs().maxCoeff() : 0.0;
    const bool monotone = decrement_act <= config.mono_tol * std::max(1.0, std::abs(e1.loss));

    const bool accept =
        replay || (monotone && err_loss <= config.loss_tol && phi_defect <= config.phi_tol);
    if (accept) {
      t += h;
      flat = flat_next;
      theta = theta_next;
      phi += phi_inc;
      e1 = e_next;
      traj.accepted_steps.push_back(h);
      ++accepted;
      ++since_record;
      if (since_record >= static_cast<std::uint64_t>(std::max(1, config.record_stride))) {
        traj.records.push_back(make_record(e1.loss));
        since_record = 0;
      }
      if (half_margin_seen < 0.0) {
        const double mu = margin(combined_weights(theta), data);
        if (mu >= 0.5 * config.target_margin) {
          half_margin_seen = mu;
          half_direction = direction_vector(theta, combined_weights(theta) / mu);
        }
      }
      if (!replay) {
        double growth = config.max_growth;
        if (err_loss > 0.0)
          growth = std::min(growth, 0.9 * std::pow(config.loss_tol / err_loss, 0.2));
        if (phi_defect > 0.0)
          growth = std::min(growth, 0.9 * std::pow(config.phi_tol / phi_defect, 1.0 / 3.0));
        h *= std::clamp(growth, 0.5, config.max_growth);
      }
    } else {
      h *= 0.5;
      if (h < config.h_min)
        throw StiffnessError("integrate: repeated step rejection below the minimum step size");
    }
  }
}

Vec dual_estimate(const Trajectory& traj, std::size_t record) {
  const TrajectoryRecord& rec = traj.records.at(record);
  if (!std::isfinite(rec.margin) || rec.margin <= 1.0)
    throw DualUndefinedError("dual_estimate: margin must exceed 1");
  return rec.phi / std::log(rec.margin);
}

Vec closed_form_beta(const Trajectory& traj, std::size_t record, const ConstraintSystem& cs) {
  if (!traj.balanced_init || traj.omega0.size() == 0)
    throw std::invalid_argument("closed_form_beta: run is not a balanced diagonal flow");
  if (cs.dim() != traj.omega0.size()) throw DimensionError("closed_form_beta: dimension mismatch");
  const TrajectoryRecord& rec = traj.records.at(record);
  const Vec arg = cs.B * rec.phi;
  return (traj.omega0.array().square() * arg.array().sinh()).matrix();
}

namespace {

std::string fmt_double(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_trajectory_csv(const Trajectory& traj, const Dataset& data, const ConstraintSystem& cs,
                          const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + tmp);
    const double linf = loss_infimum(data);
    out << "t,loss,loss_gap,norm_beta,margin";
    const Index dir_dim = traj.records.empty() ? 0 : traj.records.front().direction.size();
    for (Index j = 0; j < dir_dim; ++j) out << ",beta_hat_" << j;
    for (const auto& [i, l] : cs.index) out << ",lambda_" << i << "_" << l;
    out << ",alignment_residual\n";
    for (const TrajectoryRecord& rec : traj.records) {
      out << fmt_double(rec.t) << ',' << fmt_double(rec.loss) << ','
          << fmt_double(rec.loss - linf) << ',' << fmt_double(rec.norm) << ','
          << fmt_double(rec.margin);
      for (Index j = 0; j < dir_dim; ++j) out << ',' << fmt_double(rec.direction[j]);
      for (Index k = 0; k < rec.lambda.size(); ++k) out << ',' << fmt_double(rec.lambda[k]);
      out << ',' << fmt_double(rec.alignment_residual) << '\n';
    }
  }
  std::filesystem::rename(tmp, path);
}

void write_trajectory_sidecar(const Trajectory& traj, const FlowConfig& config,
                              const Dataset& data, const std::string& path) {
  json root;
  root["dataset_hash"] = dataset_hash(data);
  json cfg;
  cfg["target_margin"] = config.target_margin;
  cfg["max_steps"] = config.max_steps;
  cfg["h0"] = config.h0;
  cfg["loss_tol"] = config.loss_tol;
  cfg["phi_tol"] = config.phi_tol;
  cfg["record_stride"] = config.record_stride;
  root["flow_config"] = std::move(cfg);
  switch (traj.status) {
    case FlowStatus::MarginReached: root["status"] = "margin_reached"; break;
    case FlowStatus::StepBudget: root["status"] = "step_budget"; break;
    case FlowStatus::WallBudget: root["status"] = "wall_budget"; break;
  }
  root["steps"] = traj.accepted_steps.size();
  root["records"] = traj.records.size();
  if (!traj.records.empty()) {
    root["final_loss"] = traj.records.back().loss;
    if (std::isfinite(traj.records.back().margin)) root["final_margin"] = traj.records.back().margin;
  }
  root["direction_converged"] = traj.direction_converged;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_trajectory_sidecar: cannot open " + tmp);
    out << root.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace attnflow
