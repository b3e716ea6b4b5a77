#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnflow/model.hpp"
#include "attnflow/svm.hpp"
#include "attnflow/types.hpp"

namespace attnflow {

enum class InitMode {
  Alternating,   // xi_k = sqrt(2) w0 on even coordinates, xi_q on odd ones
  ReparMatched,  // xi_k = sqrt(2) w0, xi_q = 0 (image of w+ = w- = w0)
};

// Balanced diagonal initialization: xi_k(0) . xi_q(0) = 0 and
// xi_k(0)^2 + xi_q(0)^2 = 2 w0^2, so beta(0) = 0. Every entry of w0 must be
// nonzero or the flow is stuck at the start.
DiagonalParams init_diagonal(const Vec& omega0, InitMode mode, Index d_e);

// Matched reparameterized start: w+ = w- = omega0.
ReparParams init_repar(const Vec& omega0, Index d_e);

// Full-matrix start on the aligned frame: K = U_K Diag(xi_k) V^T etc., with
// the diagonal factors from init_diagonal.
FullParams init_full_aligned(const Vec& omega0, InitMode mode, const AlignedStructure& structure,
                             const Mat& V);

struct FlowConfig {
  double target_margin = 12.0;
  std::uint64_t max_steps = 1'000'000;
  double max_seconds = 600.0;

  double h0 = 1e-3;
  double h_min = 1e-13;
  double loss_tol = 1e-6;   // per-step relative loss-decrement defect
  double phi_tol = 1e-8;    // per-step dual-integrand quadrature defect
  double mono_tol = 1e-12;  // permitted loss increase per accepted step
  double max_growth = 2.0;

  int record_stride = 1;
  std::vector<double> replay_steps;  // when nonempty, take exactly these steps
};

struct TrajectoryRecord {
  double t = 0.0;
  double loss = 0.0;
  double norm = 0.0;    // ||beta||_2 or ||W||_F
  Vec beta_raw;         // unnormalized beta snapshot (diagonal-like runs only)
  double margin = 0.0;  // NaN until the margin first exceeds 1
  Vec direction;        // margin-normalized beta (d) or W row-major (d*d); NaN-filled while undefined
  Vec phi;              // accumulated dual integrands, one per constraint
  Vec lambda;           // phi / log(margin); NaN-filled while margin <= 1
  Vec slack;            // constraint values of the normalized direction
  double alignment_residual;   // NaN unless an aligned structure is attached
  double conservation_drift = 0.0;
};

enum class FlowStatus { MarginReached, StepBudget, WallBudget };

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  std::vector<double> accepted_steps;
  Params final_params;
  FlowStatus status = FlowStatus::StepBudget;
  bool direction_converged = false;  // angle between directions at M/2 and M below 1e-3 rad
  double direction_angle = 0.0;      // measured angle between those two directions

  // Closed-form support: balanced diagonal-like runs carry omega0.
  Vec omega0;
  bool balanced_init = false;
};

struct FlowExtras {
  const AlignedStructure* structure = nullptr;  // enables alignment residual tracking
  Mat V;                                        // reference right factor (defaults to identity)
};

// Integrates theta' = -grad L(theta) with adaptive RK4. The accumulated dual
// integrands ride along as extra state integrated by the same scheme; the
// controller keys the step to the relative loss-decrement defect and to a
// trapezoid-vs-stage-quadrature defect on the dual integrands. Steps whose
// loss increases beyond mono_tol are rejected and halved.
Trajectory integrate(const Params& theta0, const Dataset& data, const FlowConfig& config,
                     const FlowExtras* extras = nullptr);

// min over (i, l != opt(i)) of (x_opt - x_l)^T W z_i.
double margin(const Mat& W, const Dataset& data);

struct MarginDirection {
  double mu = 0.0;
  Mat direction;  // W / mu, own margin is exactly 1
};

// Throws NotSeparatingError when margin(W) <= 0.
MarginDirection margin_normalize(const Mat& W, const Dataset& data);

// lambda(t) = phi(t) / log margin(t); only defined once margin > 1.
Vec dual_estimate(const Trajectory& traj, std::size_t record);

// omega0^2 . sinh(B phi(t)) for balanced diagonal-like runs.
Vec closed_form_beta(const Trajectory& traj, std::size_t record, const ConstraintSystem& cs);

// Off-pattern leakage of (K, Q) relative to the aligned frame: zero iff
// K = U_K diag(U_K^T K V) V^T and likewise for Q.
double alignment_residual(const FullParams& theta, const AlignedStructure& structure,
                          const Mat& V);

// CSV export (one row per record, empty cells for undefined values) plus a
// sidecar JSON carrying the config and dataset hash.
void write_trajectory_csv(const Trajectory& traj, const Dataset& data,
                          const ConstraintSystem& cs, const std::string& path);
void write_trajectory_sidecar(const Trajectory& traj, const FlowConfig& config,
                              const Dataset& data, const std::string& path);

}  // namespace attnflow
