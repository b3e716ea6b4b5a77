#include "attnflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

namespace attnflow {

using nlohmann::json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string kind_name(DatasetSpec::Kind k) {
  switch (k) {
    case DatasetSpec::Kind::Diagonal: return "diagonal";
    case DatasetSpec::Kind::Aligned: return "aligned";
    case DatasetSpec::Kind::D1: return "d1";
    case DatasetSpec::Kind::Contrast: return "contrast";
    case DatasetSpec::Kind::File: return "file";
  }
  return "?";
}

DatasetSpec::Kind kind_from_name(const std::string& s) {
  if (s == "diagonal") return DatasetSpec::Kind::Diagonal;
  if (s == "aligned") return DatasetSpec::Kind::Aligned;
  if (s == "d1") return DatasetSpec::Kind::D1;
  if (s == "contrast") return DatasetSpec::Kind::Contrast;
  if (s == "file") return DatasetSpec::Kind::File;
  throw std::invalid_argument("unknown dataset kind: " + s);
}

std::string tag_name(ParamTag t) {
  switch (t) {
    case ParamTag::Diagonal: return "diagonal";
    case ParamTag::Repar: return "repar";
    case ParamTag::Full: return "full";
    case ParamTag::Combined: return "combined";
  }
  return "?";
}

ParamTag tag_from_name(const std::string& s) {
  if (s == "diagonal") return ParamTag::Diagonal;
  if (s == "repar") return ParamTag::Repar;
  if (s == "full") return ParamTag::Full;
  if (s == "combined") return ParamTag::Combined;
  throw std::invalid_argument("unknown parameterization: " + s);
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out << text << '\n';
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double softmax_tail_bound(const Dataset& data, double mu) {
  const double q = (static_cast<double>(data.L() - 1) * std::exp(-mu)) /
                   (1.0 + static_cast<double>(data.L() - 1) * std::exp(-mu));
  double acc = 0.0;
  for (Index i = 0; i < data.n(); ++i)
    acc += (std::exp(-data.gamma_nonopt[i]) -
            std::exp(-data.scores(i, data.opt[static_cast<std::size_t>(i)]))) *
           q;
  return acc / static_cast<double>(data.n());
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  const json root = json::parse(text);
  ExperimentConfig cfg;
  if (root.contains("dataset")) {
    const json& ds = root["dataset"];
    cfg.dataset.kind = kind_from_name(ds.value("kind", "d1"));
    cfg.dataset.n = ds.value("n", cfg.dataset.n);
    cfg.dataset.L = ds.value("L", cfg.dataset.L);
    cfg.dataset.d = ds.value("d", cfg.dataset.d);
    cfg.dataset.score_gap = ds.value("score_gap", cfg.dataset.score_gap);
    cfg.dataset.seed = ds.value("seed", cfg.dataset.seed);
    cfg.dataset.constraint_scale = ds.value("constraint_scale", cfg.dataset.constraint_scale);
    cfg.dataset.path = ds.value("path", cfg.dataset.path);
  }
  if (root.contains("flow")) {
    const json& fl = root["flow"];
    cfg.parameterization = tag_from_name(fl.value("parameterization", "diagonal"));
    const std::string mode = fl.value("init_mode", "alternating");
    if (mode == "alternating")
      cfg.init_mode = InitMode::Alternating;
    else if (mode == "repar_matched")
      cfg.init_mode = InitMode::ReparMatched;
    else
      throw std::invalid_argument("unknown init_mode: " + mode);
    cfg.omega0_scale = fl.value("omega0_scale", cfg.omega0_scale);
    if (fl.contains("omega0")) cfg.omega0 = fl["omega0"].get<std::vector<double>>();
    cfg.informed_omega0 = fl.value("informed_omega0", cfg.informed_omega0);
    cfg.flow.target_margin = fl.value("target_margin", cfg.flow.target_margin);
    cfg.flow.max_steps = fl.value("max_steps", cfg.flow.max_steps);
    cfg.flow.max_seconds = fl.value("max_seconds", cfg.flow.max_seconds);
    cfg.flow.h0 = fl.value("h0", cfg.flow.h0);
    cfg.flow.loss_tol = fl.value("loss_tol", cfg.flow.loss_tol);
    cfg.flow.phi_tol = fl.value("phi_tol", cfg.flow.phi_tol);
    cfg.flow.record_stride = fl.value("record_stride", cfg.flow.record_stride);
  }
  if (root.contains("baselines")) {
    cfg.solve_l1 = cfg.solve_frobenius = cfg.solve_nuclear = false;
    for (const auto& b : root["baselines"]) {
      const std::string name = b.get<std::string>();
      if (name == "l1")
        cfg.solve_l1 = true;
      else if (name == "frobenius")
        cfg.solve_frobenius = true;
      else if (name == "nuclear")
        cfg.solve_nuclear = true;
      else
        throw std::invalid_argument("unknown baseline: " + name);
    }
  }
  cfg.out_dir = root.value("out", cfg.out_dir);
  if (root.contains("thresholds")) {
    cfg.angle_tol = root["thresholds"].value("angle_tol", cfg.angle_tol);
    cfg.objective_tol = root["thresholds"].value("objective_tol", cfg.objective_tol);
  }
  if (!(cfg.angle_tol > 0.0 && cfg.objective_tol > 0.0))
    throw std::invalid_argument("thresholds must be positive");
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json root;
  json ds;
  ds["kind"] = kind_name(cfg.dataset.kind);
  ds["n"] = cfg.dataset.n;
  ds["L"] = cfg.dataset.L;
  ds["d"] = cfg.dataset.d;
  ds["score_gap"] = cfg.dataset.score_gap;
  ds["seed"] = cfg.dataset.seed;
  ds["constraint_scale"] = cfg.dataset.constraint_scale;
  if (!cfg.dataset.path.empty()) ds["path"] = cfg.dataset.path;
  root["dataset"] = std::move(ds);
  json fl;
  fl["parameterization"] = tag_name(cfg.parameterization);
  fl["init_mode"] = cfg.init_mode == InitMode::Alternating ? "alternating" : "repar_matched";
  fl["omega0_scale"] = cfg.omega0_scale;
  if (!cfg.omega0.empty()) fl["omega0"] = cfg.omega0;
  fl["informed_omega0"] = cfg.informed_omega0;
  fl["target_margin"] = cfg.flow.target_margin;
  fl["max_steps"] = cfg.flow.max_steps;
  fl["max_seconds"] = cfg.flow.max_seconds;
  fl["h0"] = cfg.flow.h0;
  fl["loss_tol"] = cfg.flow.loss_tol;
  fl["phi_tol"] = cfg.flow.phi_tol;
  fl["record_stride"] = cfg.flow.record_stride;
  root["flow"] = std::move(fl);
  json baselines = json::array();
  if (cfg.solve_l1) baselines.push_back("l1");
  if (cfg.solve_frobenius) baselines.push_back("frobenius");
  if (cfg.solve_nuclear) baselines.push_back("nuclear");
  root["baselines"] = std::move(baselines);
  root["out"] = cfg.out_dir;
  root["thresholds"] = json{{"angle_tol", cfg.angle_tol}, {"objective_tol", cfg.objective_tol}};
  return root.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

LoadedDataset realize_dataset(const DatasetSpec& spec) {
  LoadedDataset out;
  switch (spec.kind) {
    case DatasetSpec::Kind::D1:
      out.data = reference_d1();
      return out;
    case DatasetSpec::Kind::Diagonal:
      out.data = generate_diagonal_dataset(spec.n, spec.L, spec.d, spec.score_gap, spec.seed);
      return out;
    case DatasetSpec::Kind::Aligned: {
      auto [data, st] =
          generate_aligned_dataset(spec.n, spec.L, spec.d, spec.seed, spec.constraint_scale);
      out.data = std::move(data);
      out.structure = std::move(st);
      return out;
    }
    case DatasetSpec::Kind::Contrast:
      out.data = contrast_dataset(spec.seed == 0 ? 2024 : spec.seed);
      return out;
    case DatasetSpec::Kind::File:
      out.data = load_dataset(spec.path);
      break;
  }
  // File datasets: attach the aligned structure when the data admits one.
  if (out.data.L() % 2 == 1) {
    try {
      B1Report rep = check_assumption_B1(out.data);
      if (rep.holds) out.structure = std::move(rep.structure);
    } catch (const std::exception&) {
    }
  }
  return out;
}

Vec informed_omega0(const Vec& beta_star, double floor_rel) {
  const double top = beta_star.cwiseAbs().maxCoeff();
  if (!(top > 0.0)) throw std::invalid_argument("informed_omega0: zero separator");
  Vec w(beta_star.size());
  for (Index j = 0; j < beta_star.size(); ++j)
    w[j] = std::sqrt(2.0 * std::max(std::abs(beta_star[j]), floor_rel * top));
  return w;
}

Dataset contrast_dataset(std::uint64_t base_seed, int max_tries) {
  struct Size {
    Index n, L, d;
  };
  const Size sizes[] = {{2, 2, 3}, {3, 2, 3}, {2, 2, 4}, {3, 2, 4}, {2, 3, 3}, {4, 2, 4}};
  for (int k = 0; k < max_tries; ++k) {
    const Size sz = sizes[static_cast<std::size_t>(k) % std::size(sizes)];
    Dataset data;
    try {
      data = generate_diagonal_dataset(sz.n, sz.L, sz.d, 2.5, base_seed + static_cast<std::uint64_t>(k));
    } catch (const std::exception&) {
      continue;
    }
    const DiagonalParams zero{Vec::Zero(data.d()), Vec::Zero(data.d()), data.d()};
    if (!check_assumption_A2(Params{zero}, data).holds) continue;

    const ConstraintSystem cs = build_constraints_diagonal(data);
    const SvmSolution l1 = solve_l1_svm(cs);
    if (l1.status != SolveStatus::Optimal) continue;
    const SvmSolution fro = solve_frobenius_svm(data);
    if (fro.status != SolveStatus::Optimal) continue;

    OracleResult oracle;
    try {
      oracle = brute_force_l1_oracle(cs);
    } catch (const std::exception&) {
      continue;
    }
    if (!oracle.feasible || oracle.optimal_vertex_count != 1) continue;
    if (std::abs(oracle.objective - l1.objective) > 1e-9) continue;

    const double top = l1.beta.cwiseAbs().maxCoeff();
    Index support = 0;
    for (Index j = 0; j < l1.beta.size(); ++j)
      if (std::abs(l1.beta[j]) > 1e-7 * top) ++support;
    if (support >= data.d()) continue;  // want a sparse l1 optimum

    const Mat W1 = Mat(l1.beta.asDiagonal());
    const double cosv =
        (W1.reshaped().dot(fro.W.reshaped())) / (W1.norm() * fro.W.norm());
    const double angle = std::acos(std::clamp(cosv, -1.0, 1.0));
    if (angle < 0.35) continue;

    Eigen::JacobiSVD<Mat> svd(fro.W);
    const double fro_nuclear = svd.singularValues().sum();
    const double gap_f_of_l1 = std::abs(l1.beta.norm() - fro.objective) / fro.objective;
    const double gap_n_of_fro = std::abs(fro_nuclear - l1.objective) / l1.objective;
    if (gap_f_of_l1 < 0.25 || gap_n_of_fro < 0.25) continue;
    return data;
  }
  throw NumericalError("contrast_dataset: search budget exhausted");
}

ComparisonReport compare_trajectory(const Dataset& data,
                                    const std::optional<AlignedStructure>& structure,
                                    const Trajectory& traj, ParamTag tag, const SvmSolution* l1,
                                    const SvmSolution* frobenius, const SvmSolution* nuclear,
                                    double objective_tol) {
  if (traj.records.empty()) throw std::invalid_argument("compare_trajectory: empty trajectory");
  const TrajectoryRecord& rec = traj.records.back();
  if (!std::isfinite(rec.margin) || !(rec.margin > 0.0))
    throw NotSeparatingError("compare_trajectory: final direction undefined (margin not positive)");

  const bool diag_kind = tag == ParamTag::Diagonal || tag == ParamTag::Repar;
  const Index d = data.d();

  ComparisonReport rep;
  rep.final_margin = rec.margin;
  rep.final_loss = rec.loss;
  rep.loss_gap = rec.loss - loss_infimum(data);
  rep.loss_gap_bound = softmax_tail_bound(data, rec.margin);
  rep.final_norm = rec.norm;

  Mat W_hat;
  Vec beta_hat;
  if (diag_kind) {
    beta_hat = rec.direction;
    W_hat = Mat(beta_hat.asDiagonal());
  } else {
    W_hat = Mat(d, d);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < d; ++c) W_hat(r, c) = rec.direction[r * d + c];
  }

  {
    const ConstraintSystem cs_mat = build_constraints_vectorized(data);
    Vec wvec(d * d);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < d; ++c) wvec[r * d + c] = W_hat(r, c);
    rep.feasibility_min = (cs_mat.B.transpose() * wvec).minCoeff();
  }

  if (l1 && l1->status == SolveStatus::Optimal && diag_kind) {
    const ConstraintSystem cs = build_constraints_diagonal(data);
    rep.has_l1 = true;
    rep.l1_objective = l1->objective;
    rep.direction_l1_norm = beta_hat.lpNorm<1>();
    rep.l1_gap = std::abs(rep.direction_l1_norm - l1->objective) / l1->objective;
    rep.kkt_l1 = kkt_check_l1(beta_hat, rec.lambda, cs);
  }
  if (nuclear && nuclear->status == SolveStatus::Optimal) {
    rep.has_nuclear = true;
    rep.nuclear_objective = nuclear->objective;
    Eigen::JacobiSVD<Mat> svd(W_hat);
    rep.direction_nuclear_norm = svd.singularValues().sum();
    rep.nuclear_gap = std::abs(rep.direction_nuclear_norm - nuclear->objective) / nuclear->objective;
    rep.kkt_nuclear = kkt_check_nuclear(W_hat, rec.lambda, data);
  }
  if (frobenius && frobenius->status == SolveStatus::Optimal) {
    rep.has_frobenius = true;
    rep.frobenius_objective = frobenius->objective;
    rep.direction_frobenius_norm = W_hat.norm();
    rep.frobenius_gap =
        std::abs(rep.direction_frobenius_norm - frobenius->objective) / frobenius->objective;
    rep.cosine_to_frobenius =
        W_hat.reshaped().dot(frobenius->W.reshaped()) / (W_hat.norm() * frobenius->W.norm());
  }

  rep.alignment_residual_max = kNan;
  for (const TrajectoryRecord& r : traj.records)
    if (std::isfinite(r.alignment_residual))
      rep.alignment_residual_max = std::isfinite(rep.alignment_residual_max)
                                       ? std::max(rep.alignment_residual_max, r.alignment_residual)
                                       : r.alignment_residual;

  switch (tag) {
    case ParamTag::Combined:
      rep.pass_primary_gap = rep.has_frobenius && rep.frobenius_gap <= objective_tol;
      break;
    case ParamTag::Full:
      rep.pass_primary_gap = rep.has_nuclear ? rep.nuclear_gap <= objective_tol
                                             : (rep.has_l1 && rep.l1_gap <= objective_tol);
      break;
    default:
      rep.pass_primary_gap = rep.has_l1 && rep.l1_gap <= objective_tol;
      break;
  }
  rep.pass_feasibility = rep.feasibility_min >= 1.0 - 1e-6;
  rep.pass = rep.pass_primary_gap && rep.pass_feasibility;
  return rep;
}

namespace {

json kkt_to_json(const KktReport& k) {
  json out;
  out["epsilon"] = k.epsilon;
  out["epsilon_prime"] = k.epsilon_prime;
  out["delta"] = k.delta;
  json supp = json::array();
  for (const auto& [i, l] : k.support) supp.push_back(json::array({i, l}));
  out["support"] = std::move(supp);
  return out;
}

}  // namespace

std::string report_to_json(const ComparisonReport& rep) {
  json root;
  root["final_margin"] = rep.final_margin;
  root["final_loss"] = rep.final_loss;
  root["loss_gap"] = rep.loss_gap;
  root["loss_gap_bound"] = rep.loss_gap_bound;
  root["final_norm"] = rep.final_norm;
  root["feasibility_min"] = rep.feasibility_min;
  if (rep.has_l1) {
    root["l1"] = json{{"objective", rep.l1_objective},
                      {"direction_norm", rep.direction_l1_norm},
                      {"gap", rep.l1_gap},
                      {"kkt", kkt_to_json(rep.kkt_l1)}};
  }
  if (rep.has_nuclear) {
    root["nuclear"] = json{{"objective", rep.nuclear_objective},
                           {"direction_norm", rep.direction_nuclear_norm},
                           {"gap", rep.nuclear_gap},
                           {"kkt", kkt_to_json(rep.kkt_nuclear)}};
  }
  if (rep.has_frobenius) {
    root["frobenius"] = json{{"objective", rep.frobenius_objective},
                             {"direction_norm", rep.direction_frobenius_norm},
                             {"gap", rep.frobenius_gap},
                             {"cosine", rep.cosine_to_frobenius}};
  }
  root["alignment_residual_max"] =
      std::isfinite(rep.alignment_residual_max) ? json(rep.alignment_residual_max) : json();
  root["pass_primary_gap"] = rep.pass_primary_gap;
  root["pass_feasibility"] = rep.pass_feasibility;
  root["pass"] = rep.pass;
  return root.dump(2);
}

namespace {

// Shared CLI plumbing: resolve the dataset, baselines and initial point.

struct RealizedRun {
  LoadedDataset loaded;
  Params theta0;
  FlowExtras extras;
  bool has_extras = false;
};

Vec resolve_omega0(const ExperimentConfig& cfg, const Dataset& data) {
  if (!cfg.omega0.empty()) {
    if (static_cast<Index>(cfg.omega0.size()) != data.d())
      throw std::invalid_argument("omega0 length does not match d");
    return Eigen::Map<const Vec>(cfg.omega0.data(), static_cast<Index>(cfg.omega0.size()));
  }
  if (cfg.informed_omega0) {
    const SvmSolution l1 = solve_l1_svm(build_constraints_diagonal(data));
    if (l1.status != SolveStatus::Optimal)
      throw std::invalid_argument("informed_omega0 requested but the l1 problem is not solvable");
    return informed_omega0(l1.beta);
  }
  return Vec::Constant(data.d(), cfg.omega0_scale);
}

RealizedRun realize_run(const ExperimentConfig& cfg) {
  RealizedRun run;
  run.loaded = realize_dataset(cfg.dataset);
  const Dataset& data = run.loaded.data;
  switch (cfg.parameterization) {
    case ParamTag::Diagonal:
      run.theta0 = Params{init_diagonal(resolve_omega0(cfg, data), cfg.init_mode, data.d())};
      break;
    case ParamTag::Repar:
      run.theta0 = Params{init_repar(resolve_omega0(cfg, data), data.d())};
      break;
    case ParamTag::Full: {
      if (!run.loaded.structure)
        throw std::invalid_argument("full parameterization needs an aligned dataset");
      const Mat V = Mat::Identity(data.d(), data.d());
      run.theta0 = Params{
          init_full_aligned(resolve_omega0(cfg, data), cfg.init_mode, *run.loaded.structure, V)};
      run.extras.structure = &*run.loaded.structure;
      run.extras.V = V;
      run.has_extras = true;
      break;
    }
    case ParamTag::Combined:
      run.theta0 = Params{CombinedParams{Mat::Zero(data.d(), data.d())}};
      break;
  }
  return run;
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

}  // namespace

int cmd_generate(const ExperimentConfig& cfg) {
  LoadedDataset loaded = realize_dataset(cfg.dataset);
  const Dataset& data = loaded.data;
  save_dataset(data, out_path(cfg, "dataset.json"));

  json rep;
  rep["dataset_hash"] = dataset_hash(data);
  rep["config_hash"] = config_hash(cfg);
  const A1Report a1 = check_assumption_A1(data);
  rep["a1"] = json{{"holds", a1.holds}, {"violations", a1.violations}};
  const Feasibility feas = check_separability(data);
  rep["separability"] = json{{"feasible", feas.feasible}, {"margin", feas.margin}};
  if (a1.holds) {
    const DiagonalParams zero{Vec::Zero(data.d()), Vec::Zero(data.d()), data.d()};
    const A2Report a2 = check_assumption_A2(Params{zero}, data);
    rep["a2_at_zero"] = json{{"holds", a2.holds},
                             {"loss_at_init", a2.loss_at_init},
                             {"threshold", a2.threshold}};
  }
  if (data.L() % 2 == 1) {
    const B1Report b1 = check_assumption_B1(data);
    rep["b1"] = json{{"holds", b1.holds}, {"violations", b1.violations}};
  } else {
    rep["b1"] = json{{"holds", false}, {"violations", json::array({"L is even"})}};
  }
  write_text_atomic(out_path(cfg, "assumptions.json"), rep.dump(2));
  const bool ok = a1.holds && feas.feasible;
  std::printf("generate: wrote %s (A1 %s, separable %s)\n", out_path(cfg, "dataset.json").c_str(),
              a1.holds ? "pass" : "FAIL", feas.feasible ? "yes" : "NO");
  return ok ? 0 : 2;
}

int cmd_flow(const ExperimentConfig& cfg) {
  RealizedRun run = realize_run(cfg);
  const Dataset& data = run.loaded.data;

  const A1Report a1 = check_assumption_A1(data);
  if (!a1.holds) {
    std::fprintf(stderr, "flow: dataset fails the equal-nonoptimal-score check\n");
    return 2;
  }
  if (!check_separability(data).feasible) {
    std::fprintf(stderr, "flow: dataset is not separable\n");
    return 2;
  }
  const A2Report a2 = check_assumption_A2(run.theta0, data);
  if (!a2.holds)
    std::fprintf(stderr, "flow: warning: initial loss %.6g exceeds the bound %.6g\n",
                 a2.loss_at_init, a2.threshold);

  const Trajectory traj =
      integrate(run.theta0, data, cfg.flow, run.has_extras ? &run.extras : nullptr);

  const bool diag_kind =
      cfg.parameterization == ParamTag::Diagonal || cfg.parameterization == ParamTag::Repar;
  const ConstraintSystem cs =
      diag_kind ? build_constraints_diagonal(data) : build_constraints_vectorized(data);
  write_trajectory_csv(traj, data, cs, out_path(cfg, "trajectory.csv"));
  write_trajectory_sidecar(traj, cfg.flow, data, out_path(cfg, "trajectory.json"));
  {
    json side = json::parse(read_text(out_path(cfg, "trajectory.json")));
    side["config_hash"] = config_hash(cfg);
    side["parameterization"] = tag_name(cfg.parameterization);
    write_text_atomic(out_path(cfg, "trajectory.json"), side.dump(2));
  }
  const TrajectoryRecord& last = traj.records.back();
  std::printf("flow: %zu steps, final loss %.9g, final margin %s\n", traj.accepted_steps.size(),
              last.loss, std::isfinite(last.margin) ? std::to_string(last.margin).c_str() : "n/a");
  return traj.status == FlowStatus::MarginReached ? 0 : 1;
}

int cmd_svm(const ExperimentConfig& cfg) {
  LoadedDataset loaded = realize_dataset(cfg.dataset);
  const Dataset& data = loaded.data;
  const std::uint64_t dhash = dataset_hash(data);
  const auto dump_with_provenance = [&](const SvmSolution& sol, const std::string& name) {
    json root = json::parse(solution_to_json(sol));
    root["dataset_hash"] = dhash;
    root["config_hash"] = config_hash(cfg);
    write_text_atomic(out_path(cfg, name), root.dump(2));
  };
  bool all_ok = true;
  if (cfg.solve_l1) {
    const SvmSolution sol = solve_l1_svm(build_constraints_diagonal(data));
    all_ok &= sol.status == SolveStatus::Optimal;
    dump_with_provenance(sol, "svm_l1.json");
  }
  if (cfg.solve_frobenius) {
    const SvmSolution sol = solve_frobenius_svm(data);
    all_ok &= sol.status == SolveStatus::Optimal;
    dump_with_provenance(sol, "svm_frobenius.json");
  }
  if (cfg.solve_nuclear) {
    if (!loaded.structure) {
      std::fprintf(stderr, "svm: nuclear baseline needs an aligned dataset\n");
      return 2;
    }
    const SvmSolution sol = solve_nuclear_svm_aligned(data, *loaded.structure);
    all_ok &= sol.status == SolveStatus::Optimal;
    dump_with_provenance(sol, "svm_nuclear.json");
  }
  std::printf("svm: baselines written to %s\n", cfg.out_dir.c_str());
  return all_ok ? 0 : 2;
}

namespace {

// Minimal reader for the trajectory CSV: header names plus the last row.
struct CsvRow {
  std::vector<std::string> names;
  std::vector<double> values;

  double get(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return values[i];
    throw std::invalid_argument("trajectory.csv: missing column " + name);
  }
};

CsvRow read_last_csv_row(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header, line, last;
  std::getline(in, header);
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  if (last.empty()) throw std::runtime_error("trajectory.csv has no records");
  CsvRow row;
  std::stringstream hs(header);
  std::string tok;
  while (std::getline(hs, tok, ',')) row.names.push_back(tok);
  std::stringstream vs(last);
  while (std::getline(vs, tok, ',')) row.values.push_back(tok.empty() ? kNan : std::stod(tok));
  while (row.values.size() < row.names.size()) row.values.push_back(kNan);
  return row;
}

}  // namespace

int cmd_compare(const ExperimentConfig& cfg) {
  LoadedDataset loaded = realize_dataset(cfg.dataset);
  const Dataset& data = loaded.data;

  const json side = json::parse(read_text(out_path(cfg, "trajectory.json")));
  if (side.at("dataset_hash").get<std::uint64_t>() != dataset_hash(data))
    throw std::invalid_argument("compare: trajectory was produced for a different dataset (hash mismatch)");
  const ParamTag tag = tag_from_name(side.value("parameterization", tag_name(cfg.parameterization)));

  const CsvRow row = read_last_csv_row(out_path(cfg, "trajectory.csv"));
  const bool diag_kind = tag == ParamTag::Diagonal || tag == ParamTag::Repar;
  const Index dir_dim = diag_kind ? data.d() : data.d() * data.d();

  Trajectory traj;
  TrajectoryRecord rec;
  rec.t = row.get("t");
  rec.loss = row.get("loss");
  rec.norm = row.get("norm_beta");
  rec.margin = row.get("margin");
  rec.direction = Vec(dir_dim);
  for (Index j = 0; j < dir_dim; ++j) rec.direction[j] = row.get("beta_hat_" + std::to_string(j));
  const ConstraintSystem cs_order = build_constraints_diagonal(data);
  rec.lambda = Vec(cs_order.count());
  for (Index k = 0; k < cs_order.count(); ++k) {
    const auto& [i, l] = cs_order.index[static_cast<std::size_t>(k)];
    rec.lambda[k] = row.get("lambda_" + std::to_string(i) + "_" + std::to_string(l));
  }
  rec.alignment_residual = row.get("alignment_residual");
  traj.records.push_back(std::move(rec));

  SvmSolution l1, fro, nuc;
  const SvmSolution* l1p = nullptr;
  const SvmSolution* frop = nullptr;
  const SvmSolution* nucp = nullptr;
  if (cfg.solve_l1) {
    l1 = solve_l1_svm(build_constraints_diagonal(data));
    l1p = &l1;
  }
  if (cfg.solve_frobenius) {
    fro = solve_frobenius_svm(data);
    frop = &fro;
  }
  if (cfg.solve_nuclear && loaded.structure) {
    nuc = solve_nuclear_svm_aligned(data, *loaded.structure);
    nucp = &nuc;
  }

  const ComparisonReport rep =
      compare_trajectory(data, loaded.structure, traj, tag, l1p, frop, nucp, cfg.objective_tol);
  json out = json::parse(report_to_json(rep));
  out["dataset_hash"] = dataset_hash(data);
  out["config_hash"] = config_hash(cfg);
  write_text_atomic(out_path(cfg, "compare.json"), out.dump(2));
  std::printf("compare: %s (primary gap %s, feasibility %s)\n", rep.pass ? "pass" : "FAIL",
              rep.pass_primary_gap ? "ok" : "exceeded", rep.pass_feasibility ? "ok" : "violated");
  return rep.pass ? 0 : 4;
}

}  // namespace attnflow
