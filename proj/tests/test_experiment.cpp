#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/SVD>

#include "attnflow/experiment.hpp"

using namespace attnflow;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig d1_config(const std::string& out, double target_margin = 6.0) {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetSpec::Kind::D1;
  cfg.parameterization = ParamTag::Diagonal;
  cfg.flow.target_margin = target_margin;
  cfg.out_dir = out;
  cfg.solve_l1 = true;
  cfg.solve_frobenius = true;
  cfg.solve_nuclear = false;
  return cfg;
}

}  // namespace

TEST_CASE("config JSON round-trip") {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetSpec::Kind::Aligned;
  cfg.dataset.n = 2;
  cfg.dataset.L = 5;
  cfg.dataset.d = 4;
  cfg.dataset.seed = 77;
  cfg.parameterization = ParamTag::Full;
  cfg.init_mode = InitMode::ReparMatched;
  cfg.flow.target_margin = 9.0;
  cfg.informed_omega0 = true;
  cfg.solve_nuclear = true;
  cfg.out_dir = "elsewhere";
  const std::string text = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(text);
  CHECK(config_to_json(back) == text);
  CHECK(config_hash(back) == config_hash(cfg));

  CHECK_THROWS_AS(config_from_json(R"({"dataset":{"kind":"nope"}})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(R"({"thresholds":{"angle_tol":-1.0}})"), std::invalid_argument);
}

TEST_CASE("informed initialization magnitudes") {
  Vec beta(3);
  beta << 0.5, -0.02, 0.0;
  const Vec w = informed_omega0(beta, 0.1);
  CHECK(w[0] == doctest::Approx(std::sqrt(1.0)));
  CHECK(w[1] == doctest::Approx(std::sqrt(2.0 * 0.05)));  // floored at 0.1 * max
  CHECK(w[2] == doctest::Approx(std::sqrt(2.0 * 0.05)));
  CHECK(w.minCoeff() > 0.0);
  CHECK_THROWS_AS(informed_omega0(Vec::Zero(2)), std::invalid_argument);
}

TEST_CASE("contrast dataset separates the two implicit norms") {
  const Dataset data = contrast_dataset();
  CHECK(check_assumption_A1(data).holds);
  CHECK(check_separability(data).feasible);

  const SvmSolution l1 = solve_l1_svm(build_constraints_diagonal(data));
  const SvmSolution fro = solve_frobenius_svm(data);
  REQUIRE(l1.status == SolveStatus::Optimal);
  REQUIRE(fro.status == SolveStatus::Optimal);

  const double top = l1.beta.cwiseAbs().maxCoeff();
  Index support = 0;
  for (Index j = 0; j < l1.beta.size(); ++j)
    if (std::abs(l1.beta[j]) > 1e-7 * top) ++support;
  CHECK(support < data.d());

  const Mat W1 = Mat(l1.beta.asDiagonal());
  const double cosv = W1.reshaped().dot(fro.W.reshaped()) / (W1.norm() * fro.W.norm());
  CHECK(std::acos(std::min(1.0, std::abs(cosv))) >= 0.3);
}

TEST_CASE("experiment pipeline end to end") {
  const std::string out = "/tmp/attnflow_test_pipeline";
  std::filesystem::remove_all(out);
  ExperimentConfig cfg = d1_config(out);

  CHECK(cmd_generate(cfg) == 0);
  const std::string bytes_first = slurp(out + "/dataset.json");
  CHECK(cmd_generate(cfg) == 0);
  CHECK(slurp(out + "/dataset.json") == bytes_first);  // byte-identical reruns
  CHECK(slurp(out + "/assumptions.json").find("\"holds\": true") != std::string::npos);

  CHECK(cmd_flow(cfg) == 0);
  CHECK(std::filesystem::exists(out + "/trajectory.csv"));
  CHECK(std::filesystem::exists(out + "/trajectory.json"));

  CHECK(cmd_svm(cfg) == 0);
  CHECK(std::filesystem::exists(out + "/svm_l1.json"));
  CHECK(std::filesystem::exists(out + "/svm_frobenius.json"));

  CHECK(cmd_compare(cfg) == 0);
  const std::string report = slurp(out + "/compare.json");
  CHECK(report.find("\"pass\": true") != std::string::npos);
  CHECK(report.find("dataset_hash") != std::string::npos);

  // A trajectory recorded for different data must be refused outright.
  ExperimentConfig other = cfg;
  other.dataset.kind = DatasetSpec::Kind::Diagonal;
  other.dataset.n = 2;
  other.dataset.L = 2;
  other.dataset.d = 3;
  other.dataset.seed = 5;
  CHECK_THROWS_AS(cmd_compare(other), std::invalid_argument);

  // Budget-stop is a distinct exit code.
  ExperimentConfig tiny = cfg;
  tiny.flow.max_steps = 3;
  CHECK(cmd_flow(tiny) == 1);

  std::filesystem::remove_all(out);
}

TEST_CASE("aligned pipeline solves the nuclear baseline") {
  const std::string out = "/tmp/attnflow_test_aligned";
  std::filesystem::remove_all(out);
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetSpec::Kind::Aligned;
  cfg.dataset.n = 2;
  cfg.dataset.L = 3;
  cfg.dataset.d = 4;
  cfg.dataset.seed = 31;
  cfg.parameterization = ParamTag::Full;
  cfg.flow.target_margin = 8.0;
  cfg.solve_l1 = false;
  cfg.solve_frobenius = true;
  cfg.solve_nuclear = true;
  cfg.out_dir = out;

  CHECK(cmd_generate(cfg) == 0);
  CHECK(cmd_flow(cfg) == 0);
  CHECK(cmd_svm(cfg) == 0);
  CHECK(cmd_compare(cfg) == 0);
  const std::string report = slurp(out + "/compare.json");
  CHECK(report.find("\"nuclear\"") != std::string::npos);
  CHECK(report.find("alignment_residual_max") != std::string::npos);
  std::filesystem::remove_all(out);
}

TEST_CASE("comparison report fields") {
  const Dataset d1 = reference_d1();
  const Vec omega0 = Vec::Constant(2, 0.5);
  FlowConfig fc;
  fc.target_margin = 12.0;
  const Trajectory traj =
      integrate(Params{init_diagonal(omega0, InitMode::Alternating, 2)}, d1, fc);
  const SvmSolution l1 = solve_l1_svm(build_constraints_diagonal(d1));
  const SvmSolution fro = solve_frobenius_svm(d1);
  const ComparisonReport rep =
      compare_trajectory(d1, std::nullopt, traj, ParamTag::Diagonal, &l1, &fro, nullptr, 0.05);
  CHECK(rep.final_margin >= 12.0);
  CHECK(rep.has_l1);
  // D1's flow limit splits the optimal face evenly; the l1 norm matches the
  // LP value exactly.
  CHECK(rep.l1_gap <= 1e-6);
  CHECK(rep.pass_feasibility);
  CHECK(rep.pass);
  CHECK(rep.loss_gap <= 1.05 * rep.loss_gap_bound);
  CHECK(rep.has_frobenius);

  const std::string text = report_to_json(rep);
  CHECK(text.find("loss_gap_bound") != std::string::npos);
}
