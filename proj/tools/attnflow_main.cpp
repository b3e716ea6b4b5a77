#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "attnflow/experiment.hpp"
#include "attnflow/suite.hpp"

namespace {

attnflow::ExperimentConfig load_config(const std::string& path, std::uint64_t seed_override,
                                       const std::string& out_override) {
  attnflow::ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    cfg = attnflow::config_from_json(ss.str());
  }
  if (seed_override != 0) cfg.dataset.seed = seed_override;
  if (!out_override.empty()) cfg.out_dir = out_override;
  return cfg;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const attnflow::NumericalError& ex) {
    std::fprintf(stderr, "numerical failure: %s\n", ex.what());
    return 3;
  } catch (const std::invalid_argument& ex) {
    std::fprintf(stderr, "invalid input: %s\n", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient-flow laboratory for one-layer softmax attention separators"};
  app.require_subcommand(1);
  app.fallthrough();  // accept --config/--seed/--out after the subcommand

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string filter;
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--seed", seed, "dataset seed override");
  app.add_option("--out", out_dir, "output directory override");

  auto* gen = app.add_subcommand("generate", "write a dataset and its assumption report");
  auto* flow = app.add_subcommand("flow", "integrate the gradient flow and export the trajectory");
  auto* svm = app.add_subcommand("svm", "solve the separator baselines");
  auto* compare = app.add_subcommand("compare", "compare a finished run against the baselines");
  auto* suite = app.add_subcommand("suite", "run the acceptance battery");
  suite->add_option("--filter", filter, "criterion filter (id or name glob)");

  CLI11_PARSE(app, argc, argv);

  return run_guarded([&]() -> int {
    if (suite->parsed()) {
      return attnflow::print_suite_results(attnflow::run_acceptance_suite(filter));
    }
    const attnflow::ExperimentConfig cfg = load_config(config_path, seed, out_dir);
    if (gen->parsed()) return attnflow::cmd_generate(cfg);
    if (flow->parsed()) return attnflow::cmd_flow(cfg);
    if (svm->parsed()) return attnflow::cmd_svm(cfg);
    if (compare->parsed()) return attnflow::cmd_compare(cfg);
    return 2;
  });
}
