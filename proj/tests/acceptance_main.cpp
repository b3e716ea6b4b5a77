#include <cstdio>
#include <string>

#include "attnflow/suite.hpp"

// Runs every acceptance criterion and prints one pass/fail line per
// criterion. Exit code 0 only when all pass.
int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  try {
    return attnflow::print_suite_results(attnflow::run_acceptance_suite(filter));
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "acceptance suite aborted: %s\n", ex.what());
    return 3;
  }
}
