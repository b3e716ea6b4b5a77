#pragma once

#include <string>
#include <vector>

namespace attnflow {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// Runs the acceptance battery. The filter matches criterion ids and names
// ('*' wildcards; a plain string matches as a substring). Empty runs all.
std::vector<CriterionResult> run_acceptance_suite(const std::string& filter = "");

// Prints one pass/fail line per criterion; returns 0 when all pass, else 4.
int print_suite_results(const std::vector<CriterionResult>& results);

}  // namespace attnflow
