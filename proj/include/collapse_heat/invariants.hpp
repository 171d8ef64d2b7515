#pragma once

// Named invariant suites per module, run on the grids of an experiment config.

#include "collapse_heat/harness.hpp"

#include <string>
#include <vector>

namespace collapse_heat {

struct InvariantResult {
  std::string id;  // "<module>.<name>"
  std::string module;
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct InvariantOptions {
  std::vector<std::string> modules;  // empty: all
  // Debug negative control passed through to total assembly.
  bool break_density_normalization = false;
  int samples = 100;
};

struct InvariantSuite {
  std::vector<InvariantResult> results;
  bool pass = true;
  std::string first_failure;  // id of the first failing invariant
};

const std::vector<std::string>& invariant_modules();

// Throws ConfigError on an unknown module name.
InvariantSuite check_invariants(const ExperimentConfig& config, const InvariantOptions& options = {},
                                const ProgressFn& progress = {});

// Fixed-width text table, one row per invariant.
std::string invariant_table(const InvariantSuite& suite);

}  // namespace collapse_heat
