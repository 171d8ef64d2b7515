#pragma once

// Run and sweep orchestration: config in, report bundle + manifest out, with
// the base-side discretization floor cached by config hash.

#include "collapse_heat/io.hpp"

#include <string>
#include <vector>

namespace collapse_heat {

struct RunOptions {
  std::string out_dir = "out";
  bool use_cache = true;
  std::string cache_dir;  // empty: cache_root(out_dir)
  bool write_traces = true;  // per-tau renormalized traces next to the channels
  ProgressFn progress;
};

struct RunOutcome {
  BookkeepingReport report;
  std::string config_hash;
  std::vector<std::string> outputs;  // relative to out_dir
  bool cache_hit = false;
};

// Writes report.json, channels/, plots/ and manifest.json under out_dir.
RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options);

struct SweepPointOutcome {
  std::vector<std::string> assignments;  // key=value per axis
  std::string dir;                       // relative to out_dir
  RunOutcome run;
};

struct SweepOutcome {
  std::vector<SweepPointOutcome> points;
  bool pass = false;
  bool single = false;  // no sweep axes: identical to a plain run
  std::vector<std::string> outputs;
};

// Overrides with array values on scalar keys become axes; the cartesian
// product is run point by point under out_dir/points/<label>/. Without axes
// the sweep is a plain run.
SweepOutcome run_sweep(const std::string& config_text, const std::vector<std::string>& overrides,
                       const RunOptions& options);

// Status to process exit code: 0 pass, 1 fail, 2 config / usage, 3 numeric.
int exit_code(Status status);

}  // namespace collapse_heat
