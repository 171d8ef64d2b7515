#pragma once

// JSON experiment configs, versioned exports of grids, operators and kernels,
// and the CSV / JSON / gnuplot files a run leaves behind.

#include "collapse_heat/harness.hpp"

#include <map>
#include <string>
#include <vector>

namespace collapse_heat {

inline constexpr const char* kConfigSchema = "collapse-heat/config/v1";
inline constexpr const char* kGeometrySchema = "collapse-heat/geometry/v1";
inline constexpr const char* kOperatorSchema = "collapse-heat/operator/v1";
inline constexpr const char* kKernelSchema = "collapse-heat/kernel/v1";
inline constexpr const char* kReportSchema = "collapse-heat/report/v1";
inline constexpr const char* kManifestSchema = "collapse-heat/manifest/v1";

// Config text is JSON. Overrides are "dotted.path=value" with value parsed as
// JSON when possible (bare words become strings). Unknown keys and type
// mismatches throw ConfigError naming the field path.
ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
std::string config_to_json(const ExperimentConfig& config, int indent = 2);
// 16 hex digits of FNV-1a over the canonical serialization (sorted keys), so
// reordering keys in the source file does not change it.
std::string config_hash(const ExperimentConfig& config);

// Overrides whose value is an array where the config holds a scalar (or an
// array of arrays where it holds an array) become sweep axes.
struct SweepAxis {
  std::string key;
  std::vector<std::string> values;  // JSON text per point
};

struct OverrideSet {
  std::vector<std::string> fixed;  // key=value
  std::vector<SweepAxis> axes;
};

OverrideSet classify_overrides(const std::vector<std::string>& overrides);

// Grids and lattices.
std::string grid_to_json(const BaseGrid& grid);
BaseGrid grid_from_json(const std::string& text);
std::string lattice_to_json(const FiberLattice& lattice);
FiberLattice lattice_from_json(const std::string& text);

// Operators: <prefix>.json header plus <prefix>.triplets ("row col value" lines
// for the stiffness, then "mass" lines).
void save_operator(const DiscreteOperator& op, const std::string& prefix);
DiscreteOperator load_operator(const std::string& prefix);

// Kernels: <prefix>.bin row-major float64 entries plus <prefix>.json sidecar.
void save_kernel(const KernelMatrix& kernel, const std::string& prefix);
KernelMatrix load_kernel(const std::string& prefix);

std::string profile_csv(const OffDiagonalProfile& profile);
// Columns s, epsilon, tau, sigma, value, fitted_constant (value / s).
std::string leakage_csv(const SemigroupRateStudy& study, double sigma);
std::string defect_csv(const SemigroupRateStudy& study, double tau, double sigma);

struct ConeTableRow {
  double r = 0.0, theta = 0.0, rp = 0.0, thetap = 0.0, tau = 0.0, value = 0.0;
};
std::string cone_table_csv(const std::vector<ConeTableRow>& rows);

std::string renorm_trace_csv(const RenormTrace& trace);
std::string extrapolation_json(const Extrapolation& ex);

std::string report_to_json(const BookkeepingReport& report, const std::string& config_hash = "");

// Writes via a temporary file and rename.
void write_text_atomic(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// report.json, channels/*.csv, plots/*.gp under out_dir. Returns written paths
// relative to out_dir.
std::vector<std::string> write_report_bundle(const std::string& out_dir, const ExperimentConfig& config,
                                             const BookkeepingReport& report,
                                             const std::vector<RenormTrace>& target_traces = {});

struct RunManifest {
  std::string config_hash;
  std::string tool_version = kVersion;
  std::string started_utc;
  std::string finished_utc;
  std::vector<std::string> outputs;
  std::map<std::string, std::string> criteria;  // name -> "pass" | "fail" | note
};

std::string manifest_to_json(const RunManifest& manifest);
void write_manifest(const std::string& out_dir, const RunManifest& manifest);
std::string utc_now();

// COLLAPSE_HEAT_CACHE, else <out_dir>/.cache; entries live under v<version>/<hash>.
std::string cache_root(const std::string& out_dir);
std::string cache_entry(const std::string& out_dir, const std::string& config_hash);

}  // namespace collapse_heat
