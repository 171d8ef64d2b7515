#pragma once

// Collapse sweeps: total-space pairings K_t(Phi, Psi; tau) against the
// rho-renormalized base target, split into interior / mixed / edge channels,
// and the iterated-limit verdict.

#include "collapse_heat/ident.hpp"
#include "collapse_heat/renorm.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace collapse_heat {

// Compactly supported analytic test functions on a cone chart.
//   radial_bump:  A b(r / width) (1 + modulation cos(mode theta))
//   angular_bump: A b(d((r, theta), (center_r, center_theta)) / width)
// with b(u) = (1 - u^2)^4 on [0, 1).
struct TestFunctionSpec {
  std::string family = "radial_bump";
  double amplitude = 1.0;
  double width = 0.6;
  double center_r = 0.0;
  double center_theta = 0.0;
  int mode = 1;
  double modulation = 0.0;

  void validate() const;
};

Vec sample_test_function(const TestFunctionSpec& spec, const BaseGrid& grid);

struct ExperimentConfig {
  std::string name = "default";
  ConeParams cone{0.75, 0.5, 1.0, 0.3};
  int n_r = 16;
  int n_theta = 16;
  double r_min = 0.003;
  double radial_grading = 2.0;
  bool cap_at_puncture = true;
  Eigen::Matrix2d fiber_basis = Eigen::Matrix2d::Identity();
  int n_f = 8;
  CollapseSchedule schedule = CollapseSchedule::exponential(0.3, 0.5, {0.4, 0.3, 0.2, 0.15});
  double fiber_coupling = 0.25;
  int n_modes = 3;
  std::vector<double> taus{0.05, 0.1, 0.2};
  std::vector<double> rhos{0.25, 0.125, 0.0625, 0.03125};  // in units of r0
  TestFunctionSpec phi{"radial_bump", 1.0, 0.6, 0.0, 0.0, 1, 0.3};
  TestFunctionSpec psi{"angular_bump", 1.0, 0.5, 0.15, 1.0, 1, 0.0};
  BoundaryCondition bc = BoundaryCondition::dirichlet;
  KrylovParams krylov{60, 1e-10, 100000};
  std::size_t dense_cap = 3000;
  int profile_order = 3;
  double chi_radius = 0.5;  // in units of r0
  double safety = 3.0;
  bool refine_floor = true;
  std::uint64_t seed = 1;
  int threads = 1;
  std::size_t max_total_dim = 400000;

  void validate() const;
  std::vector<double> absolute_rhos() const;
};

// <I Phi, exp(-tau H_t) I Psi>_{L^2(X_t)} for base-dof vectors.
double total_pairing(const FibrationModel& model, const IdentificationPair& pair, const HeatEngine& engine,
                     const Vec& Phi, const Vec& Psi, double tau);

struct CellRecord {
  int step = 0;
  double s = 0.0;
  double epsilon = 0.0;  // measured C1 norm of the realized perturbation
  double rho = 0.0;
  double tau = 0.0;
  double total = 0.0;        // K_t(Phi, Psi; tau)
  double target = 0.0;       // K^ren_{B, rho}
  double discrepancy = 0.0;  // |total - target|
  double interior = 0.0;     // |K_t - K_B| on (outer, outer) plus (inner, inner)
  double mixed = 0.0;        // |K_t(outer, inner)| + |K_t(inner, outer)|
  double mixed_ceiling = 0.0;
  double edge = 0.0;         // |K_B - K_cone| on (inner, inner)
  double bilinearization_gap = 0.0;
  double estimate = 0.0;     // fitted channels + floor
  bool bookkeeping_ok = true;
};

struct ChannelFit {
  std::string name;
  double constant = 0.0;  // max channel / driver over the records
  double rate = 0.0;      // log-log slope against the driver
  double r2 = 0.0;
  int points = 0;
};

struct RhoLimsup {
  double rho = 0.0;
  double limsup = 0.0;           // max over the last two steps and all taus
  double interior_tail = 0.0;    // interior channel over the same tail
};

struct BookkeepingReport {
  std::string config_name;
  std::vector<CellRecord> records;
  ChannelFit interior, mixed, edge;
  double floor = 0.0;
  std::vector<RhoLimsup> limsups;
  bool limsups_monotone = false;
  bool interior_decays = false;
  double final_discrepancy = 0.0;
  double final_estimate = 0.0;
  double bookkeeping_fraction = 0.0;
  double max_bilinearization_gap = 0.0;
  bool mixed_ceiling_ok = true;
  bool partial = false;
  bool pass = false;
  std::string blamed;  // channel blamed on failure
  std::vector<std::string> notes;
};

using ProgressFn = std::function<void(const std::string&)>;

// Base-only renormalized target K^ren_{B, rho}(Phi, Psi; tau) on the config grid.
struct BaseSetup {
  std::shared_ptr<const BaseGrid> grid;
  std::shared_ptr<const DiscreteOperator> op;
  std::shared_ptr<const HeatEngine> engine;
  ConeKernelParams cone;
  Vec phi, psi;  // node values
};

BaseSetup build_base_setup(const ExperimentConfig& config, int refine = 1);

// Discretization floor from the (h, h/2) base pair: max over (rho, tau) of
// the change in K^ren_{B, rho}.
double discretization_floor(const ExperimentConfig& config);

// A precomputed floor (for example from the cache) skips the (h, h/2) rerun.
BookkeepingReport run_iterated_limit(const ExperimentConfig& config, const ProgressFn& progress = {},
                                     std::optional<double> floor = std::nullopt);

struct CorollaryPoint {
  int step = 0;
  double s = 0.0;
  double epsilon = 0.0;
  double rho = 0.0;  // epsilon^{1/(4+beta)}, clipped to the resolvable range
  double discrepancy = 0.0;  // max over taus of |K_t - K^ren_B|
};

struct CorollaryTrace {
  std::vector<CorollaryPoint> points;
  std::vector<double> limits;  // extrapolated K^ren_B per tau
  double floor = 0.0;
  bool monotone = false;
  bool floor_reached = false;
};

CorollaryTrace one_parameter_corollary(const ExperimentConfig& config, const ProgressFn& progress = {});

// Leakage and compressed-semigroup defect along s -> s/2 with the
// perturbation profile held fixed (dense engines on a reduced grid).
struct SemigroupRateStudy {
  std::vector<double> s_values;
  std::vector<double> leakage;
  std::vector<double> defect;
  std::vector<double> leakage_ratios;
  std::vector<double> defect_ratios;
  double separable_leakage = 0.0;
  double separable_defect = 0.0;
  double epsilon = 0.0;
};

struct SemigroupRateOptions {
  int n_r = 5;
  int n_theta = 8;
  int n_f = 8;
  double s0 = 0.4;
  int steps = 4;
  double epsilon = 0.05;  // C1 norm of the profile at s0
  double sigma = 0.1;
  double tau = 0.1;
  int power_iterations = 30;
  std::uint64_t seed = 1;
};

SemigroupRateStudy semigroup_rate_study(const SemigroupRateOptions& options, const ProgressFn& progress = {});

// |K^ren_rho - K^ren_{rho/2}| on the base along the config rho list.
struct EdgeRateStudy {
  std::vector<double> rhos;
  std::vector<double> max_differences;  // max over taus
  double slope = 0.0;
  double floor = 0.0;
  bool floor_reached = false;
};

EdgeRateStudy edge_rate_study(const ExperimentConfig& config);

CutoffIndependenceReport cutoff_independence(const ExperimentConfig& config, double tau, int order2 = 5,
                                             double chi2 = 0.3, int n_rho = 6);

}  // namespace collapse_heat
