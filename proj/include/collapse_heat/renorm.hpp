#pragma once

// rho-cutoff decomposition of test functions near the cone tip and the
// renormalized pairing (outer base-kernel part + inner flat-cone part).

#include "collapse_heat/cone.hpp"
#include "collapse_heat/heat.hpp"

#include <string>
#include <vector>

namespace collapse_heat {

// eta(u) = 0 for u <= 1/2, 1 for u >= 1, polynomial smoothstep of odd degree
// `order` in between; eta_rho(r) = eta(r / rho).
struct CutoffProfile {
  int order = 3;
  double rho = 0.25;

  void validate() const;
  double eta(double u) const;
  double operator()(double r) const { return eta(r / rho); }
};

// Smoothstep of odd degree k on [0, 1].
double smoothstep(int k, double t);

struct SplitTestFunction {
  Vec outer;  // eta_rho Phi
  Vec inner;  // Phi - outer
  double rho = 0.0;
  double inner_l2 = 0.0;       // base-measure L2 norm of inner
  double inner_constant = 0.0;  // inner_l2 / (rho |Phi|_inf)
};

SplitTestFunction split_test_function(const Vec& Phi, const BaseGrid& grid, const CutoffProfile& profile);

// chi = 1 - eta(r / radius): 1 near the tip, 0 for r >= radius.
Vec tip_cutoff(const BaseGrid& grid, double radius, int order = 3);

struct RenormTerms {
  double outer = 0.0;
  double inner = 0.0;
  double total() const { return outer + inner; }
};

// <Phi^(rho), exp(-tau H_B) Psi^(rho)>_B + cone pairing of Phi^{<rho}, Psi^{<rho}.
RenormTerms rho_renormalized_terms(const HeatEngine& base_engine, const ConeKernelParams& cone, const BaseGrid& grid,
                                   const Vec& Phi, const Vec& Psi, double tau, const CutoffProfile& profile,
                                   const Vec& chi);

double rho_renormalized_pairing(const HeatEngine& base_engine, const ConeKernelParams& cone, const BaseGrid& grid,
                                const Vec& Phi, const Vec& Psi, double tau, const CutoffProfile& profile,
                                const Vec& chi);

// Base pairing of node vectors through the engine's dof layout.
double base_pairing(const HeatEngine& base_engine, const Vec& Phi, const Vec& Psi, double tau);

struct Extrapolation {
  double limit = 0.0;
  double rate = 0.0;
  double err = 0.0;
  bool indeterminate = false;  // differences at roundoff; no rate
  bool nonmonotone = false;    // differences not decreasing above the floor
  bool floor_reached = false;  // last difference at or below the supplied floor
  std::vector<double> differences;

  bool extrapolated() const { return !indeterminate && !nonmonotone; }
  std::string flags() const;
};

// Values v(rho_k) along a geometric decreasing sequence; fits |dv| = C rho^p
// on the three smallest resolvable differences and removes the leading term
// Richardson-style. beta is recorded only.
Extrapolation extrapolate_ren(const std::vector<double>& rhos, const std::vector<double>& values, double beta,
                              double floor = 0.0);

std::vector<double> default_rho_sequence(double r0, int count = 6);

struct RenormTrace {
  double tau = 0.0;
  int profile_order = 3;
  double chi_radius = 0.0;
  std::vector<double> rhos;
  std::vector<RenormTerms> terms;
  std::vector<double> values;
  Extrapolation extrapolation;
};

RenormTrace renormalized_trace(const HeatEngine& base_engine, const ConeKernelParams& cone, const BaseGrid& grid,
                               const Vec& Phi, const Vec& Psi, double tau, int profile_order, double chi_radius,
                               const std::vector<double>& rhos, double beta, double floor = 0.0);

struct CutoffIndependenceReport {
  std::vector<RenormTrace> traces;  // (k1, chi1), (k2, chi1), (k1, chi2)
  double max_abs_disagreement = 0.0;
  double max_rel_disagreement = 0.0;
  double combined_error = 0.0;  // largest pairwise sum of error estimates
  bool within_errors = false;   // disagreement <= 3 x combined error
  bool pass = false;
};

CutoffIndependenceReport cutoff_independence_test(const HeatEngine& base_engine, const ConeKernelParams& cone,
                                                  const BaseGrid& grid, const Vec& Phi, const Vec& Psi, double tau,
                                                  int order1, int order2, double chi1, double chi2,
                                                  const std::vector<double>& rhos, double beta, double rel_tol = 1e-4,
                                                  double floor = 0.0);

}  // namespace collapse_heat
