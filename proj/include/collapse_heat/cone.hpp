#pragma once

// Heat kernel of the flat cone dr^2 + alpha^2 r^2 dtheta^2 (Friedrichs
// realization at the tip) by angular-mode Bessel series.

#include "collapse_heat/geometry.hpp"

#include <vector>

namespace collapse_heat {

struct ConeKernelParams {
  double alpha = 1.0;
  double series_tol = 1e-13;
  int max_terms = 2000;

  void validate() const;
};

// e^{-x} I_nu(x) for real nu >= 0 and x >= 0.
double scaled_bessel_i(double nu, double x);

// Bessel order carried by angular mode n.
inline double cone_bessel_order(int n, double alpha) { return (n < 0 ? -n : n) / alpha; }

// Scaled angular-mode sum
//   S(x, dtheta) = sum_n e^{i n dtheta} e^{-x} I_{|n|/alpha}(x),
// so that K = exp(-(r - r')^2 / (4 tau)) S / (4 pi alpha tau) with x = r r' / (2 tau).
struct ConeSeries {
  double value = 0.0;
  int terms = 0;              // highest mode index summed
  double tail_bound = 0.0;    // certified bound on the omitted modes
  bool closed_form = false;   // image + contour form used (cancellation)
};

// Precomputed orders for one radial pair: modes[n] = e^{-x} I_{n/alpha}(x).
struct ConeModeTable {
  double x = 0.0;
  std::vector<double> modes;
  double tail_bound = 0.0;

  ConeSeries sum(const ConeKernelParams& params, double dtheta) const;
};

ConeModeTable cone_mode_table(const ConeKernelParams& params, double x);

// Image + contour representation of S; used when the mode sum cancels.
double cone_series_closed_form(double alpha, double x, double dtheta);

ConeSeries cone_kernel_series(const ConeKernelParams& params, double r, double theta, double rp, double thetap,
                              double tau);

double cone_kernel(const ConeKernelParams& params, double r, double theta, double rp, double thetap, double tau);

// sum_{b,b'} chi chi' K(b, b'; tau) Phi(b) Psi(b') w_cone(b) w_cone(b').
double cone_pairing(const ConeKernelParams& params, const BaseGrid& grid, const Vec& Phi, const Vec& Psi, double tau,
                    const Vec& chi);

struct ConePoint {
  double r = 1.0;
  double theta = 0.0;
};

struct GaussianBoundReport {
  // Fitted envelope 4 pi tau K <= C exp(-d^2 / (c tau)); the plane has (1, 4).
  // c is fitted on pairs with d^2 >= tau, C is then the least constant valid on all pairs.
  double C = 0.0;
  double c = 0.0;
  double min_kernel = 0.0;          // smallest tau * K seen
  double max_radial_derivative = 0.0;  // max tau^{3/2} |d_r K| (central differences)
  std::size_t samples = 0;
  bool holds = false;  // C <= 10 and c <= 8
};

GaussianBoundReport verify_gaussian_bound(const ConeKernelParams& params, const std::vector<ConePoint>& points,
                                          const std::vector<double>& taus);

}  // namespace collapse_heat
