#pragma once

// Continuous geometric data (cone charts, flat fiber lattices, collapse
// schedules, semi-flat perturbations) and their structured-grid samplings.

#include "collapse_heat/common.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

namespace collapse_heat {

struct ConeParams {
  double alpha = 1.0;        // cone angle is 2*pi*alpha
  double beta = 1.0;         // perturbation decay exponent, in (0, 1]
  double r0 = 1.0;           // chart radius
  double q_amplitude = 0.0;  // |q| <= q_amplitude * r^beta

  void validate() const;
};

enum class GridKind { polar_wedge, cartesian_patch };

// Per-node chart metric. For polar grids the coordinates are (r, theta); for
// cartesian patches (x, y).
struct Metric2 {
  double g11 = 1.0, g12 = 0.0, g22 = 1.0;
  double det() const { return g11 * g22 - g12 * g12; }
  Eigen::Matrix2d matrix() const {
    Eigen::Matrix2d m;
    m << g11, g12, g12, g22;
    return m;
  }
};

struct BaseGrid {
  GridKind kind = GridKind::polar_wedge;
  ConeParams cone;
  double r_min = 0.0;
  bool cap_at_puncture = false;  // inner ring also carries the excised disk {r < r_min}
  std::vector<double> coord1;    // r nodes (polar) or x nodes (cartesian), increasing
  std::vector<double> coord2;    // theta nodes in [0, 2pi) (periodic) or y nodes
  std::vector<double> quad_weights;  // per node, approximates d mu_{g_B}
  std::vector<double> cone_weights;  // per node, approximates alpha r dr dtheta (polar only)
  std::vector<Metric2> metric;       // per node, chart components of g_B
  std::vector<double> volume_density;  // sqrt(det metric) per node

  std::size_t n1() const { return coord1.size(); }
  std::size_t n2() const { return coord2.size(); }
  std::size_t size() const { return coord1.size() * coord2.size(); }
  std::size_t index(std::size_t i, std::size_t j) const { return i * coord2.size() + j; }
  bool periodic2() const { return kind == GridKind::polar_wedge; }
  double spacing2() const;  // uniform step in the second coordinate
  double radius(std::size_t node) const { return coord1[node / coord2.size()]; }
  double angle(std::size_t node) const { return coord2[node % coord2.size()]; }
  // Index of the outer boundary nodes eliminated under Dirichlet conditions.
  bool is_outer_boundary(std::size_t node) const;
  // Geodesic distance between two nodes (cone distance for polar grids).
  double distance(std::size_t a, std::size_t b) const;
  double total_measure() const;
  // max over nodes of |q|_{g_cone} / r^beta; 0 for unperturbed charts.
  double max_relative_perturbation() const;
};

struct ConeChartOptions {
  double radial_grading = 1.0;  // r(xi) = r_min + (r0 - r_min) xi^p
  bool cap_at_puncture = false;
};

BaseGrid build_cone_chart(const ConeParams& params, int n_r, int n_theta, double r_min,
                          const ConeChartOptions& options = {});

// Flat rectangle [0, lx] x [0, ly]; used as a Euclidean reference patch.
BaseGrid build_cartesian_patch(double lx, double ly, int nx, int ny);

// Distance on the flat cone of angle 2*pi*alpha.
double cone_distance(double r, double theta, double rp, double thetap, double alpha);

struct FiberLattice {
  Eigen::Matrix2d basis = Eigen::Matrix2d::Identity();  // rows are the generators
  double scale = 1.0;

  // Metric of the scaled torus in lattice coordinates y in [0,1)^2.
  Eigen::Matrix2d gram() const { return scale * scale * basis * basis.transpose(); }
  double area() const { return scale * scale * std::abs(basis.determinant()); }
  double diameter() const;
  // Ascending nonzero-inclusive Laplace spectrum (first `count` values, with
  // multiplicity) from dual-lattice enumeration.
  std::vector<double> spectrum(std::size_t count) const;
  double lambda1() const;
  // Shortest generator length after reduction (the shortest lattice period).
  double shortest_period() const;
};

FiberLattice build_fiber_lattice(const Eigen::Matrix2d& basis, double scale);

// Zhong-Yang lower bound pi^2 / diam^2.
double torus_gap_lower_bound(const FiberLattice& lattice);

enum class Gauge { exponential, polynomial, custom };

struct CollapseStep {
  double s = 1.0;
  double epsilon = 0.0;
};

struct CollapseSchedule {
  std::vector<CollapseStep> steps;
  Gauge gauge = Gauge::custom;
  double gauge_c_amp = 0.0;  // C in eps = C exp(-c/s) or C s^c
  double gauge_rate = 0.0;   // c

  void validate() const;
  static CollapseSchedule exponential(double c_amp, double rate, const std::vector<double>& s_values);
  static CollapseSchedule polynomial(double c_amp, double power, const std::vector<double>& s_values);
};

// Shape of a product grid base x fiber, with the data needed to measure
// gradients in product-metric units.
struct ProductShape {
  const BaseGrid* base = nullptr;
  FiberLattice fiber;
  int n_f = 8;

  std::size_t fiber_size() const { return static_cast<std::size_t>(n_f) * n_f; }
  std::size_t size() const { return base->size() * fiber_size(); }
};

struct PerturbationField {
  double c1_norm_target = 0.0;
  double fiber_coupling = 0.25;  // relative amplitude of the fiber-dependent blocks
  int n_modes = 3;
  std::uint64_t seed = 1;
};

using Sym4 = Eigen::Matrix4d;

// Per product node symmetric 4x4 perturbation in the orthonormal frame of the
// reference product metric (frame order: e_r, e_theta, f_1, f_2).
struct TensorField {
  std::vector<Sym4> values;
  double amplitude = 0.0;  // scale applied to the unit profile

  bool empty() const { return values.empty(); }
};

TensorField sample_perturbation(const ProductShape& shape, const PerturbationField& target);

// Discrete C1 norm (sup of Frobenius values + sup of finite-difference
// gradient in product-metric units).
double measure_c1_norm(const TensorField& field, const ProductShape& shape);

// Smallest eigenvalue of I + E over all nodes.
double min_metric_eigenvalue(const TensorField& field);

}  // namespace collapse_heat
