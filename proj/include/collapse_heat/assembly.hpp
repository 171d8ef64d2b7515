#pragma once

// Discrete Dirichlet forms on structured grids. Every operator is assembled
// with the same corner-split finite-volume rule: each grid cell contributes,
// at each of its corners, the quadratic form of the one-sided corner gradient
// weighted by a corner share of the cell volume. The result is symmetric and
// positive semidefinite by construction, with constants in the kernel.

#include "collapse_heat/common.hpp"
#include "collapse_heat/geometry.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace collapse_heat {

struct DiscreteOperator {
  std::size_t dim = 0;
  SpMat stiffness;  // E[u] = u^T stiffness u
  Vec mass;         // diagonal quadrature weights
  BoundaryCondition bc = BoundaryCondition::neumann;
  std::vector<std::size_t> dof_to_node;  // dof index -> grid node
  std::size_t grid_nodes = 0;
  double measured_epsilon = 0.0;

  // Mass-weighted inner product and norm.
  double inner(const Vec& a, const Vec& b) const { return (a.array() * mass.array() * b.array()).sum(); }
  double norm(const Vec& a) const { return std::sqrt(inner(a, a)); }
  // Generator H = M^{-1} K applied to v.
  Vec apply_generator(const Vec& v) const;
  // Dense copy (only for small dims).
  Mat dense_stiffness() const { return Mat(stiffness); }
};

// One axis of a structured grid.
struct GridAxis {
  std::vector<double> nodes;
  bool periodic = false;
  double period = 0.0;  // only for periodic axes

  std::size_t size() const { return nodes.size(); }
  std::size_t cells() const { return periodic ? nodes.size() : nodes.size() - 1; }
  double cell_width(std::size_t c) const;
};

// Corner-split assembly over a tensor grid of dimension axes.size() (1..4).
// `jacobian[n]` is sqrt(det g) at node n; `inverse_metric(n, out)` writes the
// d x d inverse metric (row-major) at node n. Returns the full-grid stiffness
// and the per-node coordinate volume (sum over adjacent cells of vol / 2^d).
struct CornerSplitResult {
  SpMat stiffness;
  Vec coordinate_volume;
};
CornerSplitResult assemble_corner_split(const std::vector<GridAxis>& axes, const std::vector<double>& jacobian,
                                        const std::function<void(std::size_t, double*)>& inverse_metric);

// Restricts a full-grid operator to the dofs not flagged in `eliminate`.
DiscreteOperator restrict_operator(const SpMat& full_stiffness, const Vec& full_mass,
                                   const std::vector<bool>& eliminate, BoundaryCondition bc);

DiscreteOperator assemble_base(const BaseGrid& grid, BoundaryCondition bc);

// Uniform 1-D chain on [0, length] (Dirichlet eliminates both endpoints).
DiscreteOperator assemble_interval(int n_nodes, double length, BoundaryCondition bc);

DiscreteOperator assemble_fiber(const FiberLattice& lattice, int n_f);

struct Disintegration {
  Vec fiber_area;  // A_t per base dof
  Vec density;     // rho_t per total dof (base-major: dof = b * fiber_size + f)
  std::size_t fiber_size = 0;

  std::size_t base_of(std::size_t total_dof) const { return total_dof / fiber_size; }
  std::size_t fiber_of(std::size_t total_dof) const { return total_dof % fiber_size; }
  // max_b |sum_f rho / N_f - 1|
  double normalization_defect() const;
  double max_density_deviation() const { return (density.array() - 1.0).abs().maxCoeff(); }
};

struct FibrationModel {
  std::shared_ptr<const BaseGrid> base;
  FiberLattice fiber;
  int n_f = 8;
  DiscreteOperator total_op;
  DiscreteOperator base_op;
  DiscreteOperator fiber_op;  // unperturbed fiber operator (area-weighted)
  Disintegration disint;
  TensorField perturbation;
  double epsilon = 0.0;  // measured discrete C1 norm of the realized perturbation
  // max over nodes of total mass / product mass (>= 1 - C eps)
  double max_mass_ratio = 1.0;

  std::size_t fiber_size() const { return static_cast<std::size_t>(n_f) * n_f; }
};

struct TotalAssemblyOptions {
  std::size_t max_dim = 4'000'000;
  // Debug negative control: scales rho_t on one fiber so the normalization breaks.
  bool break_density_normalization = false;
};

FibrationModel assemble_total(std::shared_ptr<const BaseGrid> base, const FiberLattice& fiber, int n_f,
                              const PerturbationField& perturbation, BoundaryCondition bc,
                              const TotalAssemblyOptions& options = {});

// Same, with an already sampled perturbation (used to hold the profile fixed
// while the collapse scale changes).
FibrationModel assemble_total(std::shared_ptr<const BaseGrid> base, const FiberLattice& fiber, int n_f,
                              TensorField field, BoundaryCondition bc, const TotalAssemblyOptions& options = {});

double dirichlet_energy(const DiscreteOperator& op, const Vec& v);

// Fiber-direction part of the unperturbed product form.
double vertical_energy(const FibrationModel& model, const Vec& u);

}  // namespace collapse_heat
