#pragma once

// Heat semigroups exp(-tau H) for H = M^{-1} K, either through a full
// generalized eigendecomposition (small problems) or a Lanczos exponential
// action in the mass inner product.

#include "collapse_heat/assembly.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace collapse_heat {

enum class EngineMode { dense_spectral, krylov };

const char* to_string(EngineMode mode);
EngineMode parse_engine_mode(const std::string& s);

struct KrylovParams {
  int max_subspace = 60;
  double tolerance = 1e-9;
  int max_substeps = 100000;
  // Stiff problems (t |H| large) switch to shift-and-invert Lanczos with a
  // sparse factorization of M + gamma K; gamma = shift_fraction * t.
  bool shift_invert = true;
  double shift_fraction = 0.1;
};

struct SpectralData {
  Vec eigenvalues;   // ascending
  Mat eigenvectors;  // mass-orthonormal columns
};

struct ShiftInvertCache;

class HeatEngine {
 public:
  HeatEngine(std::shared_ptr<const DiscreteOperator> op, EngineMode mode, std::size_t dense_cap = 3000,
             KrylovParams krylov = {});

  const DiscreteOperator& op() const { return *op_; }
  EngineMode mode() const { return mode_; }
  const KrylovParams& krylov_params() const { return krylov_; }
  // Throws unless the engine is dense.
  const SpectralData& spectrum() const;

  // exp(-tau H) v.
  Vec apply(double tau, const Vec& v) const;
  // exp(-tau_k H) v for ascending taus, sharing one propagation.
  std::vector<Vec> apply_many(const std::vector<double>& taus, const Vec& v) const;

  // Declares op = base x fiber (base-major dofs) up to a perturbation; the
  // shift-and-invert solves are then preconditioned by the separable product.
  void set_product_structure(const DiscreteOperator& base, const DiscreteOperator& fiber);
  bool has_product_structure() const;

 private:
  std::shared_ptr<const DiscreteOperator> op_;
  EngineMode mode_;
  KrylovParams krylov_;
  std::optional<SpectralData> spectral_;
  std::shared_ptr<ShiftInvertCache> si_;
};

HeatEngine build_engine(const DiscreteOperator& op, EngineMode mode, std::size_t dense_cap = 3000,
                        KrylovParams krylov = {});

Vec apply_heat(const HeatEngine& engine, double tau, const Vec& v);

// Engine on model.total_op with the product preconditioner attached.
HeatEngine build_total_engine(const FibrationModel& model, EngineMode mode, std::size_t dense_cap = 3000,
                              KrylovParams krylov = {});

// Lanczos exponential action on its own. Returns exp(-t M^{-1}K) v with the
// achieved error estimate.
struct KrylovResult {
  Vec value;
  double error_estimate = 0.0;
  int substeps = 0;
};
KrylovResult krylov_expv(const SpMat& stiffness, const Vec& mass, double t, const Vec& v, const KrylovParams& params);

struct KernelMatrix {
  double tau = 0.0;
  Mat entries;  // operator = entries * diag(mass)
  Vec mass;
  BoundaryCondition bc = BoundaryCondition::neumann;
  std::vector<std::size_t> labels;  // dof -> grid node

  double symmetry_defect() const;
  double min_entry() const { return entries.minCoeff(); }
  Vec row_mass_sums() const { return entries * mass; }
};

KernelMatrix kernel_matrix(const HeatEngine& engine, double tau);

struct ProfileBin {
  double distance_lo = 0.0;
  double distance_hi = 0.0;
  double max_abs = 0.0;
  std::size_t count = 0;
};

struct OffDiagonalProfile {
  std::vector<ProfileBin> bins;  // max_abs is replaced by its monotone envelope
  std::vector<double> raw_max;   // per-bin maximum before the envelope
  // Least-squares slope of log max|K| against -d^2/(4 tau) (1 for a Gaussian).
  double gaussian_slope = 0.0;
  std::size_t argmax_bin = 0;
};

OffDiagonalProfile offdiagonal_profile(const KernelMatrix& kernel,
                                       const std::function<double(std::size_t, std::size_t)>& distance,
                                       std::size_t n_bins = 20);

}  // namespace collapse_heat
