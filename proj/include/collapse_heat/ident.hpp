#pragma once

// Normalized lift I, fiber average P, fiber-constant projection I P and the
// compressed semigroup S(tau) = P exp(-tau H_t) I.

#include "collapse_heat/assembly.hpp"
#include "collapse_heat/heat.hpp"

#include <cstdint>

namespace collapse_heat {

class IdentificationPair {
 public:
  explicit IdentificationPair(const FibrationModel& model);

  const FibrationModel& model() const { return *model_; }
  std::size_t base_dim() const { return nb_; }
  std::size_t total_dim() const { return nb_ * nf_; }

  // (I v)(b, y) = A(b)^{-1/2} v(b)
  Vec lift(const Vec& v) const;
  // (P u)(b) = A(b)^{1/2} * sum_y u rho / N_f
  Vec average(const Vec& u) const;
  // Sparse matrices of the two maps.
  SpMat lift_matrix() const;
  SpMat avg_matrix() const;

  double base_inner(const Vec& a, const Vec& b) const { return model_->base_op.inner(a, b); }
  double total_inner(const Vec& a, const Vec& b) const { return model_->total_op.inner(a, b); }
  double base_norm(const Vec& a) const { return model_->base_op.norm(a); }
  double total_norm(const Vec& a) const { return model_->total_op.norm(a); }

 private:
  const FibrationModel* model_;
  std::size_t nb_, nf_;
  Vec sqrt_area_, inv_sqrt_area_;
};

IdentificationPair build_identification(const FibrationModel& model);

Vec fiber_projection(const IdentificationPair& pair, const Vec& u);

struct PoincareCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
};

// lhs = |(1 - I P) u|^2, rhs = V(u) / (lambda_1 (1 - C eps)), with lambda_1 the
// exact fiber gap (so s^2 / c0 is built in) and 1 - C eps the measured lower
// bound of total mass over product mass.
PoincareCheck vertical_poincare_check(const FibrationModel& model, const IdentificationPair& pair, const Vec& u);

Vec compress(const IdentificationPair& pair, const HeatEngine& engine, double tau, const Vec& v);

// |(1 - I P) exp(-sigma H) I v| / |v|
double leakage(const IdentificationPair& pair, const HeatEngine& engine, double sigma, const Vec& v);

struct NormEstimate {
  double value = 0.0;
  double residual = 0.0;  // |A x - value x| at the last iterate (symmetric case)
  int iterations = 0;
};

// Operator norm of S(tau) S(sigma) - S(tau + sigma) in the base mass norm by
// power iteration on the (self-adjoint) defect.
NormEstimate semigroup_defect(const IdentificationPair& pair, const HeatEngine& engine, double tau, double sigma,
                              int iterations = 50, std::uint64_t seed = 12345);

// Power iteration for the norm of a mass-self-adjoint linear map.
NormEstimate power_norm(const std::function<Vec(const Vec&)>& apply, const DiscreteOperator& space, int iterations,
                        std::uint64_t seed);

}  // namespace collapse_heat
