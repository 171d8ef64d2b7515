#include "collapse_heat/ident.hpp"

#include <cmath>
#include <random>

namespace collapse_heat {

IdentificationPair::IdentificationPair(const FibrationModel& model)
    : model_(&model), nb_(model.base_op.dim), nf_(model.fiber_size()) {
  const Vec& A = model.disint.fiber_area;
  require(static_cast<std::size_t>(A.size()) == nb_, "disintegration does not match the base operator");
  require(model.total_op.dim == nb_ * nf_, "total operator is not base x fiber");
  for (Eigen::Index b = 0; b < A.size(); ++b)
    if (!(A[b] > 0.0)) throw NumericError("zero fiber area at base dof " + std::to_string(b));
  sqrt_area_ = A.cwiseSqrt();
  inv_sqrt_area_ = sqrt_area_.cwiseInverse();
}

IdentificationPair build_identification(const FibrationModel& model) { return IdentificationPair(model); }

Vec IdentificationPair::lift(const Vec& v) const {
  require(static_cast<std::size_t>(v.size()) == nb_, "lift: dimension mismatch");
  Vec u(static_cast<Eigen::Index>(nb_ * nf_));
  for (std::size_t b = 0; b < nb_; ++b)
    u.segment(static_cast<Eigen::Index>(b * nf_), static_cast<Eigen::Index>(nf_))
        .setConstant(v[static_cast<Eigen::Index>(b)] * inv_sqrt_area_[static_cast<Eigen::Index>(b)]);
  return u;
}

Vec IdentificationPair::average(const Vec& u) const {
  require(static_cast<std::size_t>(u.size()) == nb_ * nf_, "average: dimension mismatch");
  const Vec& rho = model_->disint.density;
  Vec v(static_cast<Eigen::Index>(nb_));
  const double inv_nf = 1.0 / static_cast<double>(nf_);
  for (std::size_t b = 0; b < nb_; ++b) {
    const auto seg = Eigen::seqN(static_cast<Eigen::Index>(b * nf_), static_cast<Eigen::Index>(nf_));
    v[static_cast<Eigen::Index>(b)] = sqrt_area_[static_cast<Eigen::Index>(b)] * u(seg).dot(rho(seg)) * inv_nf;
  }
  return v;
}

SpMat IdentificationPair::lift_matrix() const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(nb_ * nf_);
  for (std::size_t b = 0; b < nb_; ++b)
    for (std::size_t f = 0; f < nf_; ++f)
      t.emplace_back(static_cast<int>(b * nf_ + f), static_cast<int>(b), inv_sqrt_area_[static_cast<Eigen::Index>(b)]);
  SpMat m(static_cast<Eigen::Index>(nb_ * nf_), static_cast<Eigen::Index>(nb_));
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

SpMat IdentificationPair::avg_matrix() const {
  const Vec& rho = model_->disint.density;
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(nb_ * nf_);
  for (std::size_t b = 0; b < nb_; ++b)
    for (std::size_t f = 0; f < nf_; ++f)
      t.emplace_back(static_cast<int>(b), static_cast<int>(b * nf_ + f),
                     sqrt_area_[static_cast<Eigen::Index>(b)] * rho[static_cast<Eigen::Index>(b * nf_ + f)] /
                         static_cast<double>(nf_));
  SpMat m(static_cast<Eigen::Index>(nb_), static_cast<Eigen::Index>(nb_ * nf_));
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

Vec fiber_projection(const IdentificationPair& pair, const Vec& u) { return pair.lift(pair.average(u)); }

PoincareCheck vertical_poincare_check(const FibrationModel& model, const IdentificationPair& pair, const Vec& u) {
  PoincareCheck out;
  const Vec perp = u - fiber_projection(pair, u);
  out.lhs = pair.total_inner(perp, perp);
  const double lower = 1.0 / model.max_mass_ratio;  // 1 - C eps
  out.rhs = vertical_energy(model, u) / (model.fiber.lambda1() * lower);
  if (out.rhs > 0.0) out.ratio = out.lhs / out.rhs;
  else out.ratio = out.lhs > 0.0 ? INFINITY : 0.0;
  return out;
}

Vec compress(const IdentificationPair& pair, const HeatEngine& engine, double tau, const Vec& v) {
  require(engine.op().dim == pair.total_dim(), "compress: engine does not act on the total space");
  return pair.average(engine.apply(tau, pair.lift(v)));
}

double leakage(const IdentificationPair& pair, const HeatEngine& engine, double sigma, const Vec& v) {
  const double nv = pair.base_norm(v);
  if (nv == 0.0) return 0.0;
  const Vec u = engine.apply(sigma, pair.lift(v));
  const Vec perp = u - fiber_projection(pair, u);
  return pair.total_norm(perp) / nv;
}

NormEstimate power_norm(const std::function<Vec(const Vec&)>& apply, const DiscreteOperator& space, int iterations,
                        std::uint64_t seed) {
  require(iterations >= 1, "power iteration needs at least one step");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Vec x(static_cast<Eigen::Index>(space.dim));
  for (auto& e : x) e = nd(rng);
  x /= space.norm(x);
  NormEstimate est;
  for (int k = 0; k < iterations; ++k) {
    const Vec y = apply(x);
    const double ny = space.norm(y);
    est.iterations = k + 1;
    est.value = ny;
    if (ny == 0.0) {
      est.residual = 0.0;
      return est;
    }
    const double rq = space.inner(x, y);
    est.residual = space.norm(y - rq * x);
    x = y / ny;
  }
  return est;
}

NormEstimate semigroup_defect(const IdentificationPair& pair, const HeatEngine& engine, double tau, double sigma,
                              int iterations, std::uint64_t seed) {
  require(tau > 0.0 && sigma > 0.0, "semigroup_defect: tau and sigma must be positive");
  auto S = [&](double t, const Vec& v) { return compress(pair, engine, t, v); };
  auto D = [&](const Vec& v) { return Vec(S(tau, S(sigma, v)) - S(tau + sigma, v)); };
  auto Dadj = [&](const Vec& v) { return Vec(S(sigma, S(tau, v)) - S(tau + sigma, v)); };
  // D* D is self-adjoint and nonnegative; its norm is |D|^2.
  NormEstimate sq = power_norm([&](const Vec& v) { return Dadj(D(v)); }, pair.model().base_op, iterations, seed);
  NormEstimate out;
  out.value = std::sqrt(sq.value);
  out.residual = sq.residual;
  out.iterations = sq.iterations;
  return out;
}

}  // namespace collapse_heat
