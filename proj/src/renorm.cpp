#include "collapse_heat/renorm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace collapse_heat {

namespace {

double binom(int n, int k) {
  double b = 1.0;
  for (int i = 1; i <= k; ++i) b = b * (n - k + i) / i;
  return b;
}

Vec to_dofs(const DiscreteOperator& op, const Vec& node_values) {
  require(static_cast<std::size_t>(node_values.size()) == op.grid_nodes, "vector does not live on the base grid");
  Vec v(static_cast<Eigen::Index>(op.dim));
  for (std::size_t d = 0; d < op.dim; ++d)
    v[static_cast<Eigen::Index>(d)] = node_values[static_cast<Eigen::Index>(op.dof_to_node[d])];
  return v;
}

}  // namespace

double smoothstep(int k, double t) {
  require(k >= 1 && k % 2 == 1, "smoothstep order must be odd and positive");
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const int n = (k - 1) / 2;
  double s = 0.0;
  for (int j = 0; j <= n; ++j) s += binom(n + j, j) * binom(2 * n + 1, n - j) * std::pow(-t, j);
  return std::pow(t, n + 1) * s;
}

void CutoffProfile::validate() const {
  require(order >= 1 && order % 2 == 1, "cutoff profile order must be odd and positive");
  require(rho > 0.0, "cutoff radius must be positive");
}

double CutoffProfile::eta(double u) const { return smoothstep(order, 2.0 * u - 1.0); }

SplitTestFunction split_test_function(const Vec& Phi, const BaseGrid& grid, const CutoffProfile& profile) {
  profile.validate();
  require(grid.kind == GridKind::polar_wedge, "split_test_function: needs a cone chart");
  require(static_cast<std::size_t>(Phi.size()) == grid.size(), "split_test_function: Phi must live on grid nodes");
  const double rho = profile.rho;
  if (!(rho > 2.0 * grid.r_min && rho < grid.cone.r0))
    throw InvalidArgument("cutoff radius " + std::to_string(rho) + " outside (2 r_min, r0)");
  SplitTestFunction s;
  s.rho = rho;
  s.outer.resize(Phi.size());
  for (Eigen::Index b = 0; b < Phi.size(); ++b) s.outer[b] = profile(grid.radius(static_cast<std::size_t>(b))) * Phi[b];
  s.inner = Phi - s.outer;
  double l2 = 0.0;
  for (Eigen::Index b = 0; b < Phi.size(); ++b) l2 += grid.quad_weights[static_cast<std::size_t>(b)] * s.inner[b] * s.inner[b];
  s.inner_l2 = std::sqrt(l2);
  const double sup = Phi.cwiseAbs().maxCoeff();
  s.inner_constant = sup > 0.0 ? s.inner_l2 / (rho * sup) : 0.0;
  return s;
}

Vec tip_cutoff(const BaseGrid& grid, double radius, int order) {
  require(radius > 0.0, "tip cutoff radius must be positive");
  Vec chi(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t b = 0; b < grid.size(); ++b)
    chi[static_cast<Eigen::Index>(b)] = 1.0 - smoothstep(order, 2.0 * grid.radius(b) / radius - 1.0);
  return chi;
}

double base_pairing(const HeatEngine& base_engine, const Vec& Phi, const Vec& Psi, double tau) {
  const DiscreteOperator& op = base_engine.op();
  const Vec a = to_dofs(op, Phi), b = to_dofs(op, Psi);
  if (b.cwiseAbs().maxCoeff() == 0.0 || a.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  return op.inner(a, base_engine.apply(tau, b));
}

RenormTerms rho_renormalized_terms(const HeatEngine& base_engine, const ConeKernelParams& cone, const BaseGrid& grid,
                                   const Vec& Phi, const Vec& Psi, double tau, const CutoffProfile& profile,
                                   const Vec& chi) {
  require(tau > 0.0, "renormalized pairing: tau must be positive");
  const SplitTestFunction sp = split_test_function(Phi, grid, profile);
  const SplitTestFunction sq = split_test_function(Psi, grid, profile);
  RenormTerms t;
  // symmetrized so that swapping Phi and Psi is exact
  t.outer = 0.5 * (base_pairing(base_engine, sp.outer, sq.outer, tau) + base_pairing(base_engine, sq.outer, sp.outer, tau));
  if (sp.inner.cwiseAbs().maxCoeff() > 0.0 && sq.inner.cwiseAbs().maxCoeff() > 0.0)
    t.inner = 0.5 * (cone_pairing(cone, grid, sp.inner, sq.inner, tau, chi) +
                     cone_pairing(cone, grid, sq.inner, sp.inner, tau, chi));
  return t;
}

double rho_renormalized_pairing(const HeatEngine& base_engine, const ConeKernelParams& cone, const BaseGrid& grid,
                                const Vec& Phi, const Vec& Psi, double tau, const CutoffProfile& profile,
                                const Vec& chi) {
  return rho_renormalized_terms(base_engine, cone, grid, Phi, Psi, tau, profile, chi).total();
}

std::string Extrapolation::flags() const {
  std::string f;
  auto add = [&](const char* s) { f += f.empty() ? s : std::string(",") + s; };
  if (indeterminate) add("indeterminate");
  if (nonmonotone) add("nonmonotone");
  if (floor_reached) add("floor_reached");
  return f;
}

Extrapolation extrapolate_ren(const std::vector<double>& rhos, const std::vector<double>& values, double beta,
                              double floor) {
  (void)beta;
  require(rhos.size() == values.size(), "extrapolate_ren: rho and value counts differ");
  require(rhos.size() >= 4, "extrapolate_ren: needs at least 4 values");
  const double ratio = rhos[0] / rhos[1];
  require(ratio > 1.0, "extrapolate_ren: rho sequence must decrease");
  for (std::size_t k = 1; k < rhos.size(); ++k)
    require(std::abs(rhos[k - 1] / rhos[k] - ratio) <= 1e-9 * ratio, "extrapolate_ren: rho sequence must be geometric");
  for (double v : values) require(std::isfinite(v), "extrapolate_ren: non-finite value");

  Extrapolation ex;
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  const double noise = std::max(floor, 64.0 * std::numeric_limits<double>::epsilon() * scale);
  for (std::size_t k = 0; k + 1 < values.size(); ++k) ex.differences.push_back(std::abs(values[k] - values[k + 1]));
  const std::size_t nd = ex.differences.size();
  const double last = values.back();
  ex.floor_reached = floor > 0.0 && ex.differences.back() <= floor;

  // differences above the noise floor carry the rate
  std::vector<std::size_t> live;
  for (std::size_t k = 0; k < nd; ++k)
    if (ex.differences[k] > noise) live.push_back(k);
  if (live.size() < 2) {
    ex.indeterminate = true;
    ex.limit = last;
    ex.err = std::max(noise, *std::max_element(ex.differences.begin(), ex.differences.end()));
    return ex;
  }
  // log-log regression over the smallest three live differences (asymptotic regime)
  const std::vector<std::size_t> tail(live.end() - static_cast<std::ptrdiff_t>(std::min<std::size_t>(3, live.size())),
                                      live.end());
  for (std::size_t i = 1; i < tail.size(); ++i)
    if (ex.differences[tail[i]] > 1.1 * ex.differences[tail[i - 1]]) ex.nonmonotone = true;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k : tail) {
    const double x = std::log(rhos[k]), y = std::log(ex.differences[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(tail.size());
  ex.rate = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double dlast = ex.differences.back();
  if (ex.nonmonotone || !(ex.rate > 0.0)) {
    ex.nonmonotone = true;
    ex.limit = last;
    ex.err = std::max(noise, *std::max_element(ex.differences.begin(), ex.differences.end()));
    return ex;
  }
  const double factor = std::pow(ratio, ex.rate) - 1.0;
  ex.limit = last - (values[values.size() - 2] - last) / factor;
  ex.err = std::max({dlast, 2.0 * std::abs(ex.limit - last), noise});
  return ex;
}

std::vector<double> default_rho_sequence(double r0, int count) {
  std::vector<double> r;
  for (int k = 0; k < count; ++k) r.push_back(0.25 * r0 * std::ldexp(1.0, -k));
  return r;
}

RenormTrace renormalized_trace(const HeatEngine& base_engine, const ConeKernelParams& cone, const BaseGrid& grid,
                               const Vec& Phi, const Vec& Psi, double tau, int profile_order, double chi_radius,
                               const std::vector<double>& rhos, double beta, double floor) {
  RenormTrace tr;
  tr.tau = tau;
  tr.profile_order = profile_order;
  tr.chi_radius = chi_radius;
  tr.rhos = rhos;
  const Vec chi = tip_cutoff(grid, chi_radius, profile_order);
  for (double rho : rhos) {
    const RenormTerms t =
        rho_renormalized_terms(base_engine, cone, grid, Phi, Psi, tau, CutoffProfile{profile_order, rho}, chi);
    tr.terms.push_back(t);
    tr.values.push_back(t.total());
  }
  tr.extrapolation = extrapolate_ren(rhos, tr.values, beta, floor);
  return tr;
}

CutoffIndependenceReport cutoff_independence_test(const HeatEngine& base_engine, const ConeKernelParams& cone,
                                                  const BaseGrid& grid, const Vec& Phi, const Vec& Psi, double tau,
                                                  int order1, int order2, double chi1, double chi2,
                                                  const std::vector<double>& rhos, double beta, double rel_tol,
                                                  double floor) {
  CutoffIndependenceReport rep;
  rep.traces.push_back(renormalized_trace(base_engine, cone, grid, Phi, Psi, tau, order1, chi1, rhos, beta, floor));
  rep.traces.push_back(renormalized_trace(base_engine, cone, grid, Phi, Psi, tau, order2, chi1, rhos, beta, floor));
  rep.traces.push_back(renormalized_trace(base_engine, cone, grid, Phi, Psi, tau, order1, chi2, rhos, beta, floor));
  rep.within_errors = true;
  for (std::size_t i = 0; i < rep.traces.size(); ++i)
    for (std::size_t j = i + 1; j < rep.traces.size(); ++j) {
      const auto& a = rep.traces[i].extrapolation;
      const auto& b = rep.traces[j].extrapolation;
      const double diff = std::abs(a.limit - b.limit);
      const double comb = a.err + b.err;
      const double scale = std::max(std::abs(a.limit), std::abs(b.limit));
      rep.max_abs_disagreement = std::max(rep.max_abs_disagreement, diff);
      if (scale > 0.0) rep.max_rel_disagreement = std::max(rep.max_rel_disagreement, diff / scale);
      rep.combined_error = std::max(rep.combined_error, comb);
      if (diff > 3.0 * comb) rep.within_errors = false;
    }
  rep.pass = rep.within_errors && rep.max_rel_disagreement <= rel_tol;
  return rep;
}

}  // namespace collapse_heat
