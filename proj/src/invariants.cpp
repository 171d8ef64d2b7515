#include "collapse_heat/invariants.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace collapse_heat {

namespace {

constexpr double kPi = std::numbers::pi;

struct Ctx {
  const ExperimentConfig& config;
  const InvariantOptions& options;
  const ProgressFn& progress;
  InvariantSuite& suite;
  std::mt19937_64 rng;

  // value <= threshold passes
  void record(const std::string& module, const std::string& name, double value, double threshold,
              const std::string& detail = "") {
    InvariantResult r;
    r.module = module;
    r.id = module + "." + name;
    r.value = value;
    r.threshold = threshold;
    r.pass = std::isfinite(value) && value <= threshold;
    r.detail = detail;
    if (!r.pass && suite.pass) {
      suite.pass = false;
      suite.first_failure = r.id;
    }
    if (progress) progress(r.id + (r.pass ? " pass" : " FAIL"));
    suite.results.push_back(std::move(r));
  }

  Vec random(std::size_t n) {
    std::normal_distribution<double> nd;
    Vec v(static_cast<Eigen::Index>(n));
    for (auto& x : v) x = nd(rng);
    return v;
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
};

std::shared_ptr<const BaseGrid> config_grid(const ExperimentConfig& c) {
  return std::make_shared<BaseGrid>(
      build_cone_chart(c.cone, c.n_r, c.n_theta, c.r_min, ConeChartOptions{c.radial_grading, c.cap_at_puncture}));
}

FibrationModel first_step_model(const Ctx& ctx, std::shared_ptr<const BaseGrid> grid, double epsilon, int n_f) {
  const auto& c = ctx.config;
  const auto& st = c.schedule.steps.front();
  TotalAssemblyOptions opt;
  opt.max_dim = c.max_total_dim;
  opt.break_density_normalization = ctx.options.break_density_normalization;
  return assemble_total(std::move(grid), build_fiber_lattice(c.fiber_basis, st.s), n_f,
                        PerturbationField{epsilon, c.fiber_coupling, c.n_modes, c.seed}, c.bc, opt);
}

double relative_asymmetry(const SpMat& k) {
  const SpMat kt = SpMat(k.transpose());
  return (k - kt).norm() / std::max(k.norm(), 1e-300);
}

void geometry_suite(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto grid = config_grid(c);
  double minw = INFINITY;
  for (std::size_t n = 0; n < grid->size(); ++n)
    minw = std::min({minw, grid->quad_weights[n], grid->volume_density[n]});
  ctx.record("geometry", "positive_weights", -minw, 0.0, "minus the smallest weight or volume density");

  ConeParams flat{1.0, c.cone.beta, c.cone.r0, 0.0};
  const auto e = build_cone_chart(flat, c.n_r, c.n_theta, c.r_min, ConeChartOptions{c.radial_grading, false});
  double dev = 0.0;
  for (std::size_t n = 0; n < e.size(); ++n) {
    const double r = e.radius(n);
    dev = std::max({dev, std::abs(e.metric[n].g11 - 1.0), std::abs(e.metric[n].g12), std::abs(e.metric[n].g22 - r * r)});
  }
  ctx.record("geometry", "euclidean_reduction", dev, 0.0, "alpha = 1, q = 0 chart against dr^2 + r^2 dtheta^2");

  ctx.record("geometry", "perturbation_bound", grid->max_relative_perturbation(),
             c.cone.q_amplitude * (1.0 + 1e-12), "|q| / r^beta against q_amplitude");

  const auto lattice = build_fiber_lattice(c.fiber_basis, c.schedule.steps.front().s);
  ctx.record("geometry", "fiber_gap_bound", torus_gap_lower_bound(lattice) - lattice.lambda1(), 0.0,
             "pi^2 / diam^2 minus lambda_1");
}

void assembly_suite(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto grid = config_grid(c);
  const auto base = assemble_base(*grid, c.bc);
  ctx.record("assembly", "base_symmetry", relative_asymmetry(base.stiffness), 1e-14);
  const auto neu = assemble_base(*grid, BoundaryCondition::neumann);
  const Vec ones = Vec::Ones(static_cast<Eigen::Index>(neu.dim));
  ctx.record("assembly", "constants_in_kernel", (neu.stiffness * ones).cwiseAbs().maxCoeff() /
                                                    std::max(neu.stiffness.coeffs().cwiseAbs().maxCoeff(), 1e-300),
             1e-12, "Neumann stiffness applied to constants");

  const auto model = first_step_model(ctx, grid, c.schedule.steps.front().epsilon, c.n_f);
  ctx.record("assembly", "total_symmetry", relative_asymmetry(model.total_op.stiffness), 1e-13);
  double minev = INFINITY;
  for (int k = 0; k < 5; ++k) {
    const Vec v = ctx.random(model.total_op.dim);
    minev = std::min(minev, v.dot(model.total_op.stiffness * v) / v.squaredNorm());
  }
  ctx.record("assembly", "total_nonnegative", -minev, 1e-12, "minus the smallest sampled Rayleigh quotient");
  ctx.record("assembly", "density_normalization", model.disint.normalization_defect(), 1e-12,
             "max_b |mean_f rho - 1|");
  ctx.record("assembly", "metric_positive", -min_metric_eigenvalue(model.perturbation), 0.0,
             "minus the smallest eigenvalue of I + E");
}

void ident_suite(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto grid = config_grid(c);
  const auto model = first_step_model(ctx, grid, c.schedule.steps.front().epsilon, c.n_f);
  const auto pair = build_identification(model);
  double iso = 0, lock = 0, inv = 0, contr = 0, proj = 0;
  const int n = ctx.options.samples;
  for (int k = 0; k < n; ++k) {
    const Vec v = ctx.random(pair.base_dim()), u = ctx.random(pair.total_dim());
    const double nv = pair.base_norm(v), nu = pair.total_norm(u);
    const Vec Iv = pair.lift(v);
    iso = std::max(iso, std::abs(pair.total_norm(Iv) - nv) / nv);
    lock = std::max(lock, std::abs(pair.total_inner(Iv, u) - pair.base_inner(v, pair.average(u))) / (nv * nu));
    inv = std::max(inv, pair.base_norm(pair.average(Iv) - v) / nv);
    contr = std::max(contr, pair.base_norm(pair.average(u)) / nu);
    if (k < 10) {
      const Vec pu = fiber_projection(pair, u);
      proj = std::max(proj, pair.total_norm(fiber_projection(pair, pu) - pu) / nu);
    }
  }
  ctx.record("ident", "isometry", iso, 1e-12, "| |Iv| - |v| | / |v|");
  ctx.record("ident", "adjoint_lock", lock, 1e-12, "|<Iv,u> - <v,Pu>| / (|v||u|)");
  ctx.record("ident", "left_inverse", inv, 1e-12, "|P I v - v| / |v|");
  ctx.record("ident", "contraction", contr - 1.0, 1e-12, "|P u| / |u| - 1");
  ctx.record("ident", "projection_idempotent", proj, 1e-11);

  double worst = 0.0;
  for (int k = 0; k < n; ++k)
    worst = std::max(worst, vertical_poincare_check(model, pair, ctx.random(pair.total_dim())).ratio);
  ctx.record("ident", "poincare", worst, 1.1, "max lhs / rhs over random u");

  // Equality case: the first fiber eigenmode at epsilon = 0 on a resolved fiber.
  const int nf = std::max(c.n_f, 12);
  const auto m0 = first_step_model(ctx, grid, 0.0, nf);
  const auto p0 = build_identification(m0);
  const Mat K = m0.fiber_op.dense_stiffness();
  const Mat M = m0.fiber_op.mass.asDiagonal();
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(K, M);
  const Vec mode = es.eigenvectors().col(1);
  const std::size_t fs = m0.fiber_size();
  Vec u(static_cast<Eigen::Index>(p0.total_dim()));
  for (std::size_t b = 0; b < p0.base_dim(); ++b)
    u.segment(static_cast<Eigen::Index>(b * fs), static_cast<Eigen::Index>(fs)) = (1.0 + 0.1 * b) * mode;
  const double eq = vertical_poincare_check(m0, p0, u).ratio;
  ctx.record("ident", "poincare_equality", std::abs(eq - 1.0), 0.05, "ratio " + std::to_string(eq));
}

void heat_suite(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto grid = config_grid(c);
  for (auto bc : {c.bc, c.bc == BoundaryCondition::dirichlet ? BoundaryCondition::neumann : BoundaryCondition::dirichlet}) {
    const std::string tag = std::string("_") + to_string(bc);
    const auto op = assemble_base(*grid, bc);
    const auto engine = build_engine(op, op.dim <= std::max<std::size_t>(c.dense_cap, 3000) ? EngineMode::dense_spectral
                                                                                           : EngineMode::krylov,
                                     std::max<std::size_t>(c.dense_cap, 3000), c.krylov);
    double smooth = 0.0, contr = 0.0, neg = 0.0;
    for (int k = 0; k < 50; ++k) {
      const Vec v = ctx.random(op.dim);
      const double sigma = std::pow(10.0, ctx.uniform(-3.0, 0.0));
      const Vec w = engine.apply(sigma, v);
      const double nv2 = op.inner(v, v);
      smooth = std::max(smooth, dirichlet_energy(op, w) * sigma / nv2);
      contr = std::max(contr, op.norm(w) / std::sqrt(nv2));
      const Vec pos = v.cwiseAbs();
      neg = std::max(neg, -engine.apply(sigma, pos).minCoeff() / pos.maxCoeff());
    }
    ctx.record("heat", "smoothing" + tag, smooth, 1.0 / (2.0 * std::exp(1.0)) + 1e-6, "max sigma E[e^{-sigma H} v] / |v|^2");
    ctx.record("heat", "contraction" + tag, contr - 1.0, 1e-10);
    ctx.record("heat", "positivity" + tag, neg, 1e-9);
    if (engine.mode() != EngineMode::dense_spectral) continue;
    const double tau = c.taus.front();
    const auto kern = kernel_matrix(engine, tau);
    ctx.record("heat", "kernel_symmetry" + tag, kern.symmetry_defect(), 1e-10);
    const Vec v = ctx.random(op.dim);
    const double t1 = c.taus.front(), t2 = c.taus.back();
    const Vec a = engine.apply(t1 + t2, v), b = engine.apply(t1, engine.apply(t2, v));
    ctx.record("heat", "semigroup" + tag, op.norm(a - b) / op.norm(v), 1e-10);
    if (bc == BoundaryCondition::neumann)
      ctx.record("heat", "row_sums_neumann", (kern.row_mass_sums().array() - 1.0).abs().maxCoeff(), 1e-8,
                 "max |sum_j K_ij m_j - 1|");
  }
}

void cone_suite(Ctx& ctx) {
  const auto& c = ctx.config;
  ConeKernelParams plane;
  plane.alpha = 1.0;
  double worst = 0.0;
  for (double tau : {0.01, 0.1, 1.0}) {
    for (int k = 0; k < 200; ++k) {
      const double r = ctx.uniform(0.05, 1.0), rp = ctx.uniform(0.05, 1.0);
      const double th = ctx.uniform(0.0, 2 * kPi), thp = ctx.uniform(0.0, 2 * kPi);
      const double d2 = r * r + rp * rp - 2 * r * rp * std::cos(th - thp);
      const double ref = std::exp(-d2 / (4 * tau)) / (4 * kPi * tau);
      if (ref < 1e-250) continue;
      worst = std::max(worst, std::abs(cone_kernel(plane, r, th, rp, thp, tau) - ref) / ref);
    }
  }
  ctx.record("cone", "plane_reduction", worst, 1e-10, "alpha = 1 against the Euclidean Gaussian");

  ConeKernelParams cp;
  cp.alpha = c.cone.alpha;
  double asym = 0.0, per = 0.0;
  for (int k = 0; k < 50; ++k) {
    const double r = ctx.uniform(0.05, c.cone.r0), rp = ctx.uniform(0.05, c.cone.r0);
    const double th = ctx.uniform(0.0, 2 * kPi), thp = ctx.uniform(0.0, 2 * kPi);
    const double tau = c.taus[static_cast<std::size_t>(k) % c.taus.size()];
    const double a = cone_kernel(cp, r, th, rp, thp, tau);
    asym = std::max(asym, std::abs(a - cone_kernel(cp, rp, thp, r, th, tau)) / a);
    per = std::max(per, std::abs(a - cone_kernel(cp, r, th + 2 * kPi, rp, thp, tau)) / a);
  }
  ctx.record("cone", "symmetry", asym, 1e-10);
  ctx.record("cone", "periodicity", per, 1e-10);

  std::vector<ConePoint> pts;
  for (int k = 0; k < 8; ++k) pts.push_back({c.cone.r0 * (0.1 + 0.1 * k), 2 * kPi * k / 8.0});
  const auto g = verify_gaussian_bound(cp, pts, c.taus);
  ctx.record("cone", "gaussian_bound", g.holds ? 0.0 : 1.0, 0.0,
             "C = " + std::to_string(g.C) + ", c = " + std::to_string(g.c));
  ctx.record("cone", "positivity", -g.min_kernel, 0.0);
}

void renorm_suite(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto setup = build_base_setup(c);
  const auto& grid = *setup.grid;
  double part = 0.0, inner_c = 0.0;
  for (double rho : c.absolute_rhos()) {
    const auto sp = split_test_function(setup.phi, grid, CutoffProfile{c.profile_order, rho});
    part = std::max(part, (sp.outer + sp.inner - setup.phi).cwiseAbs().maxCoeff());
    inner_c = std::max(inner_c, sp.inner_constant);
  }
  ctx.record("renorm", "partition", part, 1e-14, "max |outer + inner - Phi|");
  ctx.record("renorm", "inner_scaling", inner_c, 1.05 * std::sqrt(kPi * c.cone.alpha),
             "|Phi^{<rho}|_2 / (rho |Phi|_inf)");

  const auto tr = renormalized_trace(*setup.engine, setup.cone, grid, setup.phi, setup.psi, c.taus.front(),
                                     c.profile_order, c.chi_radius * c.cone.r0, c.absolute_rhos(), c.cone.beta);
  double nonfinite = 0.0;
  for (double v : tr.values)
    if (!std::isfinite(v)) nonfinite += 1.0;
  if (!std::isfinite(tr.extrapolation.limit)) nonfinite += 1.0;
  ctx.record("renorm", "finite_trace", nonfinite, 0.0, "flags: " + tr.extrapolation.flags());
}

}  // namespace

const std::vector<std::string>& invariant_modules() {
  static const std::vector<std::string> m{"geometry", "assembly", "ident", "heat", "cone", "renorm"};
  return m;
}

InvariantSuite check_invariants(const ExperimentConfig& config, const InvariantOptions& options,
                                const ProgressFn& progress) {
  config.validate();
  for (const auto& m : options.modules)
    if (std::find(invariant_modules().begin(), invariant_modules().end(), m) == invariant_modules().end())
      throw ConfigError("unknown invariant module '" + m + "'");
  require(options.samples >= 1, "invariant sample count must be positive");
  InvariantSuite suite;
  Ctx ctx{config, options, progress, suite, std::mt19937_64(config.seed)};
  auto selected = [&](const std::string& m) {
    return options.modules.empty() || std::find(options.modules.begin(), options.modules.end(), m) != options.modules.end();
  };
  if (selected("geometry")) geometry_suite(ctx);
  if (selected("assembly")) assembly_suite(ctx);
  if (selected("ident")) ident_suite(ctx);
  if (selected("heat")) heat_suite(ctx);
  if (selected("cone")) cone_suite(ctx);
  if (selected("renorm")) renorm_suite(ctx);
  return suite;
}

std::string invariant_table(const InvariantSuite& suite) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-34s %-5s %12s %12s  %s\n", "invariant", "", "value", "threshold", "detail");
  out += line;
  for (const auto& r : suite.results) {
    std::snprintf(line, sizeof line, "%-34s %-5s %12.4e %12.4e  %s\n", r.id.c_str(), r.pass ? "pass" : "FAIL", r.value,
                  r.threshold, r.detail.c_str());
    out += line;
  }
  return out;
}

}  // namespace collapse_heat
