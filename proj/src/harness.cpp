#include "collapse_heat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

namespace collapse_heat {

namespace {

double bump4(double u) {
  if (u >= 1.0) return 0.0;
  const double w = 1.0 - u * u;
  return w * w * w * w;
}

Vec to_dofs(const DiscreteOperator& op, const Vec& node_values) {
  require(static_cast<std::size_t>(node_values.size()) == op.grid_nodes, "vector does not live on the base grid");
  Vec v(static_cast<Eigen::Index>(op.dim));
  for (std::size_t d = 0; d < op.dim; ++d)
    v[static_cast<Eigen::Index>(d)] = node_values[static_cast<Eigen::Index>(op.dof_to_node[d])];
  return v;
}

bool is_zero(const Vec& v) { return v.size() == 0 || v.cwiseAbs().maxCoeff() == 0.0; }

// Least-squares slope and r^2 of log y against log x (positive entries only).
void loglog_fit(const std::vector<double>& x, const std::vector<double>& y, ChannelFit& fit) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0 && y[i] > 0.0) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  fit.points = static_cast<int>(lx.size());
  if (lx.size() < 2) return;
  const double n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx <= 0.0) return;
  fit.rate = sxy / sxx;
  fit.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
}

template <class F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const std::size_t nt = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(nt);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < nt; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += nt) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

ConeKernelParams cone_params(const ExperimentConfig& c) {
  ConeKernelParams k;
  k.alpha = c.cone.alpha;
  return k;
}

void report(const ProgressFn& progress, const std::string& msg) {
  if (progress) progress(msg);
}

// Renormalized values on a base setup: out[rho][tau].
std::vector<std::vector<double>> renormalized_table(const BaseSetup& b, const ExperimentConfig& c,
                                                    const std::vector<double>& rhos) {
  const Vec chi = tip_cutoff(*b.grid, c.chi_radius * c.cone.r0, c.profile_order);
  std::vector<std::vector<double>> out(rhos.size(), std::vector<double>(c.taus.size()));
  parallel_for(rhos.size(), c.threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < c.taus.size(); ++j)
      out[i][j] = rho_renormalized_pairing(*b.engine, b.cone, *b.grid, b.phi, b.psi, c.taus[j],
                                           CutoffProfile{c.profile_order, rhos[i]}, chi);
  });
  return out;
}

// Longest default sequence whose smallest radius stays resolvable.
std::vector<double> resolvable_rhos(const ExperimentConfig& c, int max_count) {
  int n = max_count;
  while (n > 4 && 0.25 * c.cone.r0 * std::ldexp(1.0, -(n - 1)) <= 2.5 * c.r_min) --n;
  return default_rho_sequence(c.cone.r0, n);
}

std::size_t total_dim(const ExperimentConfig& c) {
  const std::size_t nb = static_cast<std::size_t>(c.n_r) * static_cast<std::size_t>(c.n_theta);
  return nb * static_cast<std::size_t>(c.n_f) * static_cast<std::size_t>(c.n_f);
}

}  // namespace

void TestFunctionSpec::validate() const {
  require(family == "radial_bump" || family == "angular_bump", "unknown test function family '" + family + "'");
  require(std::isfinite(amplitude), "test function amplitude must be finite");
  require(width > 0.0, "test function width must be positive");
  require(center_r >= 0.0, "test function center radius must be nonnegative");
  require(mode >= 0, "test function mode must be nonnegative");
  require(std::abs(modulation) < 1.0, "test function modulation must lie in (-1, 1)");
}

Vec sample_test_function(const TestFunctionSpec& spec, const BaseGrid& grid) {
  spec.validate();
  require(grid.kind == GridKind::polar_wedge, "test functions live on cone charts");
  Vec v(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t b = 0; b < grid.size(); ++b) {
    const double r = grid.radius(b), th = grid.angle(b);
    double f;
    if (spec.family == "radial_bump") {
      f = bump4(r / spec.width) * (1.0 + spec.modulation * std::cos(spec.mode * th));
    } else {
      f = bump4(cone_distance(r, th, spec.center_r, spec.center_theta, grid.cone.alpha) / spec.width);
    }
    v[static_cast<Eigen::Index>(b)] = spec.amplitude * f;
  }
  return v;
}

void ExperimentConfig::validate() const {
  cone.validate();
  require(n_r >= 3 && n_theta >= 3, "base grid needs at least 3 x 3 nodes");
  require(r_min > 0.0 && r_min < 0.1 * cone.r0, "r_min must lie in (0, r0 / 10)");
  require(radial_grading >= 1.0, "radial grading must be >= 1");
  require(std::abs(fiber_basis.determinant()) > 1e-12, "fiber basis is degenerate");
  if (n_f < 6) throw ConfigError("fiber grid needs at least 6 nodes per period (n_f >= 6)");
  schedule.validate();
  require(fiber_coupling >= 0.0, "fiber coupling must be nonnegative");
  require(n_modes >= 1, "perturbation needs at least one mode");
  require(!taus.empty(), "at least one tau is required");
  for (std::size_t k = 0; k < taus.size(); ++k) {
    require(taus[k] > 0.0 && std::isfinite(taus[k]), "taus must be positive");
    if (k > 0) require(taus[k] > taus[k - 1], "taus must be strictly increasing");
  }
  require(rhos.size() >= 2, "at least two rho values are required");
  for (std::size_t k = 0; k < rhos.size(); ++k) {
    require(rhos[k] > 0.0 && rhos[k] < 1.0, "rho values (units of r0) must lie in (0, 1)");
    if (k > 0) require(rhos[k] < rhos[k - 1], "rho values must be strictly decreasing");
  }
  if (!(rhos.back() * cone.r0 > 2.0 * r_min))
    throw ConfigError("smallest rho is not resolved by the grid (needs rho > 2 r_min)");
  phi.validate();
  psi.validate();
  require(krylov.max_subspace >= 2 && krylov.tolerance > 0.0 && krylov.max_substeps >= 1, "invalid Krylov parameters");
  require(profile_order >= 1 && profile_order % 2 == 1, "profile order must be odd and positive");
  require(chi_radius > 0.0, "chi radius must be positive");
  require(safety >= 1.0, "safety factor must be >= 1");
  require(threads >= 1, "threads must be >= 1");
}

std::vector<double> ExperimentConfig::absolute_rhos() const {
  std::vector<double> r;
  for (double x : rhos) r.push_back(x * cone.r0);
  return r;
}

double total_pairing(const FibrationModel& model, const IdentificationPair& pair, const HeatEngine& engine,
                     const Vec& Phi, const Vec& Psi, double tau) {
  (void)model;
  if (is_zero(Phi) || is_zero(Psi)) return 0.0;
  return pair.total_inner(pair.lift(Phi), engine.apply(tau, pair.lift(Psi)));
}

BaseSetup build_base_setup(const ExperimentConfig& config, int refine) {
  require(refine == 1 || refine == 2, "refine must be 1 or 2");
  const int nr = refine == 1 ? config.n_r : 2 * config.n_r - 1;
  const int nt = config.n_theta * refine;
  BaseSetup s;
  auto grid = std::make_shared<BaseGrid>(build_cone_chart(config.cone, nr, nt, config.r_min,
                                                          ConeChartOptions{config.radial_grading, config.cap_at_puncture}));
  auto op = std::make_shared<DiscreteOperator>(assemble_base(*grid, config.bc));
  const EngineMode mode = op->dim <= config.dense_cap ? EngineMode::dense_spectral : EngineMode::krylov;
  s.engine = std::make_shared<HeatEngine>(op, mode, config.dense_cap, config.krylov);
  s.grid = grid;
  s.op = op;
  s.cone = cone_params(config);
  s.phi = sample_test_function(config.phi, *grid);
  s.psi = sample_test_function(config.psi, *grid);
  return s;
}

double discretization_floor(const ExperimentConfig& config) {
  config.validate();
  const auto rhos = config.absolute_rhos();
  const auto coarse = renormalized_table(build_base_setup(config, 1), config, rhos);
  const auto fine = renormalized_table(build_base_setup(config, 2), config, rhos);
  double f = 0.0;
  for (std::size_t i = 0; i < rhos.size(); ++i)
    for (std::size_t j = 0; j < config.taus.size(); ++j) f = std::max(f, std::abs(coarse[i][j] - fine[i][j]));
  return f;
}

BookkeepingReport run_iterated_limit(const ExperimentConfig& config, const ProgressFn& progress,
                                     std::optional<double> floor_in) {
  config.validate();
  BookkeepingReport rep;
  rep.config_name = config.name;
  const auto rhos = config.absolute_rhos();
  const auto& taus = config.taus;
  const std::size_t nrho = rhos.size(), ntau = taus.size();
  const double beta = config.cone.beta;

  report(progress, "base setup");
  const BaseSetup base = build_base_setup(config);
  const BaseGrid& grid = *base.grid;
  const DiscreteOperator& bop = *base.op;
  rep.floor = 0.0;
  if (floor_in) {
    require(*floor_in >= 0.0 && std::isfinite(*floor_in), "precomputed floor must be finite and nonnegative");
    rep.floor = *floor_in;
  } else if (config.refine_floor) {
    report(progress, "discretization floor (h, h/2)");
    rep.floor = discretization_floor(config);
  }
  const Vec chi = tip_cutoff(grid, config.chi_radius * config.cone.r0, config.profile_order);

  // Base-side pieces per rho.
  struct RhoData {
    Vec phi_out, phi_in, psi_out, psi_in;  // dofs
    double phi_in_l2 = 0.0, psi_in_l2 = 0.0;
    std::vector<double> b_oo, b_ii, c_ii;
  };
  std::vector<RhoData> rd(nrho);
  report(progress, "base and cone pairings");
  parallel_for(nrho, config.threads, [&](std::size_t i) {
    const CutoffProfile prof{config.profile_order, rhos[i]};
    const auto sp = split_test_function(base.phi, grid, prof);
    const auto sq = split_test_function(base.psi, grid, prof);
    RhoData& d = rd[i];
    d.phi_out = to_dofs(bop, sp.outer);
    d.phi_in = to_dofs(bop, sp.inner);
    d.psi_out = to_dofs(bop, sq.outer);
    d.psi_in = to_dofs(bop, sq.inner);
    d.phi_in_l2 = sp.inner_l2;
    d.psi_in_l2 = sq.inner_l2;
    d.b_oo.assign(ntau, 0.0);
    d.b_ii.assign(ntau, 0.0);
    d.c_ii.assign(ntau, 0.0);
    if (!is_zero(d.psi_out)) {
      const auto h = base.engine->apply_many(taus, d.psi_out);
      for (std::size_t j = 0; j < ntau; ++j) d.b_oo[j] = bop.inner(d.phi_out, h[j]);
    }
    if (!is_zero(d.psi_in) && !is_zero(d.phi_in)) {
      const auto h = base.engine->apply_many(taus, d.psi_in);
      for (std::size_t j = 0; j < ntau; ++j) {
        d.b_ii[j] = bop.inner(d.phi_in, h[j]);
        d.c_ii[j] = cone_pairing(base.cone, grid, sp.inner, sq.inner, taus[j], chi);
      }
    }
  });

  const Vec phi_d = to_dofs(bop, base.phi), psi_d = to_dofs(bop, base.psi);
  const double phi_l2 = bop.norm(phi_d), psi_l2 = bop.norm(psi_d);
  const double numeric_floor = 10.0 * config.krylov.tolerance * std::max(phi_l2 * psi_l2, 1e-300);

  const auto& steps = config.schedule.steps;
  int completed = 0;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const auto& st = steps[k];
    if (total_dim(config) > config.max_total_dim) {
      std::ostringstream os;
      os << "step " << k << " skipped: total dimension " << total_dim(config) << " exceeds cap " << config.max_total_dim;
      rep.notes.push_back(os.str());
      rep.partial = true;
      break;
    }
    {
      std::ostringstream os;
      os << "step " << k << " s=" << st.s << " eps=" << st.epsilon;
      report(progress, os.str());
    }
    const FiberLattice lattice = build_fiber_lattice(config.fiber_basis, st.s);
    const FibrationModel model =
        assemble_total(base.grid, lattice, config.n_f,
                       PerturbationField{st.epsilon, config.fiber_coupling, config.n_modes, config.seed + k},
                       config.bc, TotalAssemblyOptions{config.max_total_dim, false});
    const IdentificationPair pair(model);
    const EngineMode mode = model.total_op.dim <= config.dense_cap ? EngineMode::dense_spectral : EngineMode::krylov;
    const HeatEngine engine = build_total_engine(model, mode, config.dense_cap, config.krylov);
    const std::size_t tdim = model.total_op.dim;

    std::vector<std::vector<CellRecord>> cells(nrho);
    parallel_for(nrho, config.threads, [&](std::size_t i) {
      const RhoData& d = rd[i];
      const Vec lpo = pair.lift(d.phi_out), lpi = pair.lift(d.phi_in);
      std::vector<Vec> to(ntau, Vec::Zero(tdim)), ti(ntau, Vec::Zero(tdim));
      if (!is_zero(d.psi_out)) to = engine.apply_many(taus, pair.lift(d.psi_out));
      if (!is_zero(d.psi_in)) ti = engine.apply_many(taus, pair.lift(d.psi_in));
      for (std::size_t j = 0; j < ntau; ++j) {
        const double koo = pair.total_inner(lpo, to[j]);
        const double koi = pair.total_inner(lpo, ti[j]);
        const double kio = pair.total_inner(lpi, to[j]);
        const double kii = pair.total_inner(lpi, ti[j]);
        CellRecord c;
        c.step = static_cast<int>(k);
        c.s = st.s;
        c.epsilon = model.epsilon;
        c.rho = rhos[i];
        c.tau = taus[j];
        c.total = koo + koi + kio + kii;
        c.target = d.b_oo[j] + d.c_ii[j];
        c.discrepancy = std::abs(c.total - c.target);
        c.interior = std::abs(koo - d.b_oo[j]) + std::abs(kii - d.b_ii[j]);
        c.mixed = std::abs(koi) + std::abs(kio);
        c.mixed_ceiling = 2.01 * std::max(phi_l2 * d.psi_in_l2, psi_l2 * d.phi_in_l2);
        c.edge = std::abs(d.b_ii[j] - d.c_ii[j]);
        const Vec avg = pair.average(Vec(to[j] + ti[j]));
        c.bilinearization_gap = std::abs(bop.inner(phi_d, avg) - c.total) / std::max(phi_l2 * psi_l2, 1e-300);
        cells[i].push_back(c);
      }
    });
    for (auto& v : cells)
      for (auto& c : v) rep.records.push_back(c);
    ++completed;
  }
  if (completed == 0) {
    rep.pass = false;
    rep.blamed = "resource";
    rep.notes.push_back("no collapse step fits within the dimension cap");
    return rep;
  }

  // Channel fits.
  rep.interior.name = "interior";
  rep.mixed.name = "mixed";
  rep.edge.name = "edge";
  std::vector<double> xe, ye, xm, ym, xg, yg;
  for (const auto& c : rep.records) {
    if (c.epsilon > 0.0) rep.interior.constant = std::max(rep.interior.constant, c.interior / c.epsilon);
    rep.mixed.constant = std::max(rep.mixed.constant, c.mixed / c.rho);
    rep.edge.constant = std::max(rep.edge.constant, c.edge / std::pow(c.rho, 4.0 + beta));
    xe.push_back(c.epsilon);
    ye.push_back(c.interior);
    xm.push_back(c.rho);
    ym.push_back(c.mixed);
    xg.push_back(c.rho);
    yg.push_back(c.edge);
    rep.max_bilinearization_gap = std::max(rep.max_bilinearization_gap, c.bilinearization_gap);
    if (c.mixed > c.mixed_ceiling) rep.mixed_ceiling_ok = false;
  }
  loglog_fit(xe, ye, rep.interior);
  loglog_fit(xm, ym, rep.mixed);
  loglog_fit(xg, yg, rep.edge);

  const double floor = rep.floor + numeric_floor;
  std::size_t ok = 0;
  for (auto& c : rep.records) {
    c.estimate = rep.interior.constant * c.epsilon + rep.mixed.constant * c.rho +
                 rep.edge.constant * std::pow(c.rho, 4.0 + beta) + floor;
    c.bookkeeping_ok = c.discrepancy <= config.safety * c.estimate;
    if (c.bookkeeping_ok) ++ok;
  }
  rep.bookkeeping_fraction = static_cast<double>(ok) / static_cast<double>(rep.records.size());

  // Tail: the last two completed steps.
  const int first_tail = std::max(0, completed - 2);
  for (std::size_t i = 0; i < nrho; ++i) {
    RhoLimsup l;
    l.rho = rhos[i];
    for (const auto& c : rep.records)
      if (c.step >= first_tail && c.rho == rhos[i]) {
        l.limsup = std::max(l.limsup, c.discrepancy);
        l.interior_tail = std::max(l.interior_tail, c.interior);
      }
    rep.limsups.push_back(l);
  }
  rep.limsups_monotone = true;
  std::size_t violation = nrho;
  for (std::size_t i = 1; i < nrho; ++i) {
    const double tol = rep.limsups[i].interior_tail + floor;
    if (rep.limsups[i].limsup > rep.limsups[i - 1].limsup + tol) {
      rep.limsups_monotone = false;
      if (violation == nrho) violation = i;
    }
  }

  double head = 0.0, tail = 0.0;
  for (const auto& c : rep.records) {
    if (c.step == 0) head = std::max(head, c.interior);
    if (c.step == completed - 1) tail = std::max(tail, c.interior);
  }
  rep.interior_decays = completed < 2 || tail <= head + numeric_floor;

  rep.final_discrepancy = rep.limsups.back().limsup;
  double fin_i = 0, fin_m = 0, fin_e = 0;
  for (const auto& c : rep.records)
    if (c.step >= first_tail && c.rho == rhos.back()) {
      rep.final_estimate = std::max(rep.final_estimate, c.estimate);
      fin_i = std::max(fin_i, rep.interior.constant * c.epsilon);
      fin_m = std::max(fin_m, rep.mixed.constant * c.rho);
      fin_e = std::max(fin_e, rep.edge.constant * std::pow(c.rho, 4.0 + beta));
    }
  const bool final_ok = rep.final_discrepancy <= config.safety * rep.final_estimate;
  const bool bookkeeping_ok = rep.bookkeeping_fraction >= 0.95;

  rep.pass = !rep.partial && rep.interior_decays && rep.limsups_monotone && final_ok && bookkeeping_ok &&
             rep.mixed_ceiling_ok;
  if (rep.partial) {
    rep.blamed = "resource";
  } else if (!rep.interior_decays) {
    rep.blamed = "interior";
    rep.notes.push_back("interior channel grows along the schedule");
  } else if (!rep.limsups_monotone) {
    double m = 0, e = 0;
    for (const auto& c : rep.records)
      if (c.step >= first_tail && c.rho == rhos[violation]) {
        m = std::max(m, c.mixed);
        e = std::max(e, c.edge);
      }
    rep.blamed = m >= e ? "mixed" : "edge";
    rep.notes.push_back("limsup increases as rho decreases");
  } else if (!final_ok || !bookkeeping_ok) {
    rep.blamed = fin_i >= fin_m && fin_i >= fin_e ? "interior" : (fin_m >= fin_e ? "mixed" : "edge");
    rep.notes.push_back("discrepancy exceeds the channel budget");
  } else if (!rep.mixed_ceiling_ok) {
    rep.blamed = "mixed";
    rep.notes.push_back("mixed channel above its Cauchy-Schwarz ceiling");
  }
  return rep;
}

CorollaryTrace one_parameter_corollary(const ExperimentConfig& config, const ProgressFn& progress) {
  config.validate();
  CorollaryTrace tr;
  const BaseSetup base = build_base_setup(config);
  const auto rhos = resolvable_rhos(config, 6);
  const double beta = config.cone.beta;
  double ext_err = 0.0;
  report(progress, "extrapolated base targets");
  for (double tau : config.taus) {
    const auto t = renormalized_trace(*base.engine, base.cone, *base.grid, base.phi, base.psi, tau,
                                      config.profile_order, config.chi_radius * config.cone.r0, rhos, beta);
    tr.limits.push_back(t.extrapolation.limit);
    ext_err = std::max(ext_err, t.extrapolation.err);
  }
  tr.floor = (config.refine_floor ? discretization_floor(config) : 0.0) + ext_err;

  const double rho_lo = 2.5 * config.r_min, rho_hi = 0.25 * config.cone.r0;
  const Vec phi_d = to_dofs(*base.op, base.phi), psi_d = to_dofs(*base.op, base.psi);
  for (std::size_t k = 0; k < config.schedule.steps.size(); ++k) {
    const auto& st = config.schedule.steps[k];
    if (total_dim(config) > config.max_total_dim) break;
    {
      std::ostringstream os;
      os << "corollary step " << k << " s=" << st.s;
      report(progress, os.str());
    }
    const FiberLattice lattice = build_fiber_lattice(config.fiber_basis, st.s);
    const FibrationModel model =
        assemble_total(base.grid, lattice, config.n_f,
                       PerturbationField{st.epsilon, config.fiber_coupling, config.n_modes, config.seed + k},
                       config.bc, TotalAssemblyOptions{config.max_total_dim, false});
    const IdentificationPair pair(model);
    const EngineMode mode = model.total_op.dim <= config.dense_cap ? EngineMode::dense_spectral : EngineMode::krylov;
    const HeatEngine engine = build_total_engine(model, mode, config.dense_cap, config.krylov);
    const auto h = engine.apply_many(config.taus, pair.lift(psi_d));
    const Vec lp = pair.lift(phi_d);
    CorollaryPoint p;
    p.step = static_cast<int>(k);
    p.s = st.s;
    p.epsilon = model.epsilon;
    p.rho = model.epsilon > 0.0 ? std::clamp(std::pow(model.epsilon, 1.0 / (4.0 + beta)), rho_lo, rho_hi) : rho_lo;
    for (std::size_t j = 0; j < config.taus.size(); ++j)
      p.discrepancy = std::max(p.discrepancy, std::abs(pair.total_inner(lp, h[j]) - tr.limits[j]));
    tr.points.push_back(p);
  }
  tr.monotone = true;
  for (std::size_t k = 1; k < tr.points.size(); ++k)
    if (tr.points[k].discrepancy > tr.points[k - 1].discrepancy + tr.floor) tr.monotone = false;
  for (const auto& p : tr.points)
    if (p.discrepancy <= tr.floor) tr.floor_reached = true;
  return tr;
}

SemigroupRateStudy semigroup_rate_study(const SemigroupRateOptions& o, const ProgressFn& progress) {
  require(o.n_r >= 3 && o.n_theta >= 3 && o.n_f >= 4, "semigroup study grid too small");
  require(o.s0 > 0.0 && o.steps >= 2, "semigroup study needs s0 > 0 and at least two steps");
  require(o.sigma > 0.0 && o.tau > 0.0, "semigroup study needs positive times");
  SemigroupRateStudy st;
  ConeParams cp{0.75, 0.5, 1.0, 0.0};
  auto grid = std::make_shared<BaseGrid>(build_cone_chart(cp, o.n_r, o.n_theta, 0.05, ConeChartOptions{1.0, true}));
  const Eigen::Matrix2d basis = Eigen::Matrix2d::Identity();
  const FiberLattice l0 = build_fiber_lattice(basis, o.s0);
  const ProductShape shape{grid.get(), l0, o.n_f};
  const TensorField field = sample_perturbation(shape, PerturbationField{o.epsilon, 0.25, 3, o.seed});
  const auto bc = BoundaryCondition::dirichlet;

  const DiscreteOperator bop = assemble_base(*grid, bc);
  Vec v(static_cast<Eigen::Index>(bop.dim));
  for (std::size_t d = 0; d < bop.dim; ++d) {
    const std::size_t n = bop.dof_to_node[d];
    v[static_cast<Eigen::Index>(d)] = bump4(grid->radius(n) / 0.9) * (1.0 + 0.3 * std::cos(grid->angle(n)));
  }
  v /= bop.norm(v);

  auto measure = [&](double s, const TensorField& f, double& leak, double& defect) {
    const FibrationModel model = assemble_total(grid, build_fiber_lattice(basis, s), o.n_f, f, bc);
    const IdentificationPair pair(model);
    const HeatEngine engine =
        build_total_engine(model, EngineMode::dense_spectral, std::max<std::size_t>(model.total_op.dim, 3000));
    leak = leakage(pair, engine, o.sigma, v);
    defect = semigroup_defect(pair, engine, o.tau, o.sigma, o.power_iterations, o.seed).value;
    return model.epsilon;
  };
  double s = o.s0;
  for (int k = 0; k < o.steps; ++k, s *= 0.5) {
    std::ostringstream os;
    os << "semigroup study s=" << s;
    report(progress, os.str());
    double lk, df;
    const double eps = measure(s, field, lk, df);
    if (k == 0) st.epsilon = eps;
    st.s_values.push_back(s);
    st.leakage.push_back(lk);
    st.defect.push_back(df);
    if (k > 0) {
      st.leakage_ratios.push_back(lk / st.leakage[k - 1]);
      st.defect_ratios.push_back(df / st.defect[k - 1]);
    }
  }
  report(progress, "separable reference");
  measure(o.s0, TensorField{}, st.separable_leakage, st.separable_defect);
  return st;
}

EdgeRateStudy edge_rate_study(const ExperimentConfig& config) {
  config.validate();
  EdgeRateStudy st;
  const auto rhos = config.absolute_rhos();
  const auto coarse = renormalized_table(build_base_setup(config, 1), config, rhos);
  std::vector<std::vector<double>> fine;
  if (config.refine_floor) fine = renormalized_table(build_base_setup(config, 2), config, rhos);
  double last_change = 0.0;
  for (std::size_t i = 0; i + 1 < rhos.size(); ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < config.taus.size(); ++j) {
      const double dc = std::abs(coarse[i][j] - coarse[i + 1][j]);
      m = std::max(m, dc);
      if (!fine.empty() && i + 2 == rhos.size())
        last_change = std::max(last_change, std::abs(dc - std::abs(fine[i][j] - fine[i + 1][j])));
    }
    st.rhos.push_back(rhos[i]);
    st.max_differences.push_back(m);
  }
  ChannelFit fit;
  loglog_fit(st.rhos, st.max_differences, fit);
  st.slope = fit.rate;
  // floor of the differences themselves: their change under (h, h/2)
  st.floor = last_change;
  st.floor_reached = !fine.empty() && st.max_differences.back() <= st.floor;
  return st;
}

CutoffIndependenceReport cutoff_independence(const ExperimentConfig& config, double tau, int order2, double chi2,
                                             int n_rho) {
  config.validate();
  require(tau > 0.0, "cutoff independence: tau must be positive");
  require(n_rho >= 4, "cutoff independence needs at least 4 rho levels");
  const BaseSetup base = build_base_setup(config);
  const auto rhos = resolvable_rhos(config, n_rho);
  return cutoff_independence_test(*base.engine, base.cone, *base.grid, base.phi, base.psi, tau, config.profile_order,
                                  order2, config.chi_radius * config.cone.r0, chi2 * config.cone.r0, rhos,
                                  config.cone.beta);
}

}  // namespace collapse_heat
