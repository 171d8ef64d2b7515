// Acceptance run: one PASS/FAIL line per criterion, plus a manifest.
//
//   acceptance [--out DIR] [N ...]
//
// With no N every criterion runs. Exit status is 0 only if all selected pass.

#include "collapse_heat/harness.hpp"
#include "collapse_heat/io.hpp"

#include "json.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace collapse_heat;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Vec gaussian(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd;
  Vec v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = nd(rng);
  return v;
}

std::shared_ptr<const BaseGrid> config_grid(const ExperimentConfig& c, int n_r, int n_theta, double r_min) {
  return std::make_shared<BaseGrid>(
      build_cone_chart(c.cone, n_r, n_theta, r_min, ConeChartOptions{c.radial_grading, c.cap_at_puncture}));
}

FibrationModel acceptance_model(BoundaryCondition bc, double epsilon, int n_base, int n_f) {
  const ExperimentConfig c;
  const double s = c.schedule.steps.front().s;
  return assemble_total(config_grid(c, n_base, n_base, c.r_min), build_fiber_lattice(c.fiber_basis, s), n_f,
                        PerturbationField{epsilon, c.fiber_coupling, c.n_modes, c.seed}, bc);
}

// Plane heat kernel written out directly.
double plane_kernel(double r, double th, double rp, double thp, double tau) {
  const double d2 = r * r + rp * rp - 2.0 * r * rp * std::cos(th - thp);
  return std::exp(-d2 / (4.0 * tau)) / (4.0 * kPi * tau);
}

struct LineFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LineFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double my = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += e * e;
    ss_tot += (y[i] - my) * (y[i] - my);
  }
  f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

// ---------------------------------------------------------------- 1, 2, 5

Outcome identification(BoundaryCondition bc) {
  const auto model = acceptance_model(bc, 0.05, 24, 12);
  const IdentificationPair pair(model);
  std::mt19937_64 rng(101);
  double inv = 0, adj = 0, iso = 0;
  for (int k = 0; k < 100; ++k) {
    const Vec v = gaussian(rng, pair.base_dim());
    const Vec u = gaussian(rng, pair.total_dim());
    const Vec Iv = pair.lift(v);
    const double nv = pair.base_norm(v), nu = pair.total_norm(u);
    inv = std::max(inv, pair.base_norm(pair.average(Iv) - v) / nv);
    adj = std::max(adj, std::abs(pair.total_inner(Iv, u) - pair.base_inner(v, pair.average(u))) / (nv * nu));
    iso = std::max(iso, std::abs(pair.total_norm(Iv) - nv) / nv);
  }
  Outcome o;
  o.pass = inv <= 1e-12 && adj <= 1e-12 && iso <= 1e-12;
  o.detail = "dim " + std::to_string(pair.total_dim()) + ", |PIv-v| " + fmt(inv) + ", adjoint " + fmt(adj) +
             ", isometry " + fmt(iso) + " (tol 1e-12)";
  return o;
}

Outcome poincare(BoundaryCondition bc) {
  const auto model = acceptance_model(bc, 0.05, 16, 12);
  const IdentificationPair pair(model);
  // first fiber eigenmodes from an independent dense solve of the fiber form
  const Mat K = model.fiber_op.dense_stiffness();
  const Mat M = model.fiber_op.mass.asDiagonal();
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(K, M);
  const std::size_t fs = model.fiber_size();
  const auto nb = static_cast<Eigen::Index>(pair.base_dim());
  std::mt19937_64 rng(202);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    // random low fiber modes with random base profiles, plus a small rough part
    const Mat coeff = Mat::NullaryExpr(nb, 6, [&] { return std::normal_distribution<double>()(rng); });
    Vec u = 1e-2 * gaussian(rng, pair.total_dim());
    for (Eigen::Index b = 0; b < nb; ++b)
      u.segment(b * static_cast<Eigen::Index>(fs), static_cast<Eigen::Index>(fs)) +=
          es.eigenvectors().leftCols(6) * coeff.row(b).transpose();
    worst = std::max(worst, vertical_poincare_check(model, pair, u).ratio);
  }
  const Vec mode = es.eigenvectors().col(1);
  Vec u(static_cast<Eigen::Index>(pair.total_dim()));
  for (std::size_t b = 0; b < pair.base_dim(); ++b)
    u.segment(static_cast<Eigen::Index>(b * fs), static_cast<Eigen::Index>(fs)) =
        (1.0 + 0.5 * std::sin(0.37 * static_cast<double>(b))) * mode;
  const double eq = vertical_poincare_check(model, pair, u).ratio;
  Outcome o;
  o.pass = worst <= 1.1 && eq >= 0.95 && eq <= 1.05;
  o.detail = "eps " + fmt(model.epsilon) + ", max ratio " + fmt(worst) + " (<= 1.1), first fiber mode " + fmt(eq) +
             " (in [0.95, 1.05])";
  return o;
}

Outcome smoothing(BoundaryCondition bc) {
  const ExperimentConfig c;
  const auto grid = config_grid(c, c.n_r, c.n_theta, c.r_min);
  const auto op = assemble_base(*grid, bc);
  const auto engine = build_engine(op, EngineMode::dense_spectral, 3000);
  const double bound = 1.0 / (2.0 * std::exp(1.0)) + 1e-6;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> ud(-3.0, 0.5);
  double worst = 0;
  for (int k = 0; k < 50; ++k) {
    Vec v = gaussian(rng, op.dim);
    // half the samples concentrate on one eigenvector, where the bound is nearly sharp
    if (k % 2 == 1) v = engine.spectrum().eigenvectors.col(k % static_cast<int>(op.dim));
    const double sigma = std::pow(10.0, ud(rng));
    const Vec w = engine.apply(sigma, v);
    worst = std::max(worst, sigma * dirichlet_energy(op, w) / op.inner(v, v));
  }
  Outcome o;
  o.pass = worst <= bound;
  o.detail = "max sigma E / |v|^2 " + fmt(worst) + " (<= 1/(2e) + 1e-6 = " + fmt(bound) + ")";
  return o;
}

// ---------------------------------------------------------------- 3, 4

Outcome plane_reduction() {
  ConeKernelParams p;
  p.alpha = 1.0;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> ur(0.01, 2.0), ut(0.0, 2.0 * kPi);
  double worst = 0;
  for (double tau : {0.01, 0.1, 1.0})
    for (int k = 0; k < 200; ++k) {
      const double r = ur(rng), th = ut(rng), rp = ur(rng), thp = ut(rng);
      const double ref = plane_kernel(r, th, rp, thp, tau);
      if (ref < 1e-280) continue;
      worst = std::max(worst, std::abs(cone_kernel(p, r, th, rp, thp, tau) - ref) / ref);
    }
  return {worst <= 1e-10, "max relative error " + fmt(worst) + " over 600 pairs (<= 1e-10)"};
}

Outcome cone_vs_discrete() {
  ConeParams cp;
  cp.alpha = 0.75;
  cp.r0 = 2.0;
  const auto g = build_cone_chart(cp, 40, 48, 0.02, {1.0, true});
  const auto op = assemble_base(g, BoundaryCondition::dirichlet);
  const auto engine = build_engine(op, EngineMode::dense_spectral, 3000);
  const double tau = 0.1;
  const auto km = kernel_matrix(engine, tau);
  ConeKernelParams p;
  p.alpha = 0.75;
  double worst = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < op.dim; a += 3) {
    const std::size_t na = op.dof_to_node[a];
    if (g.radius(na) < 0.3 || g.radius(na) > 0.8) continue;
    for (std::size_t b = 0; b < op.dim; b += 5) {
      const std::size_t nb = op.dof_to_node[b];
      if (g.radius(nb) < 0.3 || g.radius(nb) > 0.8) continue;
      const double ser = cone_kernel(p, g.radius(na), g.angle(na), g.radius(nb), g.angle(nb), tau);
      const double disc = km.entries(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      worst = std::max(worst, std::abs(disc - ser) / ser);
      ++pairs;
    }
  }
  return {pairs > 0 && worst <= 0.02,
          "max relative gap " + fmt(worst) + " over " + std::to_string(pairs) + " interior pairs (<= 0.02)"};
}

// ---------------------------------------------------------------- 6

Outcome semigroup_rates() {
  SemigroupRateOptions o;
  const auto st = semigroup_rate_study(o);
  bool ok = st.separable_leakage <= 1e-9 && st.separable_defect <= 1e-9;
  std::string lr, dr;
  for (double r : st.leakage_ratios) {
    ok = ok && r >= 0.3 && r <= 0.7;
    lr += (lr.empty() ? "" : " ") + fmt(r);
  }
  for (double r : st.defect_ratios) {
    ok = ok && r >= 0.3 && r <= 0.7;
    dr += (dr.empty() ? "" : " ") + fmt(r);
  }
  return {ok, "leakage ratios [" + lr + "], defect ratios [" + dr + "] (in [0.3, 0.7]); separable " +
                  fmt(st.separable_leakage) + " / " + fmt(st.separable_defect) + " (<= 1e-9)"};
}

// ---------------------------------------------------------------- shared default run

const BookkeepingReport& default_report() {
  static std::optional<BookkeepingReport> rep;
  if (!rep) rep = run_iterated_limit(ExperimentConfig{});
  return *rep;
}

CollapseSchedule custom_schedule(const std::vector<double>& s, const std::vector<double>& eps) {
  CollapseSchedule sc;
  for (std::size_t k = 0; k < s.size(); ++k) sc.steps.push_back({s[k], eps[k]});
  return sc;
}

std::vector<double> per_step_interior(const BookkeepingReport& rep, std::size_t steps) {
  std::vector<double> out(steps, 0.0);
  for (const auto& r : rep.records) out[static_cast<std::size_t>(r.step)] = std::max(out[static_cast<std::size_t>(r.step)], r.interior);
  return out;
}

// ---------------------------------------------------------------- 7

Outcome interior_rate() {
  const ExperimentConfig c;
  std::vector<double> s_values;
  for (const auto& st : c.schedule.steps) s_values.push_back(st.s);
  // the schedule itself must be eps = 0.3 exp(-0.5 / s)
  double sched = 0;
  for (const auto& st : c.schedule.steps)
    sched = std::max(sched, std::abs(st.epsilon - 0.3 * std::exp(-0.5 / st.s)));
  const auto& rep = default_report();
  const auto interior = per_step_interior(rep, s_values.size());
  std::vector<double> x, y;
  for (std::size_t k = 0; k < s_values.size(); ++k) {
    x.push_back(1.0 / s_values[k]);
    y.push_back(std::log(interior[k]));
  }
  const auto fit = least_squares(x, y);

  ExperimentConfig control;
  control.name = "separable";
  control.schedule = custom_schedule(s_values, std::vector<double>(s_values.size(), 0.0));
  const auto crep = run_iterated_limit(control, {}, rep.floor);
  double ctl = 0;
  for (double v : per_step_interior(crep, s_values.size())) ctl = std::max(ctl, v);

  Outcome o;
  o.pass = sched <= 1e-15 && fit.slope < 0.0 && fit.r2 >= 0.9 && ctl <= 1e-6;
  o.detail = "slope of log interior vs 1/s " + fmt(fit.slope) + ", R^2 " + fmt(fit.r2) + " (>= 0.9); eps = 0 control " +
             fmt(ctl) + " (<= 1e-6), floor " + fmt(rep.floor);
  return o;
}

// ---------------------------------------------------------------- 8

Outcome edge_rate() {
  const ExperimentConfig c;
  const auto st = edge_rate_study(c);
  std::vector<double> x, y;
  for (std::size_t i = 0; i < st.rhos.size(); ++i) {
    x.push_back(std::log(st.rhos[i]));
    y.push_back(std::log(st.max_differences[i]));
  }
  const double slope = least_squares(x, y).slope;
  const double threshold = 4.0 - 0.75;
  Outcome o;
  o.pass = slope >= threshold || st.floor_reached;
  std::string diffs;
  for (double d : st.max_differences) diffs += (diffs.empty() ? "" : " ") + fmt(d);
  o.detail = "log-log slope " + fmt(slope) + " (>= " + fmt(threshold) + "), differences [" + diffs + "], floor " +
             fmt(st.floor) + (st.floor_reached ? " REACHED (flagged)" : " not reached");
  return o;
}

// ---------------------------------------------------------------- 9

Outcome cutoff() {
  const ExperimentConfig c;
  bool ok = true;
  double rel = 0, ratio = 0;
  for (double tau : c.taus) {
    const auto r = cutoff_independence(c, tau, 5, 0.3, 6);
    ok = ok && r.within_errors && r.max_rel_disagreement <= 1e-4;
    rel = std::max(rel, r.max_rel_disagreement);
    ratio = std::max(ratio, r.max_abs_disagreement / std::max(r.combined_error, 1e-300));
  }
  return {ok, "max relative disagreement " + fmt(rel) + " (<= 1e-4), disagreement / combined error " + fmt(ratio) +
                  " (<= 3)"};
}

// ---------------------------------------------------------------- 10

Outcome iterated_limit() {
  const auto& rep = default_report();
  bool mono = true;
  // limsups are listed from the largest rho down
  for (std::size_t i = 1; i < rep.limsups.size(); ++i)
    if (rep.limsups[i].rho < rep.limsups[i - 1].rho) mono = mono && rep.limsups[i].limsup <= rep.limsups[i - 1].limsup;
    else mono = mono && rep.limsups[i].limsup >= rep.limsups[i - 1].limsup;
  const bool within = rep.final_discrepancy <= 3.0 * rep.final_estimate;
  const auto neg = run_iterated_limit(load_config(std::string(COLLAPSE_HEAT_CONFIGS) + "/negative_control.json"));
  Outcome o;
  o.pass = mono && within && rep.pass && !neg.pass && neg.blamed == "interior";
  o.detail = std::string("default ") + (rep.pass ? "PASS" : "FAIL") + ", limsups " +
             (mono ? "non-increasing in rho" : "NOT monotone") + ", final " + fmt(rep.final_discrepancy) +
             " vs 3 x estimate " + fmt(3.0 * rep.final_estimate) + "; negative control " +
             (neg.pass ? "PASS" : "FAIL") + " blamed '" + neg.blamed + "'";
  return o;
}

// ---------------------------------------------------------------- 11

Outcome puncture() {
  const auto& rep = default_report();
  ExperimentConfig half;
  half.r_min *= 0.5;
  const auto hrep = run_iterated_limit(half, {}, rep.floor);
  if (hrep.records.size() != rep.records.size()) return {false, "record layout changed under r_min / 2"};
  double worst = 0, worst_abs = 0;
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& a = rep.records[i];
    const auto& b = hrep.records[i];
    if (a.step != b.step || a.rho != b.rho || a.tau != b.tau) return {false, "record layout changed under r_min / 2"};
    worst = std::max(worst, std::abs(a.total - b.total) / std::abs(a.total));
    worst = std::max(worst, std::abs(a.target - b.target) / std::abs(a.target));
    worst_abs = std::max({worst_abs, std::abs(a.total - b.total), std::abs(a.target - b.target)});
  }
  return {worst <= 1e-4, "max relative change of " + std::to_string(2 * rep.records.size()) +
                             " pairings under r_min / 2: " + fmt(worst) + " (<= 1e-4); absolute " + fmt(worst_abs) +
                             " against the (h, h/2) floor " + fmt(rep.floor)};
}

// ---------------------------------------------------------------- 12

Outcome neumann() {
  const auto c1 = identification(BoundaryCondition::neumann);
  const auto c2 = poincare(BoundaryCondition::neumann);
  const auto c5 = smoothing(BoundaryCondition::neumann);
  const ExperimentConfig c;
  const auto grid = config_grid(c, c.n_r, c.n_theta, c.r_min);
  const auto op = assemble_base(*grid, BoundaryCondition::neumann);
  const auto engine = build_engine(op, EngineMode::dense_spectral, 3000);
  double rows = 0;
  for (double tau : c.taus) {
    const auto km = kernel_matrix(engine, tau);
    rows = std::max(rows, (km.row_mass_sums().array() - 1.0).abs().maxCoeff());
  }
  Outcome o;
  o.pass = c1.pass && c2.pass && c5.pass && rows <= 1e-8;
  o.detail = std::string("neumann: criterion 1 ") + (c1.pass ? "pass" : "FAIL") + ", 2 " + (c2.pass ? "pass" : "FAIL") +
             ", 5 " + (c5.pass ? "pass" : "FAIL") + "; row mass sums off by " + fmt(rows) + " (<= 1e-8)";
  if (!o.pass) o.detail += " [" + c1.detail + "; " + c2.detail + "; " + c5.detail + "]";
  return o;
}

void update_manifest(const std::string& dir, const std::map<int, std::pair<bool, std::string>>& results) {
  fs::create_directories(dir);
  const fs::path path = fs::path(dir) / "manifest.json";
  nlohmann::json m;
  if (fs::exists(path)) {
    std::ifstream in(path);
    m = nlohmann::json::parse(in, nullptr, false);
    if (m.is_discarded()) m = nlohmann::json::object();
  }
  m["tool_version"] = kVersion;
  m["config_hash"] = config_hash(ExperimentConfig{});
  m["updated_utc"] = utc_now();
  for (const auto& [id, r] : results)
    m["criteria"][std::to_string(id)] = {{"status", r.first ? "pass" : "fail"}, {"detail", r.second}};
  bool all = true;
  for (const auto& [k, v] : m["criteria"].items()) all = all && v["status"] == "pass";
  m["all_pass"] = all && m["criteria"].size() == 12;
  write_text_atomic(path.string(), m.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "identification identities", 10,
       [] { return identification(BoundaryCondition::dirichlet); }},
      {2, "vertical poincare", 30, [] { return poincare(BoundaryCondition::dirichlet); }},
      {3, "cone plane reduction", 5, plane_reduction},
      {4, "cone kernel vs discrete oracle", 60, cone_vs_discrete},
      {5, "smoothing constant", 10, [] { return smoothing(BoundaryCondition::dirichlet); }},
      {6, "leakage and semigroup rates", 180, semigroup_rates},
      {7, "interior exponential rate", 300, interior_rate},
      {8, "edge remainder rate", 300, edge_rate},
      {9, "cutoff independence", 300, cutoff},
      {10, "iterated limit", 600, iterated_limit},
      {11, "puncture insensitivity", 180, puncture},
      {12, "boundary conditions", 70, neumann},
  };

  std::string out = "acceptance_out";
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else {
      try {
        selected.push_back(std::stoi(a));
      } catch (...) {
        std::fprintf(stderr, "usage: acceptance [--out DIR] [N ...]\n");
        return 2;
      }
    }
  }

  std::map<int, std::pair<bool, std::string>> results;
  bool ok = true;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    std::printf("criterion %2d %s  %s: %s [%.1f s, limit %.0f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs, c.limit_seconds, in_time ? "" : ", OVER TIME");
    std::fflush(stdout);
    results[c.id] = {pass, o.detail};
    ok = ok && pass;
  }
  if (results.empty()) {
    std::fprintf(stderr, "no such criterion\n");
    return 2;
  }
  update_manifest(out, results);
  return ok ? 0 : 1;
}
