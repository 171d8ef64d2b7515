// collapse_heat: command-line front end over the C API.

#include "collapse_heat/c_api.h"

#include "CLI11.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

namespace {

void print_progress(const char* msg, void*) { std::fprintf(stderr, "  %s\n", msg); }

int fail(ch_status st) {
  std::fprintf(stderr, "error: %s\n", ch_last_error());
  return ch_exit_code(st);
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

struct Common {
  std::string config;
  std::string out = "out";
  int threads = 0;
  long long seed = -1;
  std::vector<std::string> overrides;
  bool no_cache = false;
  bool quiet = false;

  std::vector<std::string> all_overrides() const {
    auto o = overrides;
    if (threads > 0) o.push_back("threads=" + std::to_string(threads));
    if (seed >= 0) o.push_back("seed=" + std::to_string(seed));
    return o;
  }
};

void add_common(CLI::App* sub, Common& c, bool config_required) {
  auto* opt = sub->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required();
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
  sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--seed", c.seed, "perturbation seed")->check(CLI::NonNegativeNumber);
  sub->add_option("--override", c.overrides, "key=value (repeatable; dotted keys)")->take_all();
  sub->add_flag("--quiet", c.quiet, "no progress output");
}

ch_run_options run_options(const Common& c) {
  ch_run_options o;
  ch_run_options_init(&o);
  o.out_dir = c.out.c_str();
  o.use_cache = c.no_cache ? 0 : 1;
  if (!c.quiet) o.progress = print_progress;
  return o;
}

int report(ch_status st, ch_result* res) {
  if (res == nullptr) return fail(st);
  std::cout << ch_result_summary(res);
  ch_result_free(res);
  return ch_exit_code(st);
}

int cmd_run(const Common& c) {
  const auto ov = c.all_overrides();
  const auto cov = c_strings(ov);
  ch_config* cfg = nullptr;
  ch_status st = ch_config_load(c.config.c_str(), cov.data(), cov.size(), &cfg);
  if (st != CH_OK) return fail(st);
  const ch_run_options o = run_options(c);
  ch_result* res = nullptr;
  st = ch_run(cfg, &o, &res);
  ch_config_free(cfg);
  return report(st, res);
}

int cmd_sweep(const Common& c) {
  const auto ov = c.all_overrides();
  const auto cov = c_strings(ov);
  const ch_run_options o = run_options(c);
  ch_result* res = nullptr;
  const ch_status st = ch_sweep(c.config.c_str(), cov.data(), cov.size(), &o, &res);
  return report(st, res);
}

int cmd_invariants(const Common& c, const std::vector<std::string>& modules, bool broken, int samples) {
  const auto ov = c.all_overrides();
  const auto cov = c_strings(ov);
  ch_config* cfg = nullptr;
  ch_status st = c.config.empty() ? ch_config_parse("{}", cov.data(), cov.size(), &cfg)
                                  : ch_config_load(c.config.c_str(), cov.data(), cov.size(), &cfg);
  if (st != CH_OK) return fail(st);
  std::string mods;
  for (const auto& m : modules) mods += (mods.empty() ? "" : ",") + m;
  char* table = nullptr;
  char* first = nullptr;
  st = ch_check_invariants(cfg, mods.c_str(), broken ? 1 : 0, samples, c.quiet ? nullptr : print_progress, nullptr,
                           &table, &first);
  ch_config_free(cfg);
  if (st != CH_OK && st != CH_VERDICT_FAIL) return fail(st);
  std::cout << table;
  if (st == CH_VERDICT_FAIL) std::cout << "FAIL: " << first << "\n";
  else std::cout << "all invariants pass\n";
  ch_string_free(table);
  ch_string_free(first);
  return ch_exit_code(st);
}

struct ConeArgs {
  double alpha = 1.0;
  double tau = 0.0;
  std::vector<std::string> points;
  int grid = 0;
  double rmax = 1.0;
  int max_terms = 0;
  std::string out;
};

int cmd_cone(const ConeArgs& a) {
  std::vector<double> pts;
  for (const auto& p : a.points) {
    double v[4];
    if (std::sscanf(p.c_str(), "%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3]) != 4) {
      std::fprintf(stderr, "error: --point expects r,theta,rp,thetap, got '%s'\n", p.c_str());
      return 2;
    }
    pts.insert(pts.end(), v, v + 4);
  }
  if (a.grid > 0) {
    // Radii r_i = rmax i / n against every (r_j, 2 pi k / n) from the ray theta = 0.
    for (int i = 1; i <= a.grid; ++i)
      for (int j = 1; j <= a.grid; ++j)
        for (int k = 0; k < a.grid; ++k) {
          const double row[4] = {a.rmax * i / a.grid, 0.0, a.rmax * j / a.grid, 2.0 * std::numbers::pi * k / a.grid};
          pts.insert(pts.end(), row, row + 4);
        }
  }
  if (pts.empty()) {
    std::fprintf(stderr, "error: give --point or --grid\n");
    return 2;
  }
  char* csv = nullptr;
  const ch_status st = ch_cone_kernel_csv(a.alpha, a.tau, a.max_terms, pts.data(), pts.size() / 4, &csv);
  if (st != CH_OK) return fail(st);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(a.out);
    f << csv;
    if (!f) {
      ch_string_free(csv);
      std::fprintf(stderr, "error: cannot write %s\n", a.out.c_str());
      return 4;
    }
  }
  ch_string_free(csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heat-flow verification under semi-flat torus-fibration collapse"};
  app.set_version_flag("--version", ch_version());
  app.require_subcommand(1);

  Common run_c, sweep_c, inv_c;
  auto* run = app.add_subcommand("run", "iterated-limit run of one config");
  add_common(run, run_c, true);
  run->add_flag("--no-cache", run_c.no_cache, "recompute the discretization floor");

  auto* sweep = app.add_subcommand("sweep", "parameter sweep (array-valued overrides are axes)");
  add_common(sweep, sweep_c, true);
  sweep->add_flag("--no-cache", sweep_c.no_cache, "recompute the discretization floor");

  std::vector<std::string> modules;
  bool broken = false;
  int samples = 100;
  auto* inv = app.add_subcommand("check-invariants", "module invariant suites");
  add_common(inv, inv_c, false);
  inv->add_option("--module", modules, "geometry, assembly, ident, heat, cone, renorm (repeatable)")
      ->delimiter(',');
  inv->add_option("--samples", samples, "random samples per check")->check(CLI::PositiveNumber);
  inv->add_flag("--debug-break-density", broken, "negative control: break the fiber density normalization");

  ConeArgs cone;
  auto* ck = app.add_subcommand("cone-kernel", "tabulate the flat-cone heat kernel as CSV");
  ck->add_option("--alpha", cone.alpha, "cone angle / 2 pi")->required();
  ck->add_option("--tau", cone.tau, "time")->required();
  ck->add_option("--point", cone.points, "r,theta,rp,thetap (repeatable)");
  ck->add_option("--grid", cone.grid, "n: tabulate an n x n x n radial/angular grid")->check(CLI::PositiveNumber);
  ck->add_option("--rmax", cone.rmax, "largest radius on the grid")->capture_default_str();
  ck->add_option("--csv", cone.out, "write CSV here instead of stdout");
  ck->add_option("--max-terms", cone.max_terms, "angular mode budget (default 2000)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*run) return cmd_run(run_c);
  if (*sweep) return cmd_sweep(sweep_c);
  if (*inv) return cmd_invariants(inv_c, modules, broken, samples);
  if (*ck) return cmd_cone(cone);
  return 2;
}
