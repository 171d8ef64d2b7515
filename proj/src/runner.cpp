#include "collapse_heat/runner.hpp"

#include "json.hpp"

#include <charconv>
#include <filesystem>

namespace collapse_heat {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void say(const RunOptions& o, const std::string& msg) {
  if (o.progress) o.progress(msg);
}

std::optional<double> cached_floor(const fs::path& entry, const std::string& hash) {
  const fs::path f = entry / "floor.json";
  if (!fs::exists(f)) return std::nullopt;
  try {
    const json j = json::parse(read_text(f.string()));
    if (j.at("tool_version") != kVersion || j.at("config_hash") != hash) return std::nullopt;
    const double v = j.at("floor").get<double>();
    if (!std::isfinite(v) || v < 0.0) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void store_cache(const fs::path& entry, const std::string& hash, const ExperimentConfig& config, double floor) {
  const auto setup = build_base_setup(config);
  write_text_atomic((entry / "geometry.json").string(), grid_to_json(*setup.grid));
  save_operator(*setup.op, (entry / "base_operator").string());
  json j;
  j["tool_version"] = kVersion;
  j["config_hash"] = hash;
  j["floor"] = floor;
  write_text_atomic((entry / "floor.json").string(), j.dump(2));
}

std::map<std::string, std::string> run_criteria(const BookkeepingReport& r) {
  auto pf = [](bool b) { return std::string(b ? "pass" : "fail"); };
  return {{"iterated_limit", pf(r.pass)},
          {"limsups_monotone", pf(r.limsups_monotone)},
          {"bookkeeping", pf(r.bookkeeping_fraction >= 0.95)},
          {"interior_decays", pf(r.interior_decays)},
          {"mixed_ceiling", pf(r.mixed_ceiling_ok)},
          {"complete", pf(!r.partial)}};
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_' || ch == '-') ? ch : '-';
  return out;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  RunManifest manifest;
  manifest.started_utc = utc_now();
  RunOutcome out;
  out.config_hash = config_hash(config);
  manifest.config_hash = out.config_hash;

  std::optional<double> floor;
  const fs::path entry = options.cache_dir.empty()
                             ? fs::path(cache_entry(options.out_dir, out.config_hash))
                             : fs::path(options.cache_dir) / (std::string("v") + kVersion) / out.config_hash;
  if (options.use_cache && config.refine_floor) {
    floor = cached_floor(entry, out.config_hash);
    out.cache_hit = floor.has_value();
    say(options, out.cache_hit ? "cache hit " + entry.string() : "cache miss " + entry.string());
  }
  if (!floor && config.refine_floor) {
    say(options, "discretization floor (h, h/2)");
    floor = discretization_floor(config);
    if (options.use_cache) store_cache(entry, out.config_hash, config, *floor);
  }
  out.report = run_iterated_limit(config, options.progress, floor);

  std::vector<RenormTrace> traces;
  // Extrapolation needs four rhos; short config lists fall back to the
  // resolvable part of the default sequence.
  std::vector<double> trace_rhos = config.absolute_rhos();
  if (trace_rhos.size() < 4) {
    trace_rhos.clear();
    for (double rho : default_rho_sequence(config.cone.r0, 6))
      if (rho > 2.5 * config.r_min) trace_rhos.push_back(rho);
  }
  if (options.write_traces && trace_rhos.size() >= 4) {
    say(options, "renormalized traces");
    const auto setup = build_base_setup(config);
    for (double tau : config.taus)
      traces.push_back(renormalized_trace(*setup.engine, setup.cone, *setup.grid, setup.phi, setup.psi, tau,
                                          config.profile_order, config.chi_radius * config.cone.r0, trace_rhos,
                                          config.cone.beta, out.report.floor));
  }
  out.outputs = write_report_bundle(options.out_dir, config, out.report, traces);
  out.outputs.push_back("manifest.json");
  manifest.outputs = out.outputs;
  manifest.criteria = run_criteria(out.report);
  manifest.finished_utc = utc_now();
  write_manifest(options.out_dir, manifest);
  return out;
}

SweepOutcome run_sweep(const std::string& config_text, const std::vector<std::string>& overrides,
                       const RunOptions& options) {
  const OverrideSet set = classify_overrides(overrides);
  SweepOutcome sw;
  if (set.axes.empty()) {
    sw.single = true;
    SweepPointOutcome p;
    p.dir = ".";
    p.run = run_experiment(parse_config(config_text, set.fixed), options);
    sw.pass = p.run.report.pass;
    sw.outputs = p.run.outputs;
    sw.points.push_back(std::move(p));
    return sw;
  }

  // Validate every point before running any of them.
  std::vector<std::vector<std::string>> grid{{}};
  for (const auto& axis : set.axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& prefix : grid)
      for (const auto& v : axis.values) {
        auto row = prefix;
        row.push_back(axis.key + "=" + v);
        next.push_back(std::move(row));
      }
    grid = std::move(next);
  }
  std::vector<ExperimentConfig> configs;
  for (const auto& assign : grid) {
    auto all = set.fixed;
    all.insert(all.end(), assign.begin(), assign.end());
    configs.push_back(parse_config(config_text, all));
  }

  RunManifest manifest;
  manifest.started_utc = utc_now();
  json points = json::array();
  std::string csv = "point,assignments,config_hash,verdict,blamed,floor,final_discrepancy,final_estimate\n";
  sw.pass = true;
  double fmin = INFINITY, fmax = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    SweepPointOutcome p;
    p.assignments = grid[i];
    std::string label = "p" + std::to_string(i);
    for (const auto& a : grid[i]) label += "_" + sanitize(a);
    p.dir = "points/" + label;
    say(options, "sweep point " + label);
    RunOptions sub = options;
    sub.out_dir = (fs::path(options.out_dir) / p.dir).string();
    // Points share the sweep's cache.
    if (sub.cache_dir.empty()) sub.cache_dir = cache_root(options.out_dir);
    p.run = run_experiment(configs[i], sub);
    const auto& r = p.run.report;
    sw.pass = sw.pass && r.pass;
    fmin = std::min(fmin, r.floor);
    fmax = std::max(fmax, r.floor);
    std::string joined;
    for (const auto& a : grid[i]) joined += (joined.empty() ? "" : ";") + a;
    points.push_back({{"dir", p.dir},
                      {"assignments", grid[i]},
                      {"config_hash", p.run.config_hash},
                      {"verdict", r.pass ? "PASS" : "FAIL"},
                      {"blamed", r.blamed},
                      {"floor", r.floor},
                      {"final_discrepancy", r.final_discrepancy},
                      {"final_estimate", r.final_estimate}});
    csv += label + ",\"" + joined + "\"," + p.run.config_hash + "," + (r.pass ? "PASS" : "FAIL") + "," + r.blamed +
           "," + fmt(r.floor) + "," + fmt(r.final_discrepancy) + "," + fmt(r.final_estimate) + "\n";
    manifest.criteria["point:" + label] = r.pass ? "pass" : "fail";
    for (const auto& o : p.run.outputs) sw.outputs.push_back(p.dir + "/" + o);
    sw.points.push_back(std::move(p));
  }

  json axes = json::array();
  for (const auto& a : set.axes) axes.push_back({{"key", a.key}, {"values", a.values}});
  json merged;
  merged["schema"] = "collapse-heat/sweep/v1";
  merged["tool_version"] = kVersion;
  merged["axes"] = axes;
  merged["fixed"] = set.fixed;
  merged["points"] = points;
  merged["verdict"] = sw.pass ? "PASS" : "FAIL";
  merged["floor_comparison"] = {{"min", fmin}, {"max", fmax}, {"ratio", fmin > 0.0 ? fmax / fmin : 0.0}};

  std::string gp = "# discretization floor and final discrepancy per sweep point\n";
  gp += "set logscale y\nset xtics rotate by -30\nset style data linespoints\n$pts << EOD\n";
  for (std::size_t i = 0; i < sw.points.size(); ++i) {
    const auto& r = sw.points[i].run.report;
    gp += std::to_string(i) + " " + fmt(std::max(r.floor, 1e-300)) + " " + fmt(std::max(r.final_discrepancy, 1e-300)) +
          " " + fmt(std::max(r.final_estimate, 1e-300)) + "\n";
  }
  gp += "EOD\nplot $pts using 1:2 title 'floor', $pts using 1:3 title 'final discrepancy', "
        "$pts using 1:4 title 'estimate'\n";

  const fs::path root(options.out_dir);
  write_text_atomic((root / "sweep.json").string(), merged.dump(2));
  write_text_atomic((root / "channels/sweep.csv").string(), csv);
  write_text_atomic((root / "plots/sweep_floor.gp").string(), gp);
  for (const char* f : {"sweep.json", "channels/sweep.csv", "plots/sweep_floor.gp", "manifest.json"})
    sw.outputs.push_back(f);
  manifest.config_hash = config_hash(parse_config(config_text, set.fixed));
  manifest.outputs = sw.outputs;
  manifest.criteria["sweep"] = sw.pass ? "pass" : "fail";
  manifest.finished_utc = utc_now();
  write_manifest(options.out_dir, manifest);
  return sw;
}

int exit_code(Status status) {
  switch (status) {
    case Status::ok: return 0;
    case Status::verdict_fail: return 1;
    case Status::config_error:
    case Status::invalid_argument: return 2;
    case Status::numeric_error: return 3;
    default: return 4;
  }
}

}  // namespace collapse_heat
