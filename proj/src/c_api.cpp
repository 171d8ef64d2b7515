#include "collapse_heat/c_api.h"

#include "collapse_heat/invariants.hpp"
#include "collapse_heat/runner.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>

using namespace collapse_heat;

struct ch_config {
  ExperimentConfig config;
};

struct ch_result {
  bool pass = false;
  std::string blamed;
  std::string summary;
  std::string json;
};

namespace {

thread_local std::string g_last_error;

ch_status to_c(Status s) { return static_cast<ch_status>(static_cast<int>(s)); }

template <class F>
ch_status guarded(F&& body) {
  try {
    g_last_error.clear();
    return body();
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_c(e.status());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CH_INTERNAL_ERROR;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CH_INTERNAL_ERROR;
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

std::vector<std::string> collect(const char* const* items, size_t n) {
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) {
    if (items[i] == nullptr) throw InvalidArgument("null override string");
    out.emplace_back(items[i]);
  }
  return out;
}

RunOptions run_options(const ch_run_options* o) {
  RunOptions r;
  if (o == nullptr) return r;
  if (o->out_dir != nullptr && *o->out_dir != '\0') r.out_dir = o->out_dir;
  if (o->cache_dir != nullptr && *o->cache_dir != '\0') r.cache_dir = o->cache_dir;
  r.use_cache = o->use_cache != 0;
  if (o->progress != nullptr) {
    const ch_progress_fn fn = o->progress;
    void* user = o->progress_user;
    r.progress = [fn, user](const std::string& m) { fn(m.c_str(), user); };
  }
  return r;
}

std::string run_summary(const RunOutcome& run, const std::string& dir) {
  const auto& r = run.report;
  std::ostringstream os;
  os << "verdict " << (r.pass ? "PASS" : "FAIL");
  if (!r.blamed.empty()) os << " (blamed: " << r.blamed << ")";
  os << "\nconfig " << r.config_name << " hash " << run.config_hash << (run.cache_hit ? " (cached floor)" : "") << "\n";
  os << "floor " << r.floor << "  final discrepancy " << r.final_discrepancy << "  estimate " << r.final_estimate
     << "\n";
  os << "limsups";
  for (const auto& l : r.limsups) os << "  rho=" << l.rho << ":" << l.limsup;
  os << (r.limsups_monotone ? "  (monotone)" : "  (not monotone)") << "\n";
  os << "bookkeeping " << r.bookkeeping_fraction << "  interior decays " << (r.interior_decays ? "yes" : "no")
     << "  mixed ceiling " << (r.mixed_ceiling_ok ? "ok" : "violated") << "\n";
  for (const auto& n : r.notes) os << "note: " << n << "\n";
  os << "outputs in " << dir << "\n";
  return os.str();
}

}  // namespace

extern "C" {

const char* ch_version(void) { return kVersion; }

const char* ch_last_error(void) { return g_last_error.c_str(); }

int ch_exit_code(ch_status status) { return exit_code(static_cast<Status>(status)); }

void ch_string_free(char* s) { std::free(s); }

ch_status ch_config_load(const char* path, const char* const* overrides, size_t n, ch_config** out) {
  return guarded([&] {
    if (path == nullptr || out == nullptr) throw InvalidArgument("null argument");
    auto cfg = std::make_unique<ch_config>();
    cfg->config = load_config(path, collect(overrides, n));
    *out = cfg.release();
    return CH_OK;
  });
}

ch_status ch_config_parse(const char* text, const char* const* overrides, size_t n, ch_config** out) {
  return guarded([&] {
    if (text == nullptr || out == nullptr) throw InvalidArgument("null argument");
    auto cfg = std::make_unique<ch_config>();
    cfg->config = parse_config(text, collect(overrides, n));
    *out = cfg.release();
    return CH_OK;
  });
}

void ch_config_free(ch_config* config) { delete config; }

ch_status ch_config_hash(const ch_config* config, char* buf, size_t buf_len) {
  return guarded([&] {
    if (config == nullptr || buf == nullptr) throw InvalidArgument("null argument");
    const std::string h = config_hash(config->config);
    if (buf_len < h.size() + 1) throw InvalidArgument("hash buffer too small");
    std::memcpy(buf, h.c_str(), h.size() + 1);
    return CH_OK;
  });
}

ch_status ch_config_json(const ch_config* config, char** out) {
  return guarded([&] {
    if (config == nullptr || out == nullptr) throw InvalidArgument("null argument");
    *out = dup(config_to_json(config->config));
    return CH_OK;
  });
}

void ch_run_options_init(ch_run_options* o) {
  if (o == nullptr) return;
  o->out_dir = "out";
  o->cache_dir = nullptr;
  o->use_cache = 1;
  o->progress = nullptr;
  o->progress_user = nullptr;
}

ch_status ch_run(const ch_config* config, const ch_run_options* options, ch_result** out) {
  return guarded([&] {
    if (config == nullptr || out == nullptr) throw InvalidArgument("null argument");
    const RunOptions ro = run_options(options);
    const auto run = run_experiment(config->config, ro);
    auto res = std::make_unique<ch_result>();
    res->pass = run.report.pass;
    res->blamed = run.report.blamed;
    res->summary = run_summary(run, ro.out_dir);
    res->json = report_to_json(run.report, run.config_hash);
    *out = res.release();
    return run.report.pass ? CH_OK : CH_VERDICT_FAIL;
  });
}

ch_status ch_sweep(const char* config_path, const char* const* overrides, size_t n, const ch_run_options* options,
                   ch_result** out) {
  return guarded([&] {
    if (config_path == nullptr || out == nullptr) throw InvalidArgument("null argument");
    const RunOptions ro = run_options(options);
    const std::string text = read_text(config_path);
    const auto sw = run_sweep(text, collect(overrides, n), ro);
    auto res = std::make_unique<ch_result>();
    res->pass = sw.pass;
    if (sw.single) {
      const auto& run = sw.points.front().run;
      res->blamed = run.report.blamed;
      res->summary = run_summary(run, ro.out_dir);
      res->json = report_to_json(run.report, run.config_hash);
    } else {
      std::ostringstream os;
      os << "sweep verdict " << (sw.pass ? "PASS" : "FAIL") << " over " << sw.points.size() << " points\n";
      double fmin = INFINITY, fmax = 0.0;
      for (const auto& p : sw.points) {
        const auto& r = p.run.report;
        os << "  " << p.dir << ": " << (r.pass ? "PASS" : "FAIL");
        if (!r.blamed.empty()) os << " (" << r.blamed << ")";
        os << "  floor " << r.floor << "  final " << r.final_discrepancy << "\n";
        fmin = std::min(fmin, r.floor);
        fmax = std::max(fmax, r.floor);
        if (!r.pass && res->blamed.empty()) res->blamed = r.blamed;
      }
      os << "floor comparison: min " << fmin << " max " << fmax << "\n";
      os << "outputs in " << ro.out_dir << "\n";
      res->summary = os.str();
      res->json = read_text(ro.out_dir + "/sweep.json");
    }
    *out = res.release();
    return sw.pass ? CH_OK : CH_VERDICT_FAIL;
  });
}

int ch_result_pass(const ch_result* r) { return r != nullptr && r->pass ? 1 : 0; }
const char* ch_result_blamed(const ch_result* r) { return r == nullptr ? "" : r->blamed.c_str(); }
const char* ch_result_summary(const ch_result* r) { return r == nullptr ? "" : r->summary.c_str(); }
const char* ch_result_json(const ch_result* r) { return r == nullptr ? "" : r->json.c_str(); }
void ch_result_free(ch_result* r) { delete r; }

ch_status ch_check_invariants(const ch_config* config, const char* modules, int break_density, int samples,
                              ch_progress_fn progress, void* user, char** table, char** first_failure) {
  return guarded([&] {
    if (config == nullptr) throw InvalidArgument("null config");
    InvariantOptions o;
    o.break_density_normalization = break_density != 0;
    if (samples > 0) o.samples = samples;
    if (modules != nullptr) {
      std::stringstream ss(modules);
      std::string m;
      while (std::getline(ss, m, ','))
        if (!m.empty()) o.modules.push_back(m);
    }
    ProgressFn fn;
    if (progress != nullptr) fn = [progress, user](const std::string& m) { progress(m.c_str(), user); };
    const auto suite = check_invariants(config->config, o, fn);
    if (table != nullptr) *table = dup(invariant_table(suite));
    if (first_failure != nullptr) *first_failure = dup(suite.first_failure);
    return suite.pass ? CH_OK : CH_VERDICT_FAIL;
  });
}

ch_status ch_cone_kernel(double alpha, double r, double theta, double rp, double thetap, double tau, double* value,
                         double* tail) {
  return guarded([&] {
    if (value == nullptr) throw InvalidArgument("null output");
    ConeKernelParams p;
    p.alpha = alpha;
    p.validate();
    require(tau > 0.0 && std::isfinite(tau), "tau must be positive");
    const auto s = cone_kernel_series(p, r, theta, rp, thetap, tau);
    const double pref = std::exp(-(r - rp) * (r - rp) / (4.0 * tau)) / (4.0 * std::acos(-1.0) * alpha * tau);
    *value = pref * s.value;
    if (tail != nullptr) *tail = pref * s.tail_bound;
    return CH_OK;
  });
}

ch_status ch_cone_kernel_csv(double alpha, double tau, int max_terms, const double* points, size_t n, char** csv) {
  return guarded([&] {
    if (csv == nullptr || (points == nullptr && n > 0)) throw InvalidArgument("null argument");
    ConeKernelParams p;
    p.alpha = alpha;
    if (max_terms > 0) p.max_terms = max_terms;
    p.validate();
    require(tau > 0.0 && std::isfinite(tau), "tau must be positive");
    std::vector<ConeTableRow> rows;
    for (size_t i = 0; i < n; ++i) {
      const double* q = points + 4 * i;
      rows.push_back({q[0], q[1], q[2], q[3], tau, cone_kernel(p, q[0], q[1], q[2], q[3], tau)});
    }
    *csv = dup(cone_table_csv(rows));
    return CH_OK;
  });
}

}  // extern "C"
