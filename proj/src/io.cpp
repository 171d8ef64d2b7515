#include "collapse_heat/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unistd.h>

namespace collapse_heat {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// --- config <-> json ---------------------------------------------------------

const char* gauge_name(Gauge g) {
  switch (g) {
    case Gauge::exponential: return "exponential";
    case Gauge::polynomial: return "polynomial";
    default: return "custom";
  }
}

json schedule_json(const CollapseSchedule& sch) {
  json j;
  j["gauge"] = gauge_name(sch.gauge);
  if (sch.gauge == Gauge::custom) {
    json steps = json::array();
    for (const auto& st : sch.steps) steps.push_back({{"s", st.s}, {"epsilon", st.epsilon}});
    j["steps"] = steps;
  } else {
    j["C"] = sch.gauge_c_amp;
    j["c"] = sch.gauge_rate;
    json s = json::array();
    for (const auto& st : sch.steps) s.push_back(st.s);
    j["s"] = s;
  }
  return j;
}

json test_function_json(const TestFunctionSpec& t) {
  return {{"family", t.family},     {"amplitude", t.amplitude}, {"width", t.width},
          {"center_r", t.center_r}, {"center_theta", t.center_theta}, {"mode", t.mode},
          {"modulation", t.modulation}};
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["schema"] = kConfigSchema;
  j["name"] = c.name;
  j["geometry"] = {{"alpha", c.cone.alpha},
                   {"beta", c.cone.beta},
                   {"r0", c.cone.r0},
                   {"q_amplitude", c.cone.q_amplitude},
                   {"n_r", c.n_r},
                   {"n_theta", c.n_theta},
                   {"r_min", c.r_min},
                   {"radial_grading", c.radial_grading},
                   {"cap_at_puncture", c.cap_at_puncture}};
  j["fiber"] = {{"basis", {{c.fiber_basis(0, 0), c.fiber_basis(0, 1)}, {c.fiber_basis(1, 0), c.fiber_basis(1, 1)}}},
                {"n_f", c.n_f}};
  j["schedule"] = schedule_json(c.schedule);
  j["perturbation"] = {{"fiber_coupling", c.fiber_coupling}, {"n_modes", c.n_modes}};
  j["taus"] = c.taus;
  j["rhos"] = c.rhos;
  j["test_functions"] = {{"phi", test_function_json(c.phi)}, {"psi", test_function_json(c.psi)}};
  j["bc"] = to_string(c.bc);
  j["numerics"] = {{"krylov_subspace", c.krylov.max_subspace},
                   {"krylov_tol", c.krylov.tolerance},
                   {"max_substeps", c.krylov.max_substeps},
                   {"shift_invert", c.krylov.shift_invert},
                   {"shift_fraction", c.krylov.shift_fraction},
                   {"dense_cap", c.dense_cap},
                   {"profile_order", c.profile_order},
                   {"chi_radius", c.chi_radius},
                   {"safety", c.safety},
                   {"refine_floor", c.refine_floor},
                   {"max_total_dim", c.max_total_dim}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

bool leaf_object(const std::string& path) { return path == "schedule"; }

const char* type_name(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return std::string(type_name(a)) == type_name(b);
}

std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

// Overlays `src` onto `dst` (the full default layout), rejecting unknown keys
// and kind mismatches.
void merge(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string p = join(path, it.key());
    if (path.empty() && it.key() == "schema") {
      if (!it->is_string() || it->get<std::string>() != kConfigSchema)
        throw ConfigError("schema: expected \"" + std::string(kConfigSchema) + "\"");
      continue;
    }
    if (!dst.contains(it.key())) throw ConfigError(p + ": unknown key");
    json& d = dst[it.key()];
    if (!same_kind(d, *it))
      throw ConfigError(p + ": expected " + type_name(d) + ", got " + type_name(*it));
    if (d.is_object() && !leaf_object(p))
      merge(d, *it, p);
    else
      d = *it;
  }
}

std::vector<std::string> split_path(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "': empty path component");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError("override with empty key");
  return parts;
}

std::pair<std::string, json> parse_override(const std::string& ov) {
  const auto eq = ov.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "': expected key=value");
  const std::string key = ov.substr(0, eq);
  const std::string text = ov.substr(eq + 1);
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) v = text;
  return {key, v};
}

// Pointer to the default-layout node at `parts`, or null.
const json* lookup(const json& root, const std::vector<std::string>& parts) {
  const json* cur = &root;
  for (const auto& p : parts) {
    if (!cur->is_object() || !cur->contains(p)) return nullptr;
    cur = &(*cur)[p];
  }
  return cur;
}

void apply_override(json& root, const std::string& key, const json& value) {
  const auto parts = split_path(key);
  json* cur = &root;
  std::string path;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    path = join(path, parts[i]);
    if (!cur->is_object() || !cur->contains(parts[i])) throw ConfigError(path + ": unknown key");
    cur = &(*cur)[parts[i]];
  }
  path = join(path, parts.back());
  if (!cur->is_object()) throw ConfigError(path + ": parent is not an object");
  // Inside the schedule the gauge parser does the checking.
  const bool in_schedule = parts.size() > 1 && parts[0] == "schedule";
  if (!in_schedule) {
    if (!cur->contains(parts.back())) throw ConfigError(path + ": unknown key");
    const json& d = (*cur)[parts.back()];
    if (!same_kind(d, value)) throw ConfigError(path + ": expected " + type_name(d) + ", got " + type_name(value));
    if (d.is_object() && !leaf_object(path)) {
      json copy = d;
      merge(copy, value, path);
      (*cur)[parts.back()] = copy;
      return;
    }
  }
  (*cur)[parts.back()] = value;
}

// Typed field readers with path-qualified errors.
struct Reader {
  const json& j;
  std::string path;

  const json& at(const std::string& key) const {
    if (!j.contains(key)) throw ConfigError(join(path, key) + ": missing");
    return j.at(key);
  }
  double num(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(join(path, key) + ": expected number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(join(path, key) + ": not finite");
    return d;
  }
  long long integer(const std::string& key, long long lo) const {
    const json& v = at(key);
    if (!v.is_number_integer()) {
      if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) return check(key, v.get<double>(), lo);
      throw ConfigError(join(path, key) + ": expected integer");
    }
    return check(key, static_cast<double>(v.get<long long>()), lo);
  }
  long long check(const std::string& key, double d, long long lo) const {
    if (d < static_cast<double>(lo)) throw ConfigError(join(path, key) + ": must be >= " + std::to_string(lo));
    return static_cast<long long>(d);
  }
  bool boolean(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(join(path, key) + ": expected boolean");
    return v.get<bool>();
  }
  std::string str(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError(join(path, key) + ": expected string");
    return v.get<std::string>();
  }
  std::vector<double> nums(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError(join(path, key) + ": expected array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(join(path, key) + "[" + std::to_string(i) + "]: expected number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }
  Reader sub(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_object()) throw ConfigError(join(path, key) + ": expected object");
    return {v, join(path, key)};
  }
  void only(std::initializer_list<const char*> keys) const {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }))
        throw ConfigError(join(path, it.key()) + ": unknown key");
    }
  }
};

CollapseSchedule read_schedule(const Reader& r) {
  const std::string gauge = r.str("gauge");
  try {
    if (gauge == "custom") {
      r.only({"gauge", "steps"});
      const json& steps = r.at("steps");
      if (!steps.is_array() || steps.empty()) throw ConfigError(r.path + ".steps: expected non-empty array");
      CollapseSchedule sch;
      for (std::size_t k = 0; k < steps.size(); ++k) {
        const std::string p = r.path + ".steps[" + std::to_string(k) + "]";
        if (!steps[k].is_object()) throw ConfigError(p + ": expected object");
        Reader s{steps[k], p};
        s.only({"s", "epsilon"});
        sch.steps.push_back({s.num("s"), s.num("epsilon")});
      }
      sch.validate();
      return sch;
    }
    if (gauge == "exponential" || gauge == "polynomial") {
      r.only({"gauge", "C", "c", "s"});
      const double C = r.num("C"), c = r.num("c");
      const auto s = r.nums("s");
      return gauge == "exponential" ? CollapseSchedule::exponential(C, c, s) : CollapseSchedule::polynomial(C, c, s);
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(r.path + ": " + e.what());
  }
  throw ConfigError(r.path + ".gauge: expected exponential, polynomial or custom");
}

TestFunctionSpec read_test_function(const Reader& r) {
  TestFunctionSpec t;
  t.family = r.str("family");
  t.amplitude = r.num("amplitude");
  t.width = r.num("width");
  t.center_r = r.num("center_r");
  t.center_theta = r.num("center_theta");
  t.mode = static_cast<int>(r.integer("mode", 0));
  t.modulation = r.num("modulation");
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(r.path + ": " + e.what());
  }
  return t;
}

ExperimentConfig config_from_full_json(const json& j) {
  Reader r{j, ""};
  ExperimentConfig c;
  c.name = r.str("name");
  const Reader g = r.sub("geometry");
  c.cone.alpha = g.num("alpha");
  c.cone.beta = g.num("beta");
  c.cone.r0 = g.num("r0");
  c.cone.q_amplitude = g.num("q_amplitude");
  c.n_r = static_cast<int>(g.integer("n_r", 2));
  c.n_theta = static_cast<int>(g.integer("n_theta", 3));
  c.r_min = g.num("r_min");
  c.radial_grading = g.num("radial_grading");
  c.cap_at_puncture = g.boolean("cap_at_puncture");

  const Reader f = r.sub("fiber");
  const json& basis = f.at("basis");
  if (!basis.is_array() || basis.size() != 2) throw ConfigError("fiber.basis: expected 2x2 array");
  for (int i = 0; i < 2; ++i) {
    if (!basis[i].is_array() || basis[i].size() != 2) throw ConfigError("fiber.basis: expected 2x2 array");
    for (int k = 0; k < 2; ++k) {
      if (!basis[i][k].is_number()) throw ConfigError("fiber.basis: expected numbers");
      c.fiber_basis(i, k) = basis[i][k].get<double>();
    }
  }
  c.n_f = static_cast<int>(f.integer("n_f", 1));

  c.schedule = read_schedule(r.sub("schedule"));
  const Reader p = r.sub("perturbation");
  c.fiber_coupling = p.num("fiber_coupling");
  c.n_modes = static_cast<int>(p.integer("n_modes", 1));
  c.taus = r.nums("taus");
  c.rhos = r.nums("rhos");
  const Reader tf = r.sub("test_functions");
  c.phi = read_test_function(tf.sub("phi"));
  c.psi = read_test_function(tf.sub("psi"));
  try {
    c.bc = parse_bc(r.str("bc"));
  } catch (const InvalidArgument&) {
    throw ConfigError("bc: expected dirichlet or neumann");
  }
  const Reader n = r.sub("numerics");
  c.krylov.max_subspace = static_cast<int>(n.integer("krylov_subspace", 2));
  c.krylov.tolerance = n.num("krylov_tol");
  c.krylov.max_substeps = static_cast<int>(n.integer("max_substeps", 1));
  c.krylov.shift_invert = n.boolean("shift_invert");
  c.krylov.shift_fraction = n.num("shift_fraction");
  c.dense_cap = static_cast<std::size_t>(n.integer("dense_cap", 0));
  c.profile_order = static_cast<int>(n.integer("profile_order", 1));
  c.chi_radius = n.num("chi_radius");
  c.safety = n.num("safety");
  c.refine_floor = n.boolean("refine_floor");
  c.max_total_dim = static_cast<std::size_t>(n.integer("max_total_dim", 1));
  c.seed = static_cast<std::uint64_t>(r.integer("seed", 0));
  c.threads = static_cast<int>(r.integer("threads", 1));
  if (!(c.krylov.tolerance > 0.0)) throw ConfigError("numerics.krylov_tol: must be positive");
  if (!(c.krylov.shift_fraction > 0.0)) throw ConfigError("numerics.shift_fraction: must be positive");
  try {
    c.cone.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// --- misc -------------------------------------------------------------------

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec to_vec(const json& a, const std::string& what) {
  if (!a.is_array()) throw ConfigError(what + ": expected array");
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

json parse_json_text(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError(what + ": malformed JSON");
  return j;
}

void check_schema(const json& j, const char* schema, const std::string& what) {
  if (!j.is_object() || !j.contains("schema") || j["schema"] != schema)
    throw ConfigError(what + ": expected schema " + schema);
}

json fit_json(const ChannelFit& f) {
  return {{"name", f.name}, {"constant", f.constant}, {"rate", f.rate}, {"r2", f.r2}, {"points", f.points}};
}

std::string csv_row(std::initializer_list<double> values) {
  std::string s;
  for (double v : values) {
    if (!s.empty()) s += ',';
    s += fmt(v);
  }
  return s + "\n";
}

}  // namespace

// --- configs ----------------------------------------------------------------

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  json full = config_json(ExperimentConfig{});
  merge(full, user, "");
  for (const auto& ov : overrides) {
    const auto [key, value] = parse_override(ov);
    apply_override(full, key, value);
  }
  return config_from_full_json(full);
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string config_to_json(const ExperimentConfig& config, int indent) { return config_json(config).dump(indent); }

std::string config_hash(const ExperimentConfig& config) {
  json j = config_json(config);
  // Results do not depend on the thread count.
  j.erase("threads");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
  return os.str();
}

OverrideSet classify_overrides(const std::vector<std::string>& overrides) {
  const json defaults = config_json(ExperimentConfig{});
  OverrideSet out;
  std::map<std::string, json> seen;
  std::vector<std::string> order;
  for (const auto& ov : overrides) {
    auto [key, value] = parse_override(ov);
    split_path(key);
    auto it = seen.find(key);
    if (it != seen.end()) {
      if (it->second != value) throw ConfigError("override key '" + key + "' given conflicting values");
      continue;
    }
    seen.emplace(key, value);
    order.push_back(key);
  }
  for (const auto& key : order) {
    const json& value = seen[key];
    const auto parts = split_path(key);
    const json* d = lookup(defaults, parts);
    bool axis = false;
    if (d != nullptr && value.is_array() && !value.empty()) {
      if (!d->is_array() && !d->is_object())
        axis = true;
      else if (d->is_array())
        axis = std::all_of(value.begin(), value.end(), [](const json& e) { return e.is_array(); });
    }
    if (axis) {
      SweepAxis a{key, {}};
      for (const auto& e : value) a.values.push_back(e.dump());
      out.axes.push_back(std::move(a));
    } else {
      out.fixed.push_back(key + "=" + value.dump());
    }
  }
  return out;
}

// --- grids and lattices -----------------------------------------------------

std::string grid_to_json(const BaseGrid& g) {
  json j;
  j["schema"] = kGeometrySchema;
  j["type"] = "base_grid";
  j["kind"] = g.kind == GridKind::polar_wedge ? "polar_wedge" : "cartesian_patch";
  j["cone"] = {{"alpha", g.cone.alpha}, {"beta", g.cone.beta}, {"r0", g.cone.r0}, {"q_amplitude", g.cone.q_amplitude}};
  j["r_min"] = g.r_min;
  j["cap_at_puncture"] = g.cap_at_puncture;
  j["coord1"] = g.coord1;
  j["coord2"] = g.coord2;
  j["quad_weights"] = g.quad_weights;
  j["cone_weights"] = g.cone_weights;
  std::vector<double> g11, g12, g22;
  for (const auto& m : g.metric) {
    g11.push_back(m.g11);
    g12.push_back(m.g12);
    g22.push_back(m.g22);
  }
  j["metric"] = {{"g11", g11}, {"g12", g12}, {"g22", g22}};
  j["volume_density"] = g.volume_density;
  return j.dump();
}

BaseGrid grid_from_json(const std::string& text) {
  const json j = parse_json_text(text, "geometry");
  check_schema(j, kGeometrySchema, "geometry");
  if (j.value("type", "") != "base_grid") throw ConfigError("geometry: not a base grid");
  BaseGrid g;
  try {
    g.kind = j.at("kind") == "polar_wedge" ? GridKind::polar_wedge : GridKind::cartesian_patch;
    const auto& c = j.at("cone");
    g.cone = {c.at("alpha").get<double>(), c.at("beta").get<double>(), c.at("r0").get<double>(),
              c.at("q_amplitude").get<double>()};
    g.r_min = j.at("r_min").get<double>();
    g.cap_at_puncture = j.at("cap_at_puncture").get<bool>();
    g.coord1 = j.at("coord1").get<std::vector<double>>();
    g.coord2 = j.at("coord2").get<std::vector<double>>();
    g.quad_weights = j.at("quad_weights").get<std::vector<double>>();
    g.cone_weights = j.at("cone_weights").get<std::vector<double>>();
    const auto g11 = j.at("metric").at("g11").get<std::vector<double>>();
    const auto g12 = j.at("metric").at("g12").get<std::vector<double>>();
    const auto g22 = j.at("metric").at("g22").get<std::vector<double>>();
    if (g11.size() != g12.size() || g11.size() != g22.size()) throw ConfigError("geometry: metric arrays differ");
    for (std::size_t i = 0; i < g11.size(); ++i) g.metric.push_back({g11[i], g12[i], g22[i]});
    g.volume_density = j.at("volume_density").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
  const std::size_t n = g.size();
  if (g.quad_weights.size() != n || g.metric.size() != n || g.volume_density.size() != n ||
      (!g.cone_weights.empty() && g.cone_weights.size() != n))
    throw ConfigError("geometry: per-node arrays do not match the grid size");
  return g;
}

std::string lattice_to_json(const FiberLattice& l) {
  json j;
  j["schema"] = kGeometrySchema;
  j["type"] = "fiber_lattice";
  j["basis"] = {{l.basis(0, 0), l.basis(0, 1)}, {l.basis(1, 0), l.basis(1, 1)}};
  j["scale"] = l.scale;
  return j.dump();
}

FiberLattice lattice_from_json(const std::string& text) {
  const json j = parse_json_text(text, "lattice");
  check_schema(j, kGeometrySchema, "lattice");
  if (j.value("type", "") != "fiber_lattice") throw ConfigError("lattice: not a fiber lattice");
  Eigen::Matrix2d b;
  try {
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k) b(i, k) = j.at("basis").at(i).at(k).get<double>();
    return build_fiber_lattice(b, j.at("scale").get<double>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("lattice: ") + e.what());
  }
}

// --- operators --------------------------------------------------------------

void save_operator(const DiscreteOperator& op, const std::string& prefix) {
  std::ostringstream t;
  t << "# " << kOperatorSchema << " stiffness\n";
  for (int r = 0; r < op.stiffness.outerSize(); ++r)
    for (SpMat::InnerIterator it(op.stiffness, r); it; ++it) t << it.row() << ' ' << it.col() << ' ' << fmt(it.value()) << '\n';
  t << "# mass\n";
  for (Eigen::Index i = 0; i < op.mass.size(); ++i) t << i << ' ' << fmt(op.mass[i]) << '\n';

  json h;
  h["schema"] = kOperatorSchema;
  h["dims"] = {op.dim, op.dim};
  h["nnz"] = op.stiffness.nonZeros();
  h["bc"] = to_string(op.bc);
  h["measured_epsilon"] = op.measured_epsilon;
  h["grid_nodes"] = op.grid_nodes;
  h["dof_to_node"] = op.dof_to_node;
  h["triplets"] = fs::path(prefix + ".triplets").filename().string();
  write_text_atomic(prefix + ".triplets", t.str());
  write_text_atomic(prefix + ".json", h.dump(2));
}

DiscreteOperator load_operator(const std::string& prefix) {
  const json h = parse_json_text(read_text(prefix + ".json"), "operator header");
  check_schema(h, kOperatorSchema, "operator header");
  DiscreteOperator op;
  try {
    op.dim = h.at("dims").at(0).get<std::size_t>();
    op.bc = parse_bc(h.at("bc").get<std::string>());
    op.measured_epsilon = h.at("measured_epsilon").get<double>();
    op.grid_nodes = h.at("grid_nodes").get<std::size_t>();
    op.dof_to_node = h.at("dof_to_node").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("operator header: ") + e.what());
  }
  std::istringstream in(read_text(prefix + ".triplets"));
  std::vector<Eigen::Triplet<double>> trip;
  op.mass = Vec::Zero(static_cast<Eigen::Index>(op.dim));
  std::string line;
  bool mass_section = false;
  const auto n = static_cast<long long>(op.dim);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      mass_section = line.find("mass") != std::string::npos;
      continue;
    }
    std::istringstream ls(line);
    long long i = 0, k = 0;
    double v = 0.0;
    if (mass_section) {
      if (!(ls >> i >> v) || i < 0 || i >= n) throw ConfigError("operator triplets: bad mass line '" + line + "'");
      op.mass[i] = v;
    } else {
      if (!(ls >> i >> k >> v) || i < 0 || k < 0 || i >= n || k >= n)
        throw ConfigError("operator triplets: bad line '" + line + "'");
      trip.emplace_back(i, k, v);
    }
  }
  op.stiffness.resize(n, n);
  op.stiffness.setFromTriplets(trip.begin(), trip.end());
  return op;
}

// --- kernels ----------------------------------------------------------------

void save_kernel(const KernelMatrix& k, const std::string& prefix) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = k.entries;
  std::string bytes(reinterpret_cast<const char*>(rm.data()), sizeof(double) * static_cast<std::size_t>(rm.size()));
  json s;
  s["schema"] = kKernelSchema;
  s["tau"] = k.tau;
  s["bc"] = to_string(k.bc);
  s["dims"] = {k.entries.rows(), k.entries.cols()};
  s["dtype"] = "float64";
  s["order"] = "row-major";
  s["byteorder"] = "little";
  s["mass"] = to_std(k.mass);
  s["labels"] = k.labels;
  s["data"] = fs::path(prefix + ".bin").filename().string();
  write_text_atomic(prefix + ".bin", bytes);
  write_text_atomic(prefix + ".json", s.dump(2));
}

KernelMatrix load_kernel(const std::string& prefix) {
  const json s = parse_json_text(read_text(prefix + ".json"), "kernel sidecar");
  check_schema(s, kKernelSchema, "kernel sidecar");
  KernelMatrix k;
  Eigen::Index rows = 0, cols = 0;
  try {
    k.tau = s.at("tau").get<double>();
    k.bc = parse_bc(s.at("bc").get<std::string>());
    rows = s.at("dims").at(0).get<Eigen::Index>();
    cols = s.at("dims").at(1).get<Eigen::Index>();
    k.mass = to_vec(s.at("mass"), "kernel mass");
    k.labels = s.at("labels").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("kernel sidecar: ") + e.what());
  }
  const std::string bytes = read_text(prefix + ".bin");
  if (bytes.size() != sizeof(double) * static_cast<std::size_t>(rows * cols))
    throw ConfigError("kernel data size does not match the sidecar dims");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  std::copy(bytes.begin(), bytes.end(), reinterpret_cast<char*>(rm.data()));
  k.entries = rm;
  return k;
}

// --- csv / json emitters ----------------------------------------------------

std::string profile_csv(const OffDiagonalProfile& p) {
  std::string s = "bin,max_abs,distance_lo,distance_hi,raw_max,count\n";
  for (std::size_t b = 0; b < p.bins.size(); ++b) {
    const auto& bin = p.bins[b];
    s += std::to_string(b) + "," + fmt(bin.max_abs) + "," + fmt(bin.distance_lo) + "," + fmt(bin.distance_hi) + "," +
         fmt(b < p.raw_max.size() ? p.raw_max[b] : bin.max_abs) + "," + std::to_string(bin.count) + "\n";
  }
  return s;
}

std::string leakage_csv(const SemigroupRateStudy& st, double sigma) {
  std::string s = "s,epsilon,tau,sigma,value,fitted_constant\n";
  for (std::size_t k = 0; k < st.leakage.size(); ++k)
    s += csv_row({st.s_values[k], st.epsilon, 0.0, sigma, st.leakage[k], st.leakage[k] / st.s_values[k]});
  return s;
}

std::string defect_csv(const SemigroupRateStudy& st, double tau, double sigma) {
  std::string s = "s,epsilon,tau,sigma,value,fitted_constant\n";
  for (std::size_t k = 0; k < st.defect.size(); ++k)
    s += csv_row({st.s_values[k], st.epsilon, tau, sigma, st.defect[k], st.defect[k] / st.s_values[k]});
  return s;
}

std::string cone_table_csv(const std::vector<ConeTableRow>& rows) {
  std::string s = "r,theta,rp,thetap,tau,K\n";
  for (const auto& r : rows) s += csv_row({r.r, r.theta, r.rp, r.thetap, r.tau, r.value});
  return s;
}

std::string renorm_trace_csv(const RenormTrace& t) {
  std::string s = "rho,outer_term,inner_term,total\n";
  for (std::size_t k = 0; k < t.rhos.size(); ++k)
    s += csv_row({t.rhos[k], t.terms[k].outer, t.terms[k].inner, t.terms[k].total()});
  return s;
}

std::string extrapolation_json(const Extrapolation& ex) {
  json j;
  j["limit"] = ex.limit;
  j["rate"] = ex.rate;
  j["err"] = ex.err;
  j["flags"] = ex.flags();
  j["extrapolated"] = ex.extrapolated();
  j["differences"] = ex.differences;
  return j.dump(2);
}

std::string report_to_json(const BookkeepingReport& rep, const std::string& hash) {
  json j;
  j["schema"] = kReportSchema;
  j["tool_version"] = kVersion;
  j["config_name"] = rep.config_name;
  j["config_hash"] = hash;
  j["verdict"] = rep.pass ? "PASS" : "FAIL";
  j["pass"] = rep.pass;
  j["partial"] = rep.partial;
  j["blamed"] = rep.blamed;
  j["floor"] = rep.floor;
  j["final_discrepancy"] = rep.final_discrepancy;
  j["final_estimate"] = rep.final_estimate;
  j["bookkeeping_fraction"] = rep.bookkeeping_fraction;
  j["limsups_monotone"] = rep.limsups_monotone;
  j["interior_decays"] = rep.interior_decays;
  j["max_bilinearization_gap"] = rep.max_bilinearization_gap;
  j["mixed_ceiling_ok"] = rep.mixed_ceiling_ok;
  j["fits"] = {{"interior", fit_json(rep.interior)}, {"mixed", fit_json(rep.mixed)}, {"edge", fit_json(rep.edge)}};
  json ls = json::array();
  for (const auto& l : rep.limsups)
    ls.push_back({{"rho", l.rho}, {"limsup", l.limsup}, {"interior_tail", l.interior_tail}});
  j["limsups"] = ls;
  json recs = json::array();
  for (const auto& r : rep.records) {
    recs.push_back({{"step", r.step},
                    {"s", r.s},
                    {"epsilon", r.epsilon},
                    {"rho", r.rho},
                    {"tau", r.tau},
                    {"total", r.total},
                    {"target", r.target},
                    {"discrepancy", r.discrepancy},
                    {"interior", r.interior},
                    {"mixed", r.mixed},
                    {"mixed_ceiling", r.mixed_ceiling},
                    {"edge", r.edge},
                    {"bilinearization_gap", r.bilinearization_gap},
                    {"estimate", r.estimate},
                    {"bookkeeping_ok", r.bookkeeping_ok}});
  }
  j["records"] = recs;
  j["notes"] = rep.notes;
  return j.dump(2);
}

// --- files ------------------------------------------------------------------

void write_text_atomic(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Status::internal_error, "cannot write " + tmp);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw Error(Status::internal_error, "write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(Status::internal_error, "cannot rename " + tmp + ": " + ec.message());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::string channel_csv(const BookkeepingReport& rep, double CellRecord::*field, const char* name) {
  std::string s = std::string("step,s,epsilon,rho,tau,") + name + "\n";
  for (const auto& r : rep.records) {
    s += std::to_string(r.step) + "," + csv_row({r.s, r.epsilon, r.rho, r.tau, r.*field});
  }
  return s;
}

std::string discrepancy_plot(const BookkeepingReport& rep) {
  std::ostringstream os;
  os << "# discrepancy against collapse scale s, max over tau, one curve per rho\n";
  os << "set logscale y\nset xlabel 's'\nset ylabel '|K_t - K^ren|'\nset key top right\n";
  std::vector<double> rhos;
  for (const auto& r : rep.records)
    if (std::find(rhos.begin(), rhos.end(), r.rho) == rhos.end()) rhos.push_back(r.rho);
  for (std::size_t k = 0; k < rhos.size(); ++k) {
    os << "$rho" << k << " << EOD\n";
    std::map<int, std::pair<double, double>> by_step;
    for (const auto& r : rep.records) {
      if (r.rho != rhos[k]) continue;
      auto& e = by_step[r.step];
      e.first = r.s;
      e.second = std::max(e.second, r.discrepancy);
    }
    for (const auto& [step, e] : by_step) os << fmt(e.first) << ' ' << fmt(e.second) << '\n';
    os << "EOD\n";
  }
  os << "floor = " << fmt(rep.floor) << "\n";
  os << "plot ";
  for (std::size_t k = 0; k < rhos.size(); ++k)
    os << "$rho" << k << " using 1:2 with linespoints title 'rho=" << fmt(rhos[k]) << "', ";
  os << "floor with lines dashtype 2 title 'floor'\n";
  return os.str();
}

std::string rate_plot(const BookkeepingReport& rep) {
  std::ostringstream os;
  os << "# channel values against their drivers with the fitted power laws\n";
  os << "set logscale xy\nset multiplot layout 1,2\n";
  os << "$interior << EOD\n";
  for (const auto& r : rep.records)
    if (r.epsilon > 0.0 && r.interior > 0.0) os << fmt(r.epsilon) << ' ' << fmt(r.interior) << '\n';
  os << "EOD\n$edge << EOD\n";
  for (const auto& r : rep.records)
    if (r.edge > 0.0) os << fmt(r.rho) << ' ' << fmt(r.edge) << '\n';
  os << "EOD\n";
  os << "set xlabel 'epsilon'\nset ylabel 'interior'\n";
  os << "plot $interior using 1:2 with points title 'interior', " << fmt(rep.interior.constant)
     << "*x with lines title 'fit C eps (rate " << fmt(rep.interior.rate) << ")'\n";
  os << "set xlabel 'rho'\nset ylabel 'edge'\n";
  os << "plot $edge using 1:2 with points title 'edge', " << fmt(rep.edge.constant)
     << "*x**4 with lines title 'fit (rate " << fmt(rep.edge.rate) << ")'\n";
  os << "unset multiplot\n";
  return os.str();
}

}  // namespace

std::vector<std::string> write_report_bundle(const std::string& out_dir, const ExperimentConfig& config,
                                             const BookkeepingReport& rep,
                                             const std::vector<RenormTrace>& traces) {
  const fs::path root(out_dir);
  std::vector<std::string> written;
  auto put = [&](const std::string& rel, const std::string& text) {
    write_text_atomic((root / rel).string(), text);
    written.push_back(rel);
  };
  put("report.json", report_to_json(rep, config_hash(config)));
  put("config.json", config_to_json(config));

  std::string recs = "step,s,epsilon,rho,tau,total,target,discrepancy,interior,mixed,mixed_ceiling,edge,"
                     "bilinearization_gap,estimate,bookkeeping_ok\n";
  for (const auto& r : rep.records) {
    std::string row = csv_row({r.s, r.epsilon, r.rho, r.tau, r.total, r.target, r.discrepancy, r.interior, r.mixed,
                               r.mixed_ceiling, r.edge, r.bilinearization_gap, r.estimate});
    row.pop_back();
    recs += std::to_string(r.step) + "," + row + "," + (r.bookkeeping_ok ? "1" : "0") + "\n";
  }
  put("channels/records.csv", recs);
  put("channels/interior.csv", channel_csv(rep, &CellRecord::interior, "interior"));
  std::string mixed = "step,s,epsilon,rho,tau,mixed,mixed_ceiling\n";
  for (const auto& r : rep.records)
    mixed += std::to_string(r.step) + "," + csv_row({r.s, r.epsilon, r.rho, r.tau, r.mixed, r.mixed_ceiling});
  put("channels/mixed.csv", mixed);
  put("channels/edge.csv", channel_csv(rep, &CellRecord::edge, "edge"));
  std::string ls = "rho,limsup,interior_tail\n";
  for (const auto& l : rep.limsups) ls += csv_row({l.rho, l.limsup, l.interior_tail});
  put("channels/limsups.csv", ls);
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const std::string tag = "tau" + std::to_string(k);
    put("channels/renorm_" + tag + ".csv", renorm_trace_csv(traces[k]));
    put("channels/extrapolation_" + tag + ".json", extrapolation_json(traces[k].extrapolation));
  }
  put("plots/discrepancy_vs_t.gp", discrepancy_plot(rep));
  put("plots/rate_fits.gp", rate_plot(rep));
  return written;
}

std::string manifest_to_json(const RunManifest& m) {
  json j;
  j["schema"] = kManifestSchema;
  j["config_hash"] = m.config_hash;
  j["tool_version"] = m.tool_version;
  j["started_utc"] = m.started_utc;
  j["finished_utc"] = m.finished_utc;
  j["outputs"] = m.outputs;
  j["criteria"] = m.criteria;
  return j.dump(2);
}

void write_manifest(const std::string& out_dir, const RunManifest& m) {
  write_text_atomic((fs::path(out_dir) / "manifest.json").string(), manifest_to_json(m));
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string cache_root(const std::string& out_dir) {
  if (const char* env = std::getenv("COLLAPSE_HEAT_CACHE"); env != nullptr && *env != '\0') return env;
  return (fs::path(out_dir) / ".cache").string();
}

std::string cache_entry(const std::string& out_dir, const std::string& hash) {
  return (fs::path(cache_root(out_dir)) / (std::string("v") + kVersion) / hash).string();
}

}  // namespace collapse_heat
