#include "doctest.h"

#include "collapse_heat/c_api.h"

#include "json.hpp"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::string kCli = COLLAPSE_HEAT_CLI;
const std::string kConfigs = COLLAPSE_HEAT_CONFIGS;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("collapse_heat_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Result {
  int code = -1;
  std::string out, err;
};

Result cli(const std::string& args, const fs::path& dir) {
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = kCli + " " + args + " > " + o.string() + " 2> " + e.string();
  const int st = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string smoke() { return kConfigs + "/smoke.json"; }

const char* kNegative =
    R"('schedule={"gauge":"custom","steps":[{"s":0.4,"epsilon":0.02},{"s":0.3,"epsilon":0.05},{"s":0.2,"epsilon":0.08}]}')";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("run writes the bundle and exits 0 on PASS") {
    const auto dir = scratch("run");
    const auto r = cli("run --quiet --config " + smoke() + " --out " + (dir / "out").string(), dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("verdict PASS") != std::string::npos);
    for (const char* f : {"report.json", "manifest.json", "channels/records.csv", "channels/interior.csv",
                          "channels/mixed.csv", "channels/edge.csv", "plots/discrepancy_vs_t.gp", "plots/rate_fits.gp"})
      CHECK(fs::exists(dir / "out" / f));
    const auto m = json::parse(slurp(dir / "out/manifest.json"));
    CHECK(m["tool_version"] == ch_version());
    CHECK(m["config_hash"].get<std::string>().size() == 16);
    CHECK(m["criteria"]["iterated_limit"] == "pass");
    CHECK(!m["started_utc"].get<std::string>().empty());
    const auto rep = json::parse(slurp(dir / "out/report.json"));
    CHECK(rep["verdict"] == "PASS");
    CHECK(rep["config_hash"] == m["config_hash"]);
  }

  TEST_CASE("same config and seed give a bitwise identical report") {
    const auto dir = scratch("determinism");
    const std::string a = (dir / "a").string(), b = (dir / "b").string();
    REQUIRE(cli("run --quiet --config " + smoke() + " --seed 7 --out " + a, dir).code == 0);
    REQUIRE(cli("run --quiet --config " + smoke() + " --seed 7 --threads 2 --no-cache --out " + b, dir).code == 0);
    CHECK(slurp(dir / "a/report.json") == slurp(dir / "b/report.json"));
    // second run in the same directory reuses the cached floor
    const auto again = cli("run --config " + smoke() + " --seed 7 --out " + a, dir);
    CHECK(again.err.find("cache hit") != std::string::npos);
    CHECK(slurp(dir / "a/report.json") == slurp(dir / "b/report.json"));
  }

  TEST_CASE("cache directory follows the environment") {
    const auto dir = scratch("cache");
    const std::string env = "COLLAPSE_HEAT_CACHE=" + (dir / "cache").string() + " ";
    const auto r = cli("run --quiet --config " + smoke() + " --out " + (dir / "out").string(), dir);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "out/.cache" / (std::string("v") + ch_version())));
    const int st = std::system((env + kCli + " run --quiet --config " + smoke() + " --out " + (dir / "out2").string() +
                                " > /dev/null")
                                   .c_str());
    CHECK(WEXITSTATUS(st) == 0);
    CHECK(fs::exists(dir / "cache" / (std::string("v") + ch_version())));
    CHECK(!fs::exists(dir / "out2/.cache"));
  }

  TEST_CASE("negative control exits 1 with interior blamed") {
    const auto dir = scratch("negative");
    const auto r = cli("run --quiet --config " + smoke() + " --override " + kNegative + " --out " + (dir / "out").string(),
                       dir);
    CHECK(r.code == 1);
    CHECK(r.out.find("blamed: interior") != std::string::npos);
    const auto rep = json::parse(slurp(dir / "out/report.json"));
    CHECK(rep["verdict"] == "FAIL");
    CHECK(rep["blamed"] == "interior");
  }

  TEST_CASE("config errors exit 2 with field paths") {
    const auto dir = scratch("config_errors");
    std::ofstream(dir / "malformed.json") << R"({"geometry": {"n_r": 4)";
    std::ofstream(dir / "typed.json") << R"({"geometry": {"n_r": "four"}})";
    std::ofstream(dir / "unknown.json") << R"({"numerics": {"tolerance": 1}})";
    auto r = cli("run --config " + (dir / "malformed.json").string() + " --out " + (dir / "o").string(), dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("malformed config") != std::string::npos);
    r = cli("run --config " + (dir / "typed.json").string() + " --out " + (dir / "o").string(), dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("geometry.n_r") != std::string::npos);
    r = cli("run --config " + (dir / "unknown.json").string() + " --out " + (dir / "o").string(), dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("numerics.tolerance: unknown key") != std::string::npos);
    r = cli("run --config " + (dir / "missing.json").string(), dir);
    CHECK(r.code == 2);
    r = cli("run", dir);
    CHECK(r.code == 2);
    r = cli("frobnicate", dir);
    CHECK(r.code == 2);
    CHECK(!fs::exists(dir / "o/report.json"));
  }

  TEST_CASE("sweep") {
    const auto dir = scratch("sweep");
    // no axes: identical to run
    REQUIRE(cli("run --quiet --config " + smoke() + " --out " + (dir / "run").string(), dir).code == 0);
    REQUIRE(cli("sweep --quiet --config " + smoke() + " --out " + (dir / "sweep0").string(), dir).code == 0);
    CHECK(slurp(dir / "run/report.json") == slurp(dir / "sweep0/report.json"));

    const auto r = cli("sweep --quiet --config " + smoke() + " --override 'fiber.n_f=[6,8]' --out " +
                           (dir / "sweep").string(),
                       dir);
    CHECK(r.code == 0);
    const auto sw = json::parse(slurp(dir / "sweep/sweep.json"));
    REQUIRE(sw["points"].size() == 2);
    for (const auto& p : sw["points"]) CHECK(fs::exists(dir / "sweep" / p["dir"].get<std::string>() / "report.json"));
    CHECK(sw["floor_comparison"]["min"].get<double>() > 0.0);
    CHECK(sw["floor_comparison"]["max"].get<double>() >= sw["floor_comparison"]["min"].get<double>());
    CHECK(fs::exists(dir / "sweep/plots/sweep_floor.gp"));
    CHECK(fs::exists(dir / "sweep/manifest.json"));

    const auto c = cli("sweep --quiet --config " + smoke() + " --override seed=3 --override seed=4 --out " +
                           (dir / "conflict").string(),
                       dir);
    CHECK(c.code == 2);
    CHECK(c.err.find("conflicting") != std::string::npos);
    // one failing point fails the sweep
    const auto f = cli("sweep --quiet --config " + smoke() + " --override 'fiber.n_f=[6,8]' --override " + kNegative +
                           " --out " + (dir / "neg").string(),
                       dir);
    CHECK(f.code == 1);
  }

  TEST_CASE("check-invariants") {
    const auto dir = scratch("invariants");
    auto r = cli("check-invariants --quiet --module ident --config " + kConfigs + "/default.json", dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("ident.adjoint_lock") != std::string::npos);
    CHECK(r.out.find("all invariants pass") != std::string::npos);
    r = cli("check-invariants --quiet --module cone --override geometry.alpha=1", dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("cone.plane_reduction") != std::string::npos);
    r = cli("check-invariants --quiet --module assembly --module ident --debug-break-density", dir);
    CHECK(r.code == 1);
    CHECK(r.out.find("FAIL: assembly.density_normalization") != std::string::npos);
    r = cli("check-invariants --quiet --module ident --debug-break-density", dir);
    CHECK(r.code == 1);
    CHECK(r.out.find("FAIL: ident.adjoint_lock") != std::string::npos);
    r = cli("check-invariants --quiet --module nonsense", dir);
    CHECK(r.code == 2);
    r = cli("check-invariants --quiet --module heat --config " + kConfigs + "/neumann.json", dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("heat.row_sums_neumann") != std::string::npos);
  }

  TEST_CASE("cone-kernel") {
    const auto dir = scratch("cone");
    auto r = cli("cone-kernel --alpha 1 --tau 0.1 --point 0.5,0,0.6,0.3", dir);
    REQUIRE(r.code == 0);
    const auto nl = r.out.find('\n');
    CHECK(r.out.substr(0, nl) == "r,theta,rp,thetap,tau,K");
    const double k = std::stod(r.out.substr(r.out.rfind(',') + 1));
    const double d2 = 0.25 + 0.36 - 2 * 0.3 * std::cos(0.3);
    const double gauss = std::exp(-d2 / 0.4) / (4 * std::numbers::pi * 0.1);
    CHECK(std::abs(k - gauss) <= 1e-12 * gauss);

    r = cli("cone-kernel --alpha 0.75 --tau 0.1 --grid 4 --csv " + (dir / "k.csv").string(), dir);
    CHECK(r.code == 0);
    std::ifstream in(dir / "k.csv");
    int lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == 1 + 4 * 4 * 4);

    r = cli("cone-kernel --alpha 1 --tau 0 --point 0.5,0,0.6,0.3", dir);
    CHECK(r.code == 2);
    r = cli("cone-kernel --alpha 1 --tau 0.01 --point 1,0,1,1 --max-terms 5", dir);
    CHECK(r.code == 3);
    CHECK(r.err.find("tail estimate") != std::string::npos);
    r = cli("cone-kernel --alpha 1 --tau 0.1", dir);
    CHECK(r.code == 2);
  }
}

TEST_SUITE("c api") {
  TEST_CASE("handles, hashes and errors") {
    ch_config* a = nullptr;
    ch_config* b = nullptr;
    REQUIRE(ch_config_parse(R"({"seed": 2, "geometry": {"n_r": 9, "alpha": 0.5}})", nullptr, 0, &a) == CH_OK);
    REQUIRE(ch_config_parse(R"({"geometry": {"alpha": 0.5, "n_r": 9}, "seed": 2})", nullptr, 0, &b) == CH_OK);
    char ha[17], hb[17];
    CHECK(ch_config_hash(a, ha, sizeof ha) == CH_OK);
    CHECK(ch_config_hash(b, hb, sizeof hb) == CH_OK);
    CHECK(std::string(ha) == std::string(hb));
    char small[4];
    CHECK(ch_config_hash(a, small, sizeof small) == CH_INVALID_ARGUMENT);
    char* text = nullptr;
    CHECK(ch_config_json(a, &text) == CH_OK);
    CHECK(std::string(text).find("\"n_r\": 9") != std::string::npos);
    ch_string_free(text);
    ch_config_free(a);
    ch_config_free(b);

    ch_config* c = nullptr;
    const char* ov[] = {"geometry.n_r=oops"};
    CHECK(ch_config_parse("{}", ov, 1, &c) == CH_CONFIG_ERROR);
    CHECK(c == nullptr);
    CHECK(std::string(ch_last_error()).find("geometry.n_r") != std::string::npos);
    CHECK(ch_config_parse(nullptr, nullptr, 0, &c) == CH_INVALID_ARGUMENT);
    CHECK(ch_exit_code(CH_OK) == 0);
    CHECK(ch_exit_code(CH_VERDICT_FAIL) == 1);
    CHECK(ch_exit_code(CH_CONFIG_ERROR) == 2);
    CHECK(ch_exit_code(CH_INVALID_ARGUMENT) == 2);
    CHECK(ch_exit_code(CH_NUMERIC_ERROR) == 3);
  }

  TEST_CASE("cone kernel through the C interface") {
    double v = 0.0, tail = -1.0;
    CHECK(ch_cone_kernel(1.0, 0.5, 0.0, 0.5, 0.0, 0.1, &v, &tail) == CH_OK);
    CHECK(v == doctest::Approx(1.0 / (4 * std::numbers::pi * 0.1)).epsilon(1e-12));
    CHECK(tail >= 0.0);
    CHECK(ch_cone_kernel(1.0, 0.5, 0.0, 0.5, 0.0, 0.0, &v, &tail) == CH_INVALID_ARGUMENT);
    CHECK(ch_cone_kernel(-1.0, 0.5, 0.0, 0.5, 0.0, 0.1, &v, &tail) == CH_INVALID_ARGUMENT);
  }

  TEST_CASE("run through the C interface") {
    const auto dir = scratch("capi_run");
    ch_config* cfg = nullptr;
    REQUIRE(ch_config_load(smoke().c_str(), nullptr, 0, &cfg) == CH_OK);
    ch_run_options o;
    ch_run_options_init(&o);
    const std::string out = (dir / "out").string();
    o.out_dir = out.c_str();
    int calls = 0;
    o.progress = [](const char*, void* u) { ++*static_cast<int*>(u); };
    o.progress_user = &calls;
    ch_result* res = nullptr;
    CHECK(ch_run(cfg, &o, &res) == CH_OK);
    REQUIRE(res != nullptr);
    CHECK(ch_result_pass(res) == 1);
    CHECK(std::string(ch_result_blamed(res)).empty());
    CHECK(std::string(ch_result_summary(res)).find("verdict PASS") != std::string::npos);
    CHECK(json::parse(ch_result_json(res))["verdict"] == "PASS");
    CHECK(calls > 0);
    ch_result_free(res);

    char* table = nullptr;
    char* first = nullptr;
    CHECK(ch_check_invariants(cfg, "ident", 1, 10, nullptr, nullptr, &table, &first) == CH_VERDICT_FAIL);
    CHECK(std::string(first) == "ident.adjoint_lock");
    ch_string_free(table);
    ch_string_free(first);
    ch_config_free(cfg);
  }
}
