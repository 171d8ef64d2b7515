#include "doctest.h"

#include "collapse_heat/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace collapse_heat;

namespace {

constexpr double kPi = std::numbers::pi;

// Brute-force torus diameter: farthest sample point from the lattice.
double brute_diameter(const FiberLattice& lat, int samples) {
  const Eigen::Matrix2d B = lat.scale * lat.basis;
  double worst = 0.0;
  for (int a = 0; a < samples; ++a) {
    for (int b = 0; b < samples; ++b) {
      const Eigen::Vector2d x = B.transpose() * Eigen::Vector2d((a + 0.5) / samples, (b + 0.5) / samples);
      double best = 1e300;
      for (int n1 = -3; n1 <= 3; ++n1)
        for (int n2 = -3; n2 <= 3; ++n2)
          best = std::min(best, (x - B.transpose() * Eigen::Vector2d(n1, n2)).norm());
      worst = std::max(worst, best);
    }
  }
  return worst;
}

// Smallest nonzero |2 pi w|^2 over dual vectors w, scanning a large box.
double brute_lambda1(const FiberLattice& lat) {
  const Eigen::Matrix2d B = lat.scale * lat.basis;
  const Eigen::Matrix2d dual = B.inverse();
  double best = 1e300;
  for (int m1 = -12; m1 <= 12; ++m1)
    for (int m2 = -12; m2 <= 12; ++m2) {
      if (m1 == 0 && m2 == 0) continue;
      const Eigen::Vector2d w = dual * Eigen::Vector2d(m1, m2);
      best = std::min(best, 4.0 * kPi * kPi * w.squaredNorm());
    }
  return best;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("flat disk measure") {
    ConeParams p;
    p.alpha = 1.0;
    auto g = build_cone_chart(p, 8, 8, 0.05);
    CHECK(g.total_measure() == doctest::Approx(kPi * (1.0 - 0.05 * 0.05)).epsilon(1e-6));
  }

  TEST_CASE("cone measure scales with alpha") {
    ConeParams p;
    p.alpha = 0.75;
    auto g = build_cone_chart(p, 8, 8, 0.05);
    CHECK(std::abs(g.total_measure() - 0.75 * kPi * (1.0 - 0.0025)) < 1e-6);
    for (int n : {8, 16, 32}) {
      auto gg = build_cone_chart(p, n, n, 0.05, {2.0, false});
      const double h = 1.0 / (n - 1);
      CHECK(std::abs(gg.total_measure() - 0.75 * kPi * (1.0 - 0.0025)) <= 10.0 * h * h);
    }
  }

  TEST_CASE("cap adds the excised disk") {
    ConeParams p;
    p.alpha = 0.75;
    auto g = build_cone_chart(p, 10, 12, 0.1, {1.0, true});
    CHECK(g.total_measure() == doctest::Approx(0.75 * kPi).epsilon(1e-12));
  }

  TEST_CASE("perturbation respects the amplitude bound") {
    ConeParams p;
    p.alpha = 0.75;
    p.beta = 0.5;
    p.q_amplitude = 0.3;
    auto g = build_cone_chart(p, 12, 16, 0.02);
    CHECK(g.max_relative_perturbation() <= 0.3 * (1 + 1e-9));
    CHECK(g.max_relative_perturbation() > 0.29);
  }

  TEST_CASE("alpha one chart is euclidean polar") {
    ConeParams p;
    auto g = build_cone_chart(p, 6, 8, 0.1);
    for (std::size_t n = 0; n < g.size(); ++n) {
      const double r = g.radius(n);
      CHECK(g.metric[n].g11 == 1.0);
      CHECK(g.metric[n].g12 == 0.0);
      CHECK(g.metric[n].g22 == r * r);
    }
  }

  TEST_CASE("chart input validation") {
    ConeParams p;
    CHECK_THROWS_AS(build_cone_chart(p, 8, 8, 0.0), InvalidArgument);
    CHECK_THROWS_AS(build_cone_chart(p, 8, 8, 1.5), InvalidArgument);
    CHECK_THROWS_AS(build_cone_chart(p, 3, 8, 0.1), InvalidArgument);
    p.q_amplitude = 2.0;
    CHECK_THROWS_AS(build_cone_chart(p, 8, 8, 0.1), InvalidArgument);
    p.q_amplitude = 0.0;
    p.beta = 0.0;
    CHECK_THROWS_AS(build_cone_chart(p, 8, 8, 0.1), InvalidArgument);
  }

  TEST_CASE("cone distance") {
    CHECK(cone_distance(1.0, 0.0, 1.0, kPi, 1.0) == doctest::Approx(2.0));
    CHECK(cone_distance(1.0, 0.0, 2.0, 0.0, 0.5) == doctest::Approx(1.0));
    // angle pi on a cone of alpha 0.5 opens to pi/2
    CHECK(cone_distance(1.0, 0.0, 1.0, kPi, 0.5) == doctest::Approx(std::sqrt(2.0)));
  }

  TEST_CASE("unit square torus") {
    auto lat = build_fiber_lattice(Eigen::Matrix2d::Identity(), 1.0);
    CHECK(lat.lambda1() == doctest::Approx(brute_lambda1(lat)).epsilon(1e-13));
    CHECK(lat.lambda1() == doctest::Approx(4 * kPi * kPi).epsilon(1e-13));
    CHECK(lat.diameter() == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-13));
    auto half = build_fiber_lattice(Eigen::Matrix2d::Identity(), 0.5);
    CHECK(half.lambda1() == doctest::Approx(16 * kPi * kPi).epsilon(1e-13));
    CHECK(torus_gap_lower_bound(lat) == doctest::Approx(2 * kPi * kPi).epsilon(1e-13));
    CHECK(torus_gap_lower_bound(half) == doctest::Approx(4 * torus_gap_lower_bound(lat)).epsilon(1e-13));
    auto sp = lat.spectrum(5);
    CHECK(sp[0] == 0.0);
    for (int k = 1; k < 5; ++k) CHECK(sp[k] == doctest::Approx(4 * kPi * kPi));
  }

  TEST_CASE("skew lattice") {
    Eigen::Matrix2d B;
    B << 1.0, 0.0, 0.5, 1.0;
    auto lat = build_fiber_lattice(B, 1.0);
    CHECK(lat.lambda1() == doctest::Approx(brute_lambda1(lat)).epsilon(1e-12));
    CHECK(torus_gap_lower_bound(lat) <= lat.lambda1());
    CHECK(lat.diameter() == doctest::Approx(brute_diameter(lat, 200)).epsilon(1e-2));
  }

  TEST_CASE("gap bound holds on random lattices") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int checked = 0;
    while (checked < 100) {
      Eigen::Matrix2d B;
      B << u(rng), u(rng), u(rng), u(rng);
      if (std::abs(B.determinant()) < 0.2) continue;
      auto lat = build_fiber_lattice(B, 0.5 + 0.5 * std::abs(u(rng)));
      CHECK(torus_gap_lower_bound(lat) <= lat.lambda1() * (1 + 1e-12));
      CHECK(lat.lambda1() == doctest::Approx(brute_lambda1(lat)).epsilon(1e-10));
      if (checked < 10) CHECK(lat.diameter() == doctest::Approx(brute_diameter(lat, 120)).epsilon(2e-2));
      CHECK(lat.diameter() == doctest::Approx(lat.scale * build_fiber_lattice(B, 1.0).diameter()).epsilon(1e-12));
      ++checked;
    }
  }

  TEST_CASE("singular lattice rejected") {
    Eigen::Matrix2d B;
    B << 1.0, 2.0, 2.0, 4.0;
    CHECK_THROWS_AS(build_fiber_lattice(B, 1.0), InvalidArgument);
    CHECK_THROWS_AS(build_fiber_lattice(Eigen::Matrix2d::Identity(), 0.0), InvalidArgument);
  }

  TEST_CASE("schedules") {
    auto s = CollapseSchedule::exponential(0.3, 0.5, {0.4, 0.3, 0.2, 0.15});
    CHECK(s.steps.size() == 4);
    CHECK(s.steps[2].epsilon == doctest::Approx(0.3 * std::exp(-2.5)));
    CollapseSchedule bad = s;
    bad.steps[1].epsilon *= 1.001;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    CHECK_THROWS_AS(CollapseSchedule::exponential(0.3, 0.5, {0.2, 0.3}), InvalidArgument);
  }
}

TEST_SUITE("perturbation") {
  // Independent C1 measurement: forward differences along each axis in
  // physical units, sup of value norm plus sup of gradient norm.
  double oracle_c1(const TensorField& f, const BaseGrid& g, const FiberLattice& lat, int n_f) {
    const std::size_t nf = static_cast<std::size_t>(n_f) * n_f;
    double sv = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < g.n1(); ++i)
      for (std::size_t j = 0; j < g.n2(); ++j)
        for (int a = 0; a < n_f; ++a)
          for (int b = 0; b < n_f; ++b) {
            const std::size_t bn = i * g.n2() + j;
            const std::size_t node = bn * nf + a * n_f + b;
            const Sym4& v = f.values[node];
            sv = std::max(sv, std::sqrt((v.array() * v.array()).sum()));
            double gsum = 0.0;
            if (i + 1 < g.n1()) {
              const double d = g.coord1[i + 1] - g.coord1[i];
              gsum += ((f.values[node + g.n2() * nf] - v) / d).squaredNorm();
            }
            const std::size_t jn = (j + 1) % g.n2();
            const double dth = g.cone.alpha * g.coord1[i] * 2 * kPi / g.n2();
            gsum += ((f.values[(i * g.n2() + jn) * nf + a * n_f + b] - v) / dth).squaredNorm();
            const double l1 = lat.scale * lat.basis.row(0).norm() / n_f;
            const double l2 = lat.scale * lat.basis.row(1).norm() / n_f;
            gsum += ((f.values[bn * nf + ((a + 1) % n_f) * n_f + b] - v) / l1).squaredNorm();
            gsum += ((f.values[bn * nf + a * n_f + (b + 1) % n_f] - v) / l2).squaredNorm();
            sg = std::max(sg, std::sqrt(gsum));
          }
    return sv + sg;
  }

  TEST_CASE("zero target gives zero field") {
    ConeParams p;
    auto g = build_cone_chart(p, 6, 8, 0.1);
    ProductShape shape{&g, build_fiber_lattice(Eigen::Matrix2d::Identity(), 0.3), 6};
    auto f = sample_perturbation(shape, {0.0, 0.25, 3, 1});
    CHECK(f.empty());
    CHECK(measure_c1_norm(f, shape) == 0.0);
  }

  TEST_CASE("calibrated norm and determinism") {
    ConeParams p;
    p.alpha = 0.75;
    auto g = build_cone_chart(p, 8, 12, 0.05);
    auto lat = build_fiber_lattice(Eigen::Matrix2d::Identity(), 0.3);
    ProductShape shape{&g, lat, 6};
    PerturbationField pf{0.1, 0.25, 3, 7};
    auto f = sample_perturbation(shape, pf);
    const double m = oracle_c1(f, g, lat, 6);
    CHECK(m >= 0.09);
    CHECK(m <= 0.11);
    auto f2 = sample_perturbation(shape, pf);
    bool same = true;
    for (std::size_t k = 0; k < f.values.size(); ++k) same = same && (f.values[k].array() == f2.values[k].array()).all();
    CHECK(same);
    for (const auto& v : f.values) CHECK((v - v.transpose()).norm() == 0.0);
    CHECK(min_metric_eigenvalue(f) > 0.5);
  }

  TEST_CASE("oversized target rejected") {
    ConeParams p;
    auto g = build_cone_chart(p, 6, 8, 0.1);
    ProductShape shape{&g, build_fiber_lattice(Eigen::Matrix2d::Identity(), 1.0), 6};
    CHECK_THROWS_AS(sample_perturbation(shape, {1e4, 0.25, 3, 1}), InvalidArgument);
  }
}
