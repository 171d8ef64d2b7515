#include "doctest.h"

#include "collapse_heat/assembly.hpp"
#include "collapse_heat/cone.hpp"
#include "collapse_heat/heat.hpp"

#include <boost/math/special_functions/bessel.hpp>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

using namespace collapse_heat;

namespace {

constexpr double kPi = std::numbers::pi;

double plane_kernel(double r, double th, double rp, double thp, double tau) {
  const double d2 = r * r + rp * rp - 2.0 * r * rp * std::cos(th - thp);
  return std::exp(-d2 / (4.0 * tau)) / (4.0 * kPi * tau);
}

}  // namespace

TEST_SUITE("cone") {
  TEST_CASE("scaled bessel against boost") {
    double worst = 0.0;
    for (double nu : {0.0, 0.5, 1.0, 4.0 / 3.0, 2.5, 7.0, 20.0, 53.3}) {
      for (double x : {1e-3, 0.1, 1.0, 5.0, 12.0, 30.0, 100.0, 499.0, 501.0, 650.0}) {
        const double ref = boost::math::cyl_bessel_i(nu, x) * std::exp(-x);
        const double got = scaled_bessel_i(nu, x);
        if (ref < 1e-250) continue;
        worst = std::max(worst, std::abs(got - ref) / ref);
      }
    }
    MESSAGE("worst relative error vs boost " << worst);
    CHECK(worst <= 1e-11);
    CHECK(scaled_bessel_i(0.0, 0.0) == 1.0);
    CHECK(scaled_bessel_i(1.5, 0.0) == 0.0);
    CHECK_THROWS_AS(scaled_bessel_i(-1.0, 1.0), InvalidArgument);
    for (double nu : {0.0, 3.0, 40.0}) {
      const double a = scaled_bessel_i(nu, 500.0), b = scaled_bessel_i(nu, std::nextafter(500.0, 1e9));
      CHECK(std::abs(a - b) <= 1e-12 * a);
    }
  }

  TEST_CASE("plane reduction") {
    ConeKernelParams p;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ur(0.01, 2.0), ut(0.0, 2.0 * kPi);
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    int fallbacks = 0;
    for (double tau : {0.01, 0.1, 1.0}) {
      for (int k = 0; k < 200; ++k) {
        const double r = ur(rng), th = ut(rng), rp = ur(rng), thp = ut(rng);
        const double ref = plane_kernel(r, th, rp, thp, tau);
        const double got = cone_kernel(p, r, th, rp, thp, tau);
        fallbacks += cone_kernel_series(p, r, th, rp, thp, tau).closed_form;
        if (ref == 0.0) continue;
        worst = std::max(worst, std::abs(got - ref) / ref);
      }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("plane reduction worst " << worst << ", closed-form fallbacks " << fallbacks << ", " << secs << " s");
    CHECK(worst <= 1e-10);
    CHECK(secs < 5.0);
  }

  TEST_CASE("symmetry, periodicity, order scaling") {
    ConeKernelParams p;
    p.alpha = 0.75;
    const double a = cone_kernel(p, 0.4, 0.3, 0.7, 2.1, 0.05);
    CHECK(a == cone_kernel(p, 0.7, 2.1, 0.4, 0.3, 0.05));
    CHECK(a == doctest::Approx(cone_kernel(p, 0.4, 0.3 + 2.0 * kPi, 0.7, 2.1, 0.05)).epsilon(1e-13));
    CHECK(a > 0.0);
    for (int n = 0; n <= 4; ++n) CHECK(cone_bessel_order(n, 1.5) == doctest::Approx(0.5 * cone_bessel_order(n, 0.75)));
    ConeKernelParams p2 = p;
    p2.alpha = 1.5;
    const auto t1 = cone_mode_table(p, 3.0), t2 = cone_mode_table(p2, 3.0);
    for (int n = 0; n <= 2; ++n) CHECK(t2.modes[2 * n] == doctest::Approx(t1.modes[n]).epsilon(1e-14));
  }

  TEST_CASE("closed form agrees with the mode sum") {
    for (double alpha : {0.5, 0.75, 1.3, 2.0}) {
      ConeKernelParams p;
      p.alpha = alpha;
      for (double x : {0.3, 2.0, 8.0}) {
        const auto table = cone_mode_table(p, x);
        for (double d : {0.0, 0.7, 1.9, 3.0}) {
          const double series = table.sum(p, d).value;
          CHECK(cone_series_closed_form(alpha, x, d) == doctest::Approx(series).epsilon(1e-9));
        }
      }
    }
  }

  TEST_CASE("max_terms exceeded carries the tail") {
    ConeKernelParams p;
    p.max_terms = 5;
    try {
      cone_kernel(p, 1.0, 0.0, 1.0, 1.0, 0.01);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("tail estimate") != std::string::npos);
    }
  }

  TEST_CASE("on-diagonal short time") {
    ConeKernelParams p;
    p.alpha = 0.75;
    double prev = 1e9;
    for (double tau : {0.1, 0.05, 0.025, 0.0125}) {
      const double dev = std::abs(tau * cone_kernel(p, 1.0, 0.5, 1.0, 0.5, tau) - 1.0 / (4.0 * kPi));
      CHECK(dev <= std::max(prev, 1e-12));
      prev = dev;
    }
    CHECK(prev <= 1e-6);
  }

  TEST_CASE("pairing") {
    ConeParams cp;
    auto g = build_cone_chart(cp, 14, 20, 0.02);
    const auto n = static_cast<Eigen::Index>(g.size());
    Vec phi(n), psi(n), chi(n), zero = Vec::Zero(n);
    for (Eigen::Index b = 0; b < n; ++b) {
      const double r = g.radius(static_cast<std::size_t>(b)), th = g.angle(static_cast<std::size_t>(b));
      phi[b] = std::exp(-4.0 * r * r);
      psi[b] = (1.0 + 0.5 * std::cos(th)) * std::exp(-2.0 * r * r);
      chi[b] = r < 0.6 ? 1.0 : (r < 0.9 ? (0.9 - r) / 0.3 : 0.0);
    }
    ConeKernelParams p;
    const double tau = 0.05;
    const double v = cone_pairing(p, g, phi, phi, tau, chi);
    double direct = 0.0;
    for (Eigen::Index b = 0; b < n; ++b)
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto bb = static_cast<std::size_t>(b), cc = static_cast<std::size_t>(c);
        direct += chi[b] * chi[c] * phi[b] * phi[c] * g.cone_weights[bb] * g.cone_weights[cc] *
                  plane_kernel(g.radius(bb), g.angle(bb), g.radius(cc), g.angle(cc), tau);
      }
    CHECK(v == doctest::Approx(direct).epsilon(1e-8));
    CHECK(cone_pairing(p, g, zero, psi, tau, chi) == 0.0);
    p.alpha = 0.75;
    const double ab = cone_pairing(p, g, phi, psi, tau, chi), ba = cone_pairing(p, g, psi, phi, tau, chi);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-13));
    CHECK_THROWS_AS(cone_pairing(p, g, phi, psi, tau, 2.0 * chi), InvalidArgument);
  }

  TEST_CASE("semigroup composition on a truncated cone") {
    ConeKernelParams p;
    p.alpha = 0.75;
    const double tau = 0.04, sigma = 0.06, R = 2.5;
    const int nr = 125, nt = 120;
    const double dr = R / nr, dth = 2.0 * kPi / nt;
    const ConePoint x{0.5, 0.2}, y{0.7, 2.6};
    double comp = 0.0;
    for (int i = 0; i < nr; ++i) {
      const double rz = (i + 0.5) * dr;
      const auto tx = cone_mode_table(p, x.r * rz / (2.0 * tau));
      const auto ty = cone_mode_table(p, y.r * rz / (2.0 * sigma));
      const double px = std::exp(-(x.r - rz) * (x.r - rz) / (4 * tau)) / (4 * kPi * p.alpha * tau);
      const double py = std::exp(-(y.r - rz) * (y.r - rz) / (4 * sigma)) / (4 * kPi * p.alpha * sigma);
      for (int j = 0; j < nt; ++j) {
        const double th = (j + 0.5) * dth;
        comp += px * tx.sum(p, x.theta - th).value * py * ty.sum(p, th - y.theta).value * p.alpha * rz * dr * dth;
      }
    }
    const double direct = cone_kernel(p, x.r, x.theta, y.r, y.theta, tau + sigma);
    MESSAGE("composition " << comp << " direct " << direct);
    CHECK(comp == doctest::Approx(direct).epsilon(1e-3));
  }

  TEST_CASE("gaussian bound fit") {
    std::vector<ConePoint> pts;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ur(0.05, 1.5), ut(0.0, 2.0 * kPi);
    for (int k = 0; k < 25; ++k) pts.push_back({ur(rng), ut(rng)});
    ConeKernelParams p;
    auto plane = verify_gaussian_bound(p, pts, {0.05, 0.1, 0.2});
    CHECK(plane.C == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(plane.c == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(plane.holds);
    p.alpha = 0.75;
    auto cone = verify_gaussian_bound(p, pts, {0.05, 0.1, 0.2});
    MESSAGE("alpha 0.75: C " << cone.C << " c " << cone.c << " derivative " << cone.max_radial_derivative);
    CHECK(cone.c >= 3.0);
    CHECK(cone.c <= 8.0);
    CHECK(cone.min_kernel >= -1e-12);
    CHECK(cone.holds);
    for (double a : {0.25, 2.0}) {
      p.alpha = a;
      auto r = verify_gaussian_bound(p, pts, {0.05, 0.2});
      MESSAGE("alpha " << a << ": C " << r.C << " c " << r.c);
      CHECK(r.holds);
    }
  }

  TEST_CASE("series against the discrete cone oracle") {
    ConeParams cp;
    cp.alpha = 0.75;
    cp.r0 = 2.0;
    auto g = build_cone_chart(cp, 40, 48, 0.02, {1.0, true});
    auto op = assemble_base(g, BoundaryCondition::dirichlet);
    auto eng = build_engine(op, EngineMode::dense_spectral);
    const double tau = 0.1;
    auto km = kernel_matrix(eng, tau);
    ConeKernelParams p;
    p.alpha = 0.75;
    double worst = 0.0;
    for (std::size_t a = 0; a < op.dim; a += 7) {
      const std::size_t na = op.dof_to_node[a];
      if (g.radius(na) < 0.3 || g.radius(na) > 0.8) continue;
      for (std::size_t b = 0; b < op.dim; b += 5) {
        const std::size_t nb = op.dof_to_node[b];
        if (g.radius(nb) < 0.3 || g.radius(nb) > 0.8) continue;
        const double ser = cone_kernel(p, g.radius(na), g.angle(na), g.radius(nb), g.angle(nb), tau);
        worst = std::max(worst, std::abs(km.entries(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) - ser) / ser);
      }
    }
    MESSAGE("worst relative gap to discrete kernel " << worst);
    CHECK(worst <= 0.02);
  }
}
