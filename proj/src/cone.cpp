#include "collapse_heat/cone.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace collapse_heat {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSeriesLimit = 500.0;  // series below, Schlafli integral above

double series_scaled_i(double nu, double x) {
  const double lx = std::log(0.5 * x);
  const double l2x = 2.0 * lx;
  double lt = nu * lx - std::lgamma(nu + 1.0) - x;
  // terms rise until k ~ k_peak and then fall super-geometrically
  std::vector<double> logs;
  logs.reserve(64);
  double peak = lt;
  for (int k = 0;; ++k) {
    logs.push_back(lt);
    peak = std::max(peak, lt);
    if (lt < peak - 40.0) break;
    lt += l2x - std::log(k + 1.0) - std::log(k + nu + 1.0);
  }
  double s = 0.0;
  for (auto it = logs.rbegin(); it != logs.rend(); ++it) s += std::exp(*it - peak);
  return std::exp(peak) * s;
}

double integral_scaled_i(double nu, double x) {
  // (1/pi) int_0^pi e^{x (cos t - 1)} cos(nu t) dt; the sin(nu pi) correction is below e^{-2x}.
  const double tmax = x > 400.0 ? std::acos(std::max(-1.0, 1.0 - 760.0 / x)) : kPi;
  auto f = [&](double t) { return std::exp(x * (std::cos(t) - 1.0)) * std::cos(nu * t); };
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, tmax, 12, 1e-15, &err);
  return v / kPi;
}

// log of (x/2)^nu / Gamma(nu + 1)
double log_majorant(double nu, double x) { return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0); }

}  // namespace

void ConeKernelParams::validate() const {
  require(alpha > 0.0 && std::isfinite(alpha), "cone kernel: alpha must be positive");
  require(series_tol > 0.0, "cone kernel: series_tol must be positive");
  require(max_terms >= 1, "cone kernel: max_terms must be positive");
}

double scaled_bessel_i(double nu, double x) {
  require(nu >= 0.0 && std::isfinite(nu), "scaled_bessel_i: order must be nonnegative");
  require(x >= 0.0 && std::isfinite(x), "scaled_bessel_i: argument must be nonnegative");
  if (x == 0.0) return nu == 0.0 ? 1.0 : 0.0;
  if (x <= kSeriesLimit) return series_scaled_i(nu, x);
  return integral_scaled_i(nu, x);
}

ConeModeTable cone_mode_table(const ConeKernelParams& params, double x) {
  params.validate();
  ConeModeTable t;
  t.x = x;
  const double i0 = scaled_bessel_i(0.0, x);
  t.modes.push_back(i0);
  if (x == 0.0) return t;
  // Modes are summed until they fall below the cancellation floor, which is
  // never looser than series_tol in absolute terms since e^{-x} I_0 <= 1.
  const double floor = params.series_tol * 1e-3 * i0;
  const double step = 1.0 / params.alpha;
  double tail = std::numeric_limits<double>::infinity();
  for (int n = 1;; ++n) {
    if (n > params.max_terms) {
      std::ostringstream os;
      os << "cone kernel series: max_terms " << params.max_terms << " exceeded at x = " << x;
      if (std::isfinite(tail))
        os << ", tail estimate " << tail;
      else  // majorant not contracting yet: report the size of the last mode pair
        os << ", tail estimate " << 2.0 * t.modes.back() << " (last mode, not certified)";
      throw NumericError(os.str());
    }
    const double nu = n * step;
    const double v = scaled_bessel_i(nu, x);
    t.modes.push_back(v);
    const double prev = t.modes[static_cast<std::size_t>(n - 1)];
    // sum_{m > n} 2 I_{m/alpha} <= 2 I_0 b(nu') / (1 - q) with b the power majorant
    const double nu1 = nu + step;
    const double q = std::pow(0.5 * x / (nu1 + 0.5), step);
    if (q < 1.0) tail = 2.0 * i0 * std::exp(log_majorant(nu1, x)) / (1.0 - q);
    if (2.0 * v < floor && 2.0 * prev < floor && tail < floor) break;
  }
  t.tail_bound = tail;
  return t;
}

ConeSeries ConeModeTable::sum(const ConeKernelParams& params, double dtheta) const {
  ConeSeries out;
  out.terms = static_cast<int>(modes.size()) - 1;
  out.tail_bound = tail_bound;
  double s = 0.0, mag = modes[0];
  for (std::size_t n = modes.size() - 1; n >= 1; --n) {
    // conjugate modes n and -n pair into a cosine
    const double term = 2.0 * std::cos(static_cast<double>(n) * dtheta) * modes[n];
    s += term;
    mag += std::abs(term);
  }
  s += modes[0];
  out.value = s;
  if (std::abs(s) < 1e-3 * mag) {
    out.value = cone_series_closed_form(params.alpha, x, dtheta);
    out.closed_form = true;
  }
  return out;
}

double cone_series_closed_form(double alpha, double x, double dtheta) {
  const double beta = 1.0 / alpha;
  double d = std::remainder(dtheta, 2.0 * kPi);
  // images: alpha * sum over k with |alpha (d + 2 pi k)| <= pi
  double images = 0.0;
  const int kmax = static_cast<int>(std::ceil(0.5 / alpha)) + 1;
  for (int k = -kmax; k <= kmax; ++k) {
    const double a = std::abs(alpha * (d + 2.0 * kPi * k));
    if (a > kPi * (1.0 + 1e-14)) continue;
    const double w = std::abs(a - kPi) <= 1e-14 * kPi ? 0.5 : 1.0;
    images += w * alpha * std::exp(x * (std::cos(a) - 1.0));
  }
  // diffracted part
  const double psi_p = beta * kPi + d, psi_m = beta * kPi - d;
  const double sp = std::sin(psi_p), sm = std::sin(psi_m), cp = std::cos(psi_p), cm = std::cos(psi_m);
  // integer 1/alpha: the two fractions cancel identically
  if (std::abs(beta - std::round(beta)) <= 1e-14 * beta) return images;
  auto f = [&](double u) {
    const double q = std::exp(-beta * u);
    const double g = q * sp / (1.0 - 2.0 * q * cp + q * q) + q * sm / (1.0 - 2.0 * q * cm + q * q);
    return std::exp(-x * (1.0 + std::cosh(u))) * g;
  };
  // e^{-x(1 + cosh u)} below e^{-760} past umax
  const double umax = std::acosh(std::max(1.0, 760.0 / std::max(x, 1e-300) - 1.0)) + 1.0;
  const double width = std::max(1e-12, std::min({std::abs(std::remainder(psi_p, 2.0 * kPi)),
                                                  std::abs(std::remainder(psi_m, 2.0 * kPi)), 1.0})) /
                       beta;
  std::vector<double> cuts{0.0};
  for (double c : {width, 10.0 * width, 100.0 * width})
    if (c < umax) cuts.push_back(c);
  cuts.push_back(umax);
  double contour = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double err = 0.0;
    contour += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, cuts[i], cuts[i + 1], 10, 1e-14, &err);
  }
  return images - contour / kPi;
}

ConeSeries cone_kernel_series(const ConeKernelParams& params, double r, double theta, double rp, double thetap,
                              double tau) {
  require(r > 0.0 && rp > 0.0, "cone_kernel: radii must be positive");
  require(tau > 0.0, "cone_kernel: tau must be positive");
  const double x = r * rp / (2.0 * tau);
  return cone_mode_table(params, x).sum(params, theta - thetap);
}

double cone_kernel(const ConeKernelParams& params, double r, double theta, double rp, double thetap, double tau) {
  const ConeSeries s = cone_kernel_series(params, r, theta, rp, thetap, tau);
  const double dr = r - rp;
  return std::exp(-dr * dr / (4.0 * tau)) * s.value / (4.0 * kPi * params.alpha * tau);
}

double cone_pairing(const ConeKernelParams& params, const BaseGrid& grid, const Vec& Phi, const Vec& Psi, double tau,
                    const Vec& chi) {
  params.validate();
  require(grid.kind == GridKind::polar_wedge, "cone_pairing: needs a polar grid");
  require(tau > 0.0, "cone_pairing: tau must be positive");
  const auto n = static_cast<Eigen::Index>(grid.size());
  require(Phi.size() == n && Psi.size() == n && chi.size() == n, "cone_pairing: vectors must live on grid nodes");
  const std::size_t nr = grid.n1(), nt = grid.n2();
  Vec a(n), c(n);
  for (Eigen::Index b = 0; b < n; ++b) {
    require(chi[b] >= 0.0 && chi[b] <= 1.0, "cone_pairing: chi must lie in [0, 1]");
    const double w = chi[b] * grid.cone_weights[static_cast<std::size_t>(b)];
    a[b] = w * Phi[b];
    c[b] = w * Psi[b];
  }
  std::vector<char> row_a(nr, 0), row_c(nr, 0);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nt; ++j) {
      row_a[i] |= a[static_cast<Eigen::Index>(grid.index(i, j))] != 0.0;
      row_c[i] |= c[static_cast<Eigen::Index>(grid.index(i, j))] != 0.0;
    }
  const double dth = grid.spacing2();
  std::vector<double> kern(nt);
  double total = 0.0;
  for (std::size_t i = 0; i < nr; ++i) {
    if (!row_a[i]) continue;
    for (std::size_t ip = 0; ip < nr; ++ip) {
      if (!row_c[ip]) continue;
      const double r = grid.coord1[i], rp = grid.coord1[ip];
      const double dr = r - rp;
      const double pref = std::exp(-dr * dr / (4.0 * tau)) / (4.0 * kPi * params.alpha * tau);
      try {
        const ConeModeTable table = cone_mode_table(params, r * rp / (2.0 * tau));
        for (std::size_t d = 0; d < nt; ++d) kern[d] = pref * table.sum(params, static_cast<double>(d) * dth).value;
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << e.what() << " (node pair radii " << r << ", " << rp << ")";
        throw NumericError(os.str());
      }
      for (std::size_t j = 0; j < nt; ++j) {
        const double aj = a[static_cast<Eigen::Index>(grid.index(i, j))];
        if (aj == 0.0) continue;
        double inner = 0.0;
        for (std::size_t jp = 0; jp < nt; ++jp)
          inner += kern[(jp + nt - j) % nt] * c[static_cast<Eigen::Index>(grid.index(ip, jp))];
        total += aj * inner;
      }
    }
  }
  return total;
}

GaussianBoundReport verify_gaussian_bound(const ConeKernelParams& params, const std::vector<ConePoint>& points,
                                          const std::vector<double>& taus) {
  params.validate();
  require(!points.empty() && !taus.empty(), "verify_gaussian_bound: empty sample");
  struct Sample {
    double tau, d2, nk;
  };
  std::vector<Sample> samples;
  GaussianBoundReport rep;
  rep.min_kernel = std::numeric_limits<double>::infinity();
  for (double tau : taus) {
    require(tau > 0.0, "verify_gaussian_bound: tau must be positive");
    const double scale = 1.0 / (4.0 * kPi * params.alpha * tau);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const ConePoint& p = points[i];
      for (std::size_t j = i; j < points.size(); ++j) {
        const ConePoint& q = points[j];
        const double k = cone_kernel(params, p.r, p.theta, q.r, q.theta, tau);
        if (k < -1e-12 * scale) {
          std::ostringstream os;
          os << "cone kernel negative (" << k << ") at r = " << p.r << ", r' = " << q.r << ", tau = " << tau;
          throw NumericError(os.str());
        }
        const double d = cone_distance(p.r, p.theta, q.r, q.theta, params.alpha);
        samples.push_back({tau, d * d, 4.0 * kPi * tau * k});
        rep.min_kernel = std::min(rep.min_kernel, tau * k);
        const double h = 1e-5 * p.r;
        const double kp = cone_kernel(params, p.r + h, p.theta, q.r, q.theta, tau);
        const double km = cone_kernel(params, p.r - h, p.theta, q.r, q.theta, tau);
        rep.max_radial_derivative = std::max(rep.max_radial_derivative, std::pow(tau, 1.5) * std::abs(kp - km) / (2 * h));
      }
    }
  }
  rep.samples = samples.size();
  // rate from the Gaussian regime d^2 >= tau, then the smallest C valid on every sample
  double c0 = 0.0;
  for (const auto& s : samples) c0 = std::max(c0, s.nk);
  for (const auto& s : samples) {
    if (s.nk <= 0.0 || s.d2 < s.tau) continue;
    const double gap = std::log(c0 / s.nk);
    rep.c = gap > 0.0 ? std::max(rep.c, s.d2 / (s.tau * gap)) : std::numeric_limits<double>::infinity();
  }
  if (rep.c == 0.0) rep.c = 4.0;
  for (const auto& s : samples) rep.C = std::max(rep.C, s.nk * std::exp(s.d2 / (rep.c * s.tau)));
  rep.holds = rep.C <= 10.0 && rep.c <= 8.0;
  return rep;
}

}  // namespace collapse_heat
