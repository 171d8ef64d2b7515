#include "collapse_heat/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace collapse_heat {

namespace {
constexpr double kPi = std::numbers::pi;
}

BoundaryCondition parse_bc(const std::string& s) {
  if (s == "dirichlet") return BoundaryCondition::dirichlet;
  if (s == "neumann") return BoundaryCondition::neumann;
  throw InvalidArgument("unknown boundary condition '" + s + "' (expected dirichlet|neumann)");
}

void ConeParams::validate() const {
  require(alpha > 0.0 && std::isfinite(alpha), "cone alpha must be positive");
  require(beta > 0.0 && beta <= 1.0, "cone beta must lie in (0, 1]");
  require(r0 > 0.0 && std::isfinite(r0), "chart radius r0 must be positive");
  require(q_amplitude >= 0.0 && std::isfinite(q_amplitude), "q_amplitude must be nonnegative");
}

double BaseGrid::spacing2() const {
  if (periodic2()) return 2.0 * kPi / static_cast<double>(coord2.size());
  return coord2.size() > 1 ? coord2[1] - coord2[0] : 1.0;
}

bool BaseGrid::is_outer_boundary(std::size_t node) const {
  const std::size_t i = node / coord2.size();
  if (kind == GridKind::polar_wedge) return i + 1 == coord1.size();
  const std::size_t j = node % coord2.size();
  return i == 0 || i + 1 == coord1.size() || j == 0 || j + 1 == coord2.size();
}

double cone_distance(double r, double theta, double rp, double thetap, double alpha) {
  double dtheta = std::fmod(std::abs(theta - thetap), 2.0 * kPi);
  dtheta = std::min(dtheta, 2.0 * kPi - dtheta);
  const double phi = alpha * dtheta;
  if (phi >= kPi) return r + rp;
  return std::sqrt(std::max(0.0, r * r + rp * rp - 2.0 * r * rp * std::cos(phi)));
}

double BaseGrid::distance(std::size_t a, std::size_t b) const {
  if (kind == GridKind::polar_wedge)
    return cone_distance(radius(a), angle(a), radius(b), angle(b), cone.alpha);
  const double dx = radius(a) - radius(b);
  const double dy = angle(a) - angle(b);
  return std::hypot(dx, dy);
}

double BaseGrid::total_measure() const {
  double s = 0.0;
  for (double w : quad_weights) s += w;
  return s;
}

double BaseGrid::max_relative_perturbation() const {
  if (kind != GridKind::polar_wedge) return 0.0;
  double worst = 0.0;
  for (std::size_t n = 0; n < size(); ++n) {
    const double r = radius(n);
    const double ar = cone.alpha * r;
    // q-hat in the orthonormal cone frame
    const Metric2& g = metric[n];
    Eigen::Matrix2d q;
    q << g.g11 - 1.0, g.g12 / ar, g.g12 / ar, g.g22 / (ar * ar) - 1.0;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(q, Eigen::EigenvaluesOnly);
    const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
    worst = std::max(worst, norm / std::pow(r, cone.beta));
  }
  return worst;
}

BaseGrid build_cone_chart(const ConeParams& params, int n_r, int n_theta, double r_min,
                          const ConeChartOptions& options) {
  params.validate();
  require(r_min > 0.0, "r_min must be positive");
  require(r_min < params.r0, "r_min must be smaller than r0");
  require(n_r >= 4 && n_theta >= 4, "cone chart needs n_r, n_theta >= 4");
  require(options.radial_grading >= 1.0, "radial grading exponent must be >= 1");

  BaseGrid grid;
  grid.kind = GridKind::polar_wedge;
  grid.cone = params;
  grid.r_min = r_min;
  grid.cap_at_puncture = options.cap_at_puncture;
  grid.coord1.resize(n_r);
  for (int i = 0; i < n_r; ++i) {
    const double xi = static_cast<double>(i) / (n_r - 1);
    grid.coord1[i] = r_min + (params.r0 - r_min) * std::pow(xi, options.radial_grading);
  }
  grid.coord1.back() = params.r0;
  grid.coord2.resize(n_theta);
  for (int j = 0; j < n_theta; ++j) grid.coord2[j] = 2.0 * kPi * j / n_theta;

  const double dtheta = 2.0 * kPi / n_theta;
  const std::size_t n = grid.size();
  grid.metric.resize(n);
  grid.volume_density.resize(n);
  grid.quad_weights.resize(n);
  grid.cone_weights.resize(n);

  for (int i = 0; i < n_r; ++i) {
    const double r = grid.coord1[i];
    const double dr_lo = i > 0 ? r - grid.coord1[i - 1] : 0.0;
    const double dr_hi = i + 1 < n_r ? grid.coord1[i + 1] - r : 0.0;
    const double dual_dr = 0.5 * (dr_lo + dr_hi);
    const double a = params.q_amplitude * std::pow(r, params.beta);
    if (a >= 1.0) {
      std::ostringstream os;
      os << "perturbed cone metric is not positive definite at r=" << r << " (|q| = " << a << ")";
      throw InvalidArgument(os.str());
    }
    for (int j = 0; j < n_theta; ++j) {
      const double th = grid.coord2[j];
      const double ar = params.alpha * r;
      Metric2 g;
      g.g11 = 1.0 + a * std::cos(th);
      g.g12 = ar * a * std::sin(th);
      g.g22 = ar * ar * (1.0 - a * std::cos(th));
      const double det = g.det();
      if (!(det > 0.0) || !(g.g11 > 0.0)) throw InvalidArgument("sampled metric is not positive definite");
      const std::size_t node = grid.index(i, j);
      grid.metric[node] = g;
      grid.volume_density[node] = std::sqrt(det);
      double w = grid.volume_density[node] * dual_dr * dtheta;
      double wc = ar * dual_dr * dtheta;
      if (i == 0 && options.cap_at_puncture) {
        const double cap = 0.5 * params.alpha * r_min * r_min * dtheta;
        w += cap * grid.volume_density[node] / ar;
        wc += cap;
      }
      grid.quad_weights[node] = w;
      grid.cone_weights[node] = wc;
    }
  }
  return grid;
}

BaseGrid build_cartesian_patch(double lx, double ly, int nx, int ny) {
  require(lx > 0.0 && ly > 0.0, "patch extents must be positive");
  require(nx >= 3 && ny >= 3, "patch needs at least 3 nodes per direction");
  BaseGrid grid;
  grid.kind = GridKind::cartesian_patch;
  grid.coord1.resize(nx);
  grid.coord2.resize(ny);
  for (int i = 0; i < nx; ++i) grid.coord1[i] = lx * i / (nx - 1);
  for (int j = 0; j < ny; ++j) grid.coord2[j] = ly * j / (ny - 1);
  const double hx = lx / (nx - 1), hy = ly / (ny - 1);
  grid.metric.assign(grid.size(), Metric2{});
  grid.volume_density.assign(grid.size(), 1.0);
  grid.quad_weights.resize(grid.size());
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const double wx = (i == 0 || i == nx - 1) ? 0.5 * hx : hx;
      const double wy = (j == 0 || j == ny - 1) ? 0.5 * hy : hy;
      grid.quad_weights[grid.index(i, j)] = wx * wy;
    }
  }
  grid.cone_weights = grid.quad_weights;
  return grid;
}

// --- fiber lattice ---------------------------------------------------------

FiberLattice build_fiber_lattice(const Eigen::Matrix2d& basis, double scale) {
  require(scale > 0.0 && std::isfinite(scale), "fiber scale must be positive");
  require(basis.allFinite(), "lattice basis must be finite");
  const double det = basis.determinant();
  require(std::abs(det) > 1e-12 * std::max(1.0, basis.squaredNorm()), "lattice basis is singular");
  FiberLattice lat;
  lat.basis = basis;
  lat.scale = scale;
  return lat;
}

namespace {

// Lagrange-Gauss reduction of two generators.
std::pair<Eigen::Vector2d, Eigen::Vector2d> reduce(Eigen::Vector2d b1, Eigen::Vector2d b2) {
  if (b1.squaredNorm() > b2.squaredNorm()) std::swap(b1, b2);
  for (int it = 0; it < 1000; ++it) {
    const double mu = std::round(b1.dot(b2) / b1.squaredNorm());
    b2 -= mu * b1;
    if (b2.squaredNorm() >= b1.squaredNorm()) break;
    std::swap(b1, b2);
  }
  if (b1.dot(b2) < 0.0) b2 = -b2;
  return {b1, b2};
}

}  // namespace

double FiberLattice::diameter() const {
  auto [b1, b2] = reduce(scale * basis.row(0).transpose(), scale * basis.row(1).transpose());
  // circumradius of the non-obtuse Delaunay triangle (0, b1, b2)
  const double a = b1.norm(), b = b2.norm(), c = (b1 - b2).norm();
  const double area2 = std::abs(b1.x() * b2.y() - b1.y() * b2.x());
  return a * b * c / (2.0 * area2);
}

double FiberLattice::shortest_period() const {
  auto [b1, b2] = reduce(scale * basis.row(0).transpose(), scale * basis.row(1).transpose());
  return b1.norm();
}

std::vector<double> FiberLattice::spectrum(std::size_t count) const {
  require(count > 0, "spectrum count must be positive");
  const Eigen::Matrix2d inv = basis.inverse();
  const double bnorm = basis.operatorNorm();
  const double four_pi2 = 4.0 * kPi * kPi / (scale * scale);
  double radius = 1.0;
  for (;;) {
    const int mmax = static_cast<int>(std::ceil(radius * bnorm)) + 1;
    std::vector<double> values;
    for (int m1 = -mmax; m1 <= mmax; ++m1) {
      for (int m2 = -mmax; m2 <= mmax; ++m2) {
        const Eigen::Vector2d k = inv * Eigen::Vector2d(m1, m2);
        if (k.norm() <= radius) values.push_back(four_pi2 * k.squaredNorm());
      }
    }
    if (values.size() >= count) {
      std::sort(values.begin(), values.end());
      values.resize(count);
      return values;
    }
    radius *= 2.0;
  }
}

double FiberLattice::lambda1() const { return spectrum(2)[1]; }

double torus_gap_lower_bound(const FiberLattice& lattice) {
  const double d = lattice.diameter();
  return kPi * kPi / (d * d);
}

// --- schedules ---------------------------------------------------------------

void CollapseSchedule::validate() const {
  require(!steps.empty(), "collapse schedule must have at least one step");
  for (std::size_t k = 0; k < steps.size(); ++k) {
    require(steps[k].s > 0.0, "collapse scale s must be positive");
    require(steps[k].epsilon >= 0.0, "epsilon must be nonnegative");
    if (k > 0) require(steps[k].s < steps[k - 1].s, "collapse scales must be strictly decreasing");
  }
  if (gauge == Gauge::exponential) {
    require(gauge_c_amp > 0.0 && gauge_rate > 0.0, "exponential gauge needs C, c > 0");
    for (const auto& st : steps) {
      const double expected = gauge_c_amp * std::exp(-gauge_rate / st.s);
      require(std::abs(st.epsilon - expected) <= 1e-12 * std::max(expected, 1e-300),
              "stored epsilon does not match the exponential gauge");
    }
  }
}

CollapseSchedule CollapseSchedule::exponential(double c_amp, double rate, const std::vector<double>& s_values) {
  CollapseSchedule sch;
  sch.gauge = Gauge::exponential;
  sch.gauge_c_amp = c_amp;
  sch.gauge_rate = rate;
  for (double s : s_values) sch.steps.push_back({s, c_amp * std::exp(-rate / s)});
  sch.validate();
  return sch;
}

CollapseSchedule CollapseSchedule::polynomial(double c_amp, double power, const std::vector<double>& s_values) {
  CollapseSchedule sch;
  sch.gauge = Gauge::polynomial;
  sch.gauge_c_amp = c_amp;
  sch.gauge_rate = power;
  for (double s : s_values) sch.steps.push_back({s, c_amp * std::pow(s, power)});
  sch.validate();
  return sch;
}

// --- perturbation fields -----------------------------------------------------

namespace {

struct Mode {
  int k = 0;   // angular (or x) wave number
  int l = 0;   // radial (or y) wave number
  double phase_a = 0.0, phase_b = 0.0;
  int p1 = 0, p2 = 0;  // fiber wave vector
  double phase_f = 0.0;
  double coeff = 0.0;
};

double base_mode(const Mode& m, const BaseGrid& g, std::size_t bnode) {
  const double c1 = g.coord1[bnode / g.n2()];
  const double c2 = g.coord2[bnode % g.n2()];
  if (g.kind == GridKind::polar_wedge) {
    const double xi = (c1 - g.coord1.front()) / (g.coord1.back() - g.coord1.front());
    // r^k factor keeps angular modes regular at the tip
    const double radial = std::pow(c1 / g.cone.r0, m.k) * std::cos(kPi * m.l * xi + m.phase_b);
    return radial * std::cos(m.k * c2 + m.phase_a);
  }
  const double lx = g.coord1.back(), ly = g.coord2.back();
  return std::cos(kPi * m.k * c1 / lx + m.phase_a) * std::cos(kPi * m.l * c2 / ly + m.phase_b);
}

}  // namespace

double measure_c1_norm(const TensorField& field, const ProductShape& shape) {
  if (field.empty()) return 0.0;
  const BaseGrid& g = *shape.base;
  const std::size_t nf = shape.fiber_size();
  const int n_f = shape.n_f;
  require(field.values.size() == shape.size(), "tensor field does not match product shape");
  const double dtheta = g.spacing2();
  const double fiber_len1 = shape.fiber.scale * shape.fiber.basis.row(0).norm() / n_f;
  const double fiber_len2 = shape.fiber.scale * shape.fiber.basis.row(1).norm() / n_f;

  double sup_val = 0.0, sup_grad = 0.0;
  for (std::size_t b = 0; b < g.size(); ++b) {
    const std::size_t i = b / g.n2(), j = b % g.n2();
    for (std::size_t f = 0; f < nf; ++f) {
      const std::size_t node = b * nf + f;
      const Sym4& v = field.values[node];
      sup_val = std::max(sup_val, v.norm());
      double grad2 = 0.0;
      if (i + 1 < g.n1()) {
        const double len = g.coord1[i + 1] - g.coord1[i];
        grad2 += (field.values[g.index(i + 1, j) * nf + f] - v).squaredNorm() / (len * len);
      }
      {
        std::size_t jn = j + 1;
        double len;
        if (g.periodic2()) {
          jn %= g.n2();
          len = g.cone.alpha * g.coord1[i] * dtheta;
        } else {
          len = dtheta;
        }
        if (jn < g.n2()) grad2 += (field.values[g.index(i, jn) * nf + f] - v).squaredNorm() / (len * len);
      }
      const int f1 = static_cast<int>(f) / n_f, f2 = static_cast<int>(f) % n_f;
      const std::size_t fa = static_cast<std::size_t>(((f1 + 1) % n_f) * n_f + f2);
      const std::size_t fb = static_cast<std::size_t>(f1 * n_f + (f2 + 1) % n_f);
      grad2 += (field.values[b * nf + fa] - v).squaredNorm() / (fiber_len1 * fiber_len1);
      grad2 += (field.values[b * nf + fb] - v).squaredNorm() / (fiber_len2 * fiber_len2);
      sup_grad = std::max(sup_grad, std::sqrt(grad2));
    }
  }
  return sup_val + sup_grad;
}

double min_metric_eigenvalue(const TensorField& field) {
  double lo = 1.0;
  for (const auto& v : field.values) {
    Eigen::SelfAdjointEigenSolver<Sym4> es(Sym4::Identity() + v, Eigen::EigenvaluesOnly);
    lo = std::min(lo, es.eigenvalues()(0));
  }
  return lo;
}

TensorField sample_perturbation(const ProductShape& shape, const PerturbationField& target) {
  require(shape.base != nullptr, "product shape has no base grid");
  require(std::isfinite(target.c1_norm_target) && target.c1_norm_target >= 0.0,
          "c1_norm_target must be finite and nonnegative");
  require(target.n_modes >= 1, "perturbation needs at least one mode");
  TensorField field;
  if (target.c1_norm_target == 0.0) return field;

  const BaseGrid& g = *shape.base;
  const std::size_t nf = shape.fiber_size();
  const int n_f = shape.n_f;
  std::mt19937_64 rng(target.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> wave(0, 2);
  std::uniform_int_distribution<int> fwave(-1, 1);

  // 10 independent components of a symmetric 4x4 tensor
  std::array<std::vector<Mode>, 10> modes;
  std::array<std::pair<int, int>, 10> comp{};
  int c = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = a; b < 4; ++b) comp[c++] = {a, b};
  for (int k = 0; k < 10; ++k) {
    const bool vertical = comp[k].second >= 2;
    for (int m = 0; m < target.n_modes; ++m) {
      Mode md;
      md.k = wave(rng);
      md.l = wave(rng);
      md.phase_a = kPi * unit(rng);
      md.phase_b = kPi * unit(rng);
      md.coeff = unit(rng);
      if (vertical) {
        do {
          md.p1 = fwave(rng);
          md.p2 = fwave(rng);
        } while (md.p1 == 0 && md.p2 == 0);
        md.phase_f = kPi * unit(rng);
        md.coeff *= target.fiber_coupling;
      }
      modes[k].push_back(md);
    }
  }

  field.values.assign(shape.size(), Sym4::Zero());
  for (std::size_t b = 0; b < g.size(); ++b) {
    for (int k = 0; k < 10; ++k) {
      for (const Mode& md : modes[k]) {
        const double bm = md.coeff * base_mode(md, g, b);
        for (std::size_t f = 0; f < nf; ++f) {
          double v = bm;
          if (md.p1 != 0 || md.p2 != 0) {
            const double y1 = static_cast<double>(f / n_f) / n_f;
            const double y2 = static_cast<double>(f % n_f) / n_f;
            v *= std::cos(2.0 * kPi * (md.p1 * y1 + md.p2 * y2) + md.phase_f);
          }
          auto [i, j] = comp[k];
          field.values[b * nf + f](i, j) += v;
          if (i != j) field.values[b * nf + f](j, i) += v;
        }
      }
    }
  }
  const double unit_norm = measure_c1_norm(field, shape);
  if (!(unit_norm > 0.0)) throw NumericError("perturbation profile degenerated to zero");
  const double amp = target.c1_norm_target / unit_norm;
  for (auto& v : field.values) v *= amp;
  field.amplitude = amp;
  const double lo = min_metric_eigenvalue(field);
  if (!(lo > 1e-3)) {
    std::ostringstream os;
    os << "perturbation with C1 norm " << target.c1_norm_target
       << " breaks positive definiteness (min eigenvalue " << lo << "); lower the target";
    throw InvalidArgument(os.str());
  }
  return field;
}

}  // namespace collapse_heat
