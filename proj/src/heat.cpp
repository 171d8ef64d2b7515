#include "collapse_heat/heat.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

namespace collapse_heat {

const char* to_string(EngineMode mode) { return mode == EngineMode::dense_spectral ? "dense" : "krylov"; }

EngineMode parse_engine_mode(const std::string& s) {
  if (s == "dense" || s == "dense_spectral") return EngineMode::dense_spectral;
  if (s == "krylov") return EngineMode::krylov;
  throw InvalidArgument("unknown engine mode '" + s + "' (expected dense|krylov)");
}

namespace {

using ColSp = Eigen::SparseMatrix<double>;

// Solver for (M + gamma K) x = y.
class ShiftSolver {
 public:
  virtual ~ShiftSolver() = default;
  virtual Vec solve(const Vec& y) const = 0;
};

ColSp shifted(const SpMat& K, const Vec& mass, double gamma) {
  ColSp A = gamma * ColSp(K);
  for (Eigen::Index i = 0; i < mass.size(); ++i) A.coeffRef(i, i) += mass[i];
  A.makeCompressed();
  return A;
}

class DirectShiftSolver : public ShiftSolver {
 public:
  DirectShiftSolver(const SpMat& K, const Vec& mass, double gamma) : ldlt_(shifted(K, mass, gamma)) {
    if (ldlt_.info() != Eigen::Success) throw NumericError("shift-and-invert factorization of M + gamma K failed");
  }
  Vec solve(const Vec& y) const override { return ldlt_.solve(y); }

 private:
  Eigen::SimplicialLDLT<ColSp> ldlt_;
};

}  // namespace

struct ProductData {
  Vec base_mass;
  SpMat base_stiffness;
  Mat fiber_modes;  // orthonormal eigenvectors of M_f^{-1/2} K_f M_f^{-1/2}
  Vec fiber_eigenvalues;
  Vec fiber_inv_sqrt_mass;
};

namespace {

// PCG on M + gamma K preconditioned by the separable product
// (M_b + gamma K_b) x M_f + gamma M_b x K_f, which the fiber modes split into
// one base-sized factorization per mode.
class ProductShiftSolver : public ShiftSolver {
 public:
  ProductShiftSolver(const SpMat& K, const Vec& mass, double gamma, std::shared_ptr<const ProductData> product)
      : A_(K.rows(), K.cols()), pd_(*product), product_(std::move(product)) {
    const ProductData& pd = pd_;
    A_ = SpMat(shifted(K, mass, gamma));
    const Eigen::Index nb = pd.base_mass.size();
    ColSp Mb(nb, nb);
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index i = 0; i < nb; ++i) t.emplace_back(i, i, pd.base_mass[i]);
    Mb.setFromTriplets(t.begin(), t.end());
    const ColSp Kb(pd.base_stiffness);
    for (Eigen::Index k = 0; k < pd.fiber_eigenvalues.size(); ++k) {
      auto& f = *blocks_.emplace_back(std::make_unique<Eigen::SimplicialLDLT<ColSp>>());
      f.compute(ColSp((1.0 + gamma * pd.fiber_eigenvalues[k]) * Mb + gamma * Kb));
      if (f.info() != Eigen::Success) throw NumericError("product preconditioner factorization failed");
    }
  }

  Vec solve(const Vec& y) const override {
    const double ynorm = y.norm();
    Vec x = Vec::Zero(y.size());
    if (ynorm == 0.0) return x;
    Vec r = y, z = precondition(r), p = z;
    double rz = r.dot(z);
    for (int it = 0; it < 500; ++it) {
      const Vec Ap = A_ * p;
      const double a = rz / p.dot(Ap);
      x += a * p;
      r -= a * Ap;
      if (r.norm() <= 1e-13 * ynorm) return x;
      z = precondition(r);
      const double rz2 = r.dot(z);
      p = z + (rz2 / rz) * p;
      rz = rz2;
    }
    throw NumericError("preconditioned CG for M + gamma K did not converge in 500 iterations");
  }

 private:
  Vec precondition(const Vec& r) const {
    const Eigen::Index fs = pd_.fiber_eigenvalues.size(), nb = pd_.base_mass.size();
    const Mat Y = pd_.fiber_modes.transpose() * (pd_.fiber_inv_sqrt_mass.asDiagonal() * Eigen::Map<const Mat>(r.data(), fs, nb));
    Mat Z(fs, nb);
    for (Eigen::Index k = 0; k < fs; ++k)
      Z.row(k) = blocks_[static_cast<std::size_t>(k)]->solve(Vec(Y.row(k).transpose())).transpose();
    const Mat X = pd_.fiber_inv_sqrt_mass.asDiagonal() * (pd_.fiber_modes * Z);
    return Eigen::Map<const Vec>(X.data(), X.size());
  }

  SpMat A_;
  const ProductData& pd_;
  std::shared_ptr<const ProductData> product_;
  std::vector<std::unique_ptr<Eigen::SimplicialLDLT<ColSp>>> blocks_;
};

}  // namespace

struct ShiftInvertCache {
  std::mutex lock;
  double anorm = -1.0;
  std::shared_ptr<const ProductData> product;
  std::map<double, std::shared_ptr<const ShiftSolver>> solvers;
};

namespace {

// Gershgorin bound on M^{-1/2} K M^{-1/2}.
double scaled_norm_bound(const SpMat& K, const Vec& inv_sqrt_mass) {
  double anorm = 0.0;
  for (Eigen::Index r = 0; r < K.outerSize(); ++r) {
    double row = 0.0;
    for (SpMat::InnerIterator it(K, r); it; ++it) row += std::abs(it.value()) * inv_sqrt_mass[r] * inv_sqrt_mass[it.col()];
    anorm = std::max(anorm, row);
  }
  return std::max(anorm, 1e-300);
}

std::shared_ptr<const ShiftSolver> shift_solver(ShiftInvertCache& cache, const SpMat& K, const Vec& mass, double gamma) {
  std::shared_ptr<const ProductData> pd;
  {
    std::lock_guard<std::mutex> g(cache.lock);
    auto it = cache.solvers.find(gamma);
    if (it != cache.solvers.end()) return it->second;
    pd = cache.product;
  }
  std::shared_ptr<const ShiftSolver> s;
  if (pd)
    s = std::make_shared<ProductShiftSolver>(K, mass, gamma, pd);
  else
    s = std::make_shared<DirectShiftSolver>(K, mass, gamma);
  std::lock_guard<std::mutex> g(cache.lock);
  if (cache.solvers.size() > 8) cache.solvers.clear();
  return cache.solvers.emplace(gamma, s).first->second;
}

// exp(-t_k B) w for ascending t_k in symmetric-scaled coordinates, from one
// rational Krylov space of (I + gamma B)^{-1}, restarted if a prefix of times
// does not converge within max_subspace vectors.
std::vector<Vec> shift_invert_expv(const ShiftSolver& factor, const Vec& sqrt_mass, double gamma, const std::vector<double>& times,
                                   const Vec& w0, const KrylovParams& params) {
  const Eigen::Index n = w0.size();
  const double norm0 = w0.norm();
  const double tol = params.tolerance * norm0;
  const int m_cap = static_cast<int>(std::min<Eigen::Index>(std::max(params.max_subspace, 8), n));
  std::vector<Vec> out;
  Vec w = w0;
  double t0 = 0.0;
  std::size_t next = 0;
  int restarts = 0;
  auto apply_A = [&](const Vec& x) -> Vec { return sqrt_mass.cwiseProduct(factor.solve(Vec(sqrt_mass.cwiseProduct(x)))); };
  // coefficients of exp(-t (T^{-1} - I) / gamma) e1 for the leading m x m block
  auto coeffs = [&](const Mat& T, int m, double t) {
    Eigen::SelfAdjointEigenSolver<Mat> es(T.topLeftCorner(m, m));
    const Vec lam = es.eigenvalues();
    Vec d(m);
    for (int i = 0; i < m; ++i) d[i] = lam[i] > 0.0 ? std::exp(-t * (1.0 / lam[i] - 1.0) / gamma) : 0.0;
    return Vec(es.eigenvectors() * d.cwiseProduct(es.eigenvectors().row(0).transpose()));
  };
  while (next < times.size()) {
    if (restarts > params.max_substeps) throw NumericError("shift-and-invert exponential did not converge");
    const double beta0 = w.norm();
    if (beta0 <= 1e-300) {
      while (next < times.size()) {
        out.push_back(Vec::Zero(n));
        ++next;
      }
      break;
    }
    Mat V(n, m_cap + 1);
    Mat T = Mat::Zero(m_cap, m_cap);
    V.col(0) = w / beta0;
    std::size_t done = next;
    int m = 0;
    bool breakdown = false;
    std::vector<Vec> prev(times.size());
    for (int j = 0; j < m_cap; ++j) {
      Vec x = apply_A(V.col(j));
      T(j, j) = V.col(j).dot(x);
      x -= T(j, j) * V.col(j);
      if (j > 0) x -= T(j, j - 1) * V.col(j - 1);
      for (int pass = 0; pass < 2; ++pass) x -= V.leftCols(j + 1) * (V.leftCols(j + 1).transpose() * x);
      const double b = x.norm();
      m = j + 1;
      if (b <= 1e-14 * std::abs(T(0, 0))) {
        breakdown = true;
        break;
      }
      V.col(j + 1) = x / b;
      if (j + 1 < m_cap) T(j, j + 1) = T(j + 1, j) = b;
      // convergence: change of the approximation over the last vectors
      if (m >= 4 && (m % 2 == 0 || m == m_cap)) {
        done = next;
        for (std::size_t k = next; k < times.size(); ++k) {
          Vec c = coeffs(T, m, times[k] - t0);
          bool ok = false;
          if (prev[k].size() > 0) {
            Vec pk = Vec::Zero(m);
            pk.head(prev[k].size()) = prev[k];
            ok = beta0 * (c - pk).norm() <= tol;
          }
          prev[k] = c;
          if (!ok) break;
          done = k + 1;
        }
        if (done == times.size()) break;
      }
    }
    if (breakdown) done = times.size();
    if (done == next) {
      std::ostringstream os;
      os << "shift-and-invert exponential did not converge within " << m_cap << " vectors";
      throw NumericError(os.str());
    }
    for (std::size_t k = next; k < done; ++k) out.push_back(beta0 * (V.leftCols(m) * coeffs(T, m, times[k] - t0)));
    w = out.back();
    t0 = times[done - 1];
    next = done;
    ++restarts;
  }
  return out;
}

}  // namespace

HeatEngine::HeatEngine(std::shared_ptr<const DiscreteOperator> op, EngineMode mode, std::size_t dense_cap,
                       KrylovParams krylov)
    : op_(std::move(op)), mode_(mode), krylov_(krylov) {
  require(op_ != nullptr && op_->dim > 0, "heat engine needs a nonempty operator");
  require(krylov_.max_subspace >= 2 && krylov_.tolerance > 0.0, "invalid krylov parameters");
  require(krylov_.shift_fraction > 0.0, "invalid shift fraction");
  if (mode_ == EngineMode::krylov) {
    si_ = std::make_shared<ShiftInvertCache>();
    return;
  }
  if (op_->dim > dense_cap) {
    std::ostringstream os;
    os << "dense spectral engine refused: dimension " << op_->dim << " exceeds cap " << dense_cap;
    throw ConfigError(os.str());
  }
  const Vec s = op_->mass.cwiseSqrt().cwiseInverse();
  Mat A = s.asDiagonal() * Mat(op_->stiffness) * s.asDiagonal();
  A = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(A);
  if (es.info() != Eigen::Success) throw NumericError("dense eigendecomposition failed");
  SpectralData sd;
  sd.eigenvalues = es.eigenvalues();
  sd.eigenvectors = s.asDiagonal() * es.eigenvectors();
  spectral_ = std::move(sd);
}

const SpectralData& HeatEngine::spectrum() const {
  if (!spectral_) throw InvalidArgument("spectral data requested from a krylov engine");
  return *spectral_;
}

HeatEngine build_engine(const DiscreteOperator& op, EngineMode mode, std::size_t dense_cap, KrylovParams krylov) {
  return HeatEngine(std::make_shared<const DiscreteOperator>(op), mode, dense_cap, krylov);
}

namespace {

struct Lanczos {
  Mat V;        // orthonormal basis (columns), symmetric-scaled coordinates
  Vec alpha, beta;
  int m = 0;
  bool breakdown = false;
  double beta_next = 0.0;
};

// Lanczos on B = M^{-1/2} K M^{-1/2} from unit vector w0.
Lanczos lanczos(const SpMat& K, const Vec& inv_sqrt_mass, const Vec& w0, int m_max) {
  const Eigen::Index n = w0.size();
  const int m_cap = static_cast<int>(std::min<Eigen::Index>(m_max, n));
  Lanczos L;
  L.V.resize(n, m_cap + 1);
  L.alpha.resize(m_cap);
  L.beta.resize(m_cap);
  L.V.col(0) = w0;
  double normest = 0.0;
  for (int j = 0; j < m_cap; ++j) {
    Vec w = inv_sqrt_mass.cwiseProduct(K * inv_sqrt_mass.cwiseProduct(L.V.col(j)));
    L.alpha[j] = L.V.col(j).dot(w);
    w -= L.alpha[j] * L.V.col(j);
    if (j > 0) w -= L.beta[j - 1] * L.V.col(j - 1);
    // full reorthogonalization, twice
    for (int pass = 0; pass < 2; ++pass) {
      const Vec h = L.V.leftCols(j + 1).transpose() * w;
      w -= L.V.leftCols(j + 1) * h;
    }
    const double b = w.norm();
    L.beta[j] = b;
    L.m = j + 1;
    normest = std::max(normest, std::abs(L.alpha[j]) + b);
    if (b <= 1e-13 * std::max(normest, 1e-300)) {
      L.breakdown = true;
      L.beta_next = 0.0;
      break;
    }
    L.V.col(j + 1) = w / b;
    L.beta_next = b;
  }
  return L;
}

}  // namespace

KrylovResult krylov_expv(const SpMat& K, const Vec& mass, double t, const Vec& v, const KrylovParams& params) {
  require(t >= 0.0, "heat time must be nonnegative");
  require(v.size() == mass.size() && K.rows() == mass.size(), "krylov: dimension mismatch");
  KrylovResult res;
  const Vec sqrt_mass = mass.cwiseSqrt();
  const Vec inv_sqrt_mass = sqrt_mass.cwiseInverse();
  Vec w = sqrt_mass.cwiseProduct(v);
  const double norm0 = w.norm();
  if (t == 0.0 || norm0 == 0.0) {
    res.value = v;
    return res;
  }
  const double tol = params.tolerance;
  // Gershgorin bound on the symmetric-scaled generator.
  const double anorm = scaled_norm_bound(K, inv_sqrt_mass);
  // a priori first step (Expokit heuristic), a posteriori control afterwards
  const int mm = std::max(2, static_cast<int>(std::min<Eigen::Index>(params.max_subspace, v.size())));
  const double log_first = (std::log(tol) + (mm + 1) * (std::log(mm + 1.0) - 1.0) + 0.5 * std::log(2.0 * std::numbers::pi * (mm + 1)) -
                            std::log(4.0 * anorm)) / mm;
  double dt_hint = std::min(t, std::exp(log_first) / anorm);
  double t_done = 0.0;
  while (t_done < t) {
    if (res.substeps >= params.max_substeps) {
      std::ostringstream os;
      os << "krylov exponential did not converge: reached " << res.substeps << " substeps at time " << t_done << " of "
         << t << " (achieved error estimate " << res.error_estimate << ")";
      throw NumericError(os.str());
    }
    const double beta0 = w.norm();
    if (beta0 <= 1e-300) break;
    Lanczos L = lanczos(K, inv_sqrt_mass, w / beta0, params.max_subspace);
    const int m = L.m;
    Mat T = Mat::Zero(m, m);
    for (int j = 0; j < m; ++j) {
      T(j, j) = L.alpha[j];
      if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = L.beta[j];
    }
    // Pade with scaling and squaring keeps tiny trailing entries accurate,
    // which the error estimate relies on.
    auto coeffs = [&](double dt) {
      const Mat E = (-dt * T).exp();
      return Vec(E.col(0));
    };
    const double remaining = t - t_done;
    double dt = std::min(remaining, dt_hint);
    Vec c;
    double err = 0.0;
    double allowed = 0.0;
    if (L.breakdown) {
      dt = remaining;
      c = coeffs(dt);
    } else {
      for (int tries = 0;; ++tries) {
        c = coeffs(dt);
        err = beta0 * L.beta_next * std::abs(c[m - 1]);
        allowed = tol * norm0 * dt / t;
        if (err <= allowed) break;
        if (tries > 200) {
          std::ostringstream os;
          os << "krylov step size underflow (achieved error estimate " << err << ")";
          throw NumericError(os.str());
        }
        dt *= std::clamp(0.9 * std::pow(allowed / err, 1.0 / m), 0.05, 0.5);
      }
    }
    w = beta0 * (L.V.leftCols(m) * c);
    t_done += dt;
    if (t - t_done <= 1e-15 * t) t_done = t;
    res.error_estimate += err;
    ++res.substeps;
    const double grow = err > 0.0 ? 0.9 * std::pow(allowed / err, 1.0 / (m + 1)) : 10.0;
    dt_hint = dt * std::clamp(grow, 1.0, 10.0);
  }
  res.value = inv_sqrt_mass.cwiseProduct(w);
  return res;
}

Vec HeatEngine::apply(double tau, const Vec& v) const {
  require(tau > 0.0 && std::isfinite(tau), "apply_heat: tau must be positive");
  require(static_cast<std::size_t>(v.size()) == op_->dim, "apply_heat: dimension mismatch");
  if (mode_ == EngineMode::dense_spectral) {
    const auto& sd = *spectral_;
    const Vec coef = sd.eigenvectors.transpose() * op_->mass.cwiseProduct(v);
    const Vec decayed = coef.cwiseProduct((-tau * sd.eigenvalues).array().exp().matrix());
    return sd.eigenvectors * decayed;
  }
  return apply_many({tau}, v).front();
}

std::vector<Vec> HeatEngine::apply_many(const std::vector<double>& taus, const Vec& v) const {
  require(std::is_sorted(taus.begin(), taus.end()), "apply_many: taus must be ascending");
  std::vector<Vec> out;
  out.reserve(taus.size());
  if (mode_ == EngineMode::dense_spectral) {
    for (double tau : taus) out.push_back(apply(tau, v));
    return out;
  }
  for (double tau : taus) require(tau > 0.0 && std::isfinite(tau), "apply_many: tau must be positive");
  if (taus.empty()) return out;
  if (krylov_.shift_invert) {
    double anorm;
    {
      std::lock_guard<std::mutex> g(si_->lock);
      if (si_->anorm < 0.0) si_->anorm = scaled_norm_bound(op_->stiffness, op_->mass.cwiseSqrt().cwiseInverse());
      anorm = si_->anorm;
    }
    if (taus.back() * anorm > 8.0 * krylov_.max_subspace) {
      const Vec sqrt_mass = op_->mass.cwiseSqrt();
      // one shift for the whole list, rounded so that repeated lists share factors
      const double gref = krylov_.shift_fraction * std::sqrt(taus.front() * taus.back());
      const double gamma = std::exp2(std::round(4.0 * std::log2(gref)) / 4.0);
      const auto f = shift_solver(*si_, op_->stiffness, op_->mass, gamma);
      auto w = shift_invert_expv(*f, sqrt_mass, gamma, taus, sqrt_mass.cwiseProduct(v), krylov_);
      for (auto& x : w) out.push_back(x.cwiseQuotient(sqrt_mass));
      return out;
    }
  }
  Vec cur = v;
  double t_prev = 0.0;
  for (double tau : taus) {
    require(tau > 0.0, "apply_many: tau must be positive");
    if (tau > t_prev) cur = krylov_expv(op_->stiffness, op_->mass, tau - t_prev, cur, krylov_).value;
    out.push_back(cur);
    t_prev = tau;
  }
  return out;
}

Vec apply_heat(const HeatEngine& engine, double tau, const Vec& v) { return engine.apply(tau, v); }

void HeatEngine::set_product_structure(const DiscreteOperator& base, const DiscreteOperator& fiber) {
  require(base.dim * fiber.dim == op_->dim, "product structure does not match the operator dimension");
  if (!si_) return;
  auto pd = std::make_shared<ProductData>();
  pd->base_mass = base.mass;
  pd->base_stiffness = base.stiffness;
  const Vec isq = fiber.mass.cwiseSqrt().cwiseInverse();
  Mat S = isq.asDiagonal() * Mat(fiber.stiffness) * isq.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("fiber eigendecomposition failed");
  pd->fiber_modes = es.eigenvectors();
  pd->fiber_eigenvalues = es.eigenvalues();
  pd->fiber_inv_sqrt_mass = isq;
  std::lock_guard<std::mutex> g(si_->lock);
  si_->product = std::move(pd);
  si_->solvers.clear();
}

bool HeatEngine::has_product_structure() const {
  if (!si_) return false;
  std::lock_guard<std::mutex> g(si_->lock);
  return si_->product != nullptr;
}

HeatEngine build_total_engine(const FibrationModel& model, EngineMode mode, std::size_t dense_cap, KrylovParams krylov) {
  HeatEngine e(std::make_shared<const DiscreteOperator>(model.total_op), mode, dense_cap, krylov);
  e.set_product_structure(model.base_op, model.fiber_op);
  return e;
}

double KernelMatrix::symmetry_defect() const {
  const double n = entries.norm();
  return n > 0.0 ? (entries - entries.transpose()).norm() / n : 0.0;
}

KernelMatrix kernel_matrix(const HeatEngine& engine, double tau) {
  require(tau > 0.0, "kernel_matrix: tau must be positive");
  if (engine.mode() != EngineMode::dense_spectral)
    throw InvalidArgument("kernel_matrix requires a dense spectral engine");
  const auto& sd = engine.spectrum();
  KernelMatrix km;
  km.tau = tau;
  const Vec d = (-tau * sd.eigenvalues).array().exp();
  km.entries = sd.eigenvectors * d.asDiagonal() * sd.eigenvectors.transpose();
  km.entries = 0.5 * (km.entries + km.entries.transpose()).eval();
  km.mass = engine.op().mass;
  km.bc = engine.op().bc;
  km.labels = engine.op().dof_to_node;
  return km;
}

OffDiagonalProfile offdiagonal_profile(const KernelMatrix& kernel,
                                       const std::function<double(std::size_t, std::size_t)>& distance,
                                       std::size_t n_bins) {
  require(n_bins >= 2, "profile needs at least two bins");
  const Eigen::Index n = kernel.entries.rows();
  Mat dist(n, n);
  double dmax = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      dist(i, j) = distance(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      dmax = std::max(dmax, dist(i, j));
    }
  OffDiagonalProfile prof;
  prof.bins.resize(n_bins);
  prof.raw_max.assign(n_bins, 0.0);
  std::vector<double> d_at(n_bins, 0.0);
  const double width = dmax > 0.0 ? dmax / static_cast<double>(n_bins) * (1 + 1e-12) : 1.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    prof.bins[b].distance_lo = width * b;
    prof.bins[b].distance_hi = width * (b + 1);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto b = std::min(n_bins - 1, static_cast<std::size_t>(dist(i, j) / width));
      const double a = std::abs(kernel.entries(i, j));
      prof.bins[b].count++;
      if (a > prof.raw_max[b]) {
        prof.raw_max[b] = a;
        d_at[b] = dist(i, j);
      }
    }
  double env = 0.0;
  for (std::size_t b = n_bins; b-- > 0;) {
    env = std::max(env, prof.raw_max[b]);
    prof.bins[b].max_abs = env;
  }
  prof.argmax_bin = static_cast<std::size_t>(
      std::max_element(prof.raw_max.begin(), prof.raw_max.end()) - prof.raw_max.begin());
  // regression of log max|K| on x = -d^2 / (4 tau)
  const double top = prof.raw_max[prof.argmax_bin];
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (prof.bins[b].count == 0 || !(prof.raw_max[b] > 1e-10 * top)) continue;
    const double x = -d_at[b] * d_at[b] / (4.0 * kernel.tau);
    const double y = std::log(prof.raw_max[b]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++cnt;
  }
  if (cnt >= 2) {
    const double den = cnt * sxx - sx * sx;
    prof.gaussian_slope = den != 0.0 ? (cnt * sxy - sx * sy) / den : 0.0;
  }
  return prof;
}

}  // namespace collapse_heat
