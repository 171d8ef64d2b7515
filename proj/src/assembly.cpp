#include "collapse_heat/assembly.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace collapse_heat {

Vec DiscreteOperator::apply_generator(const Vec& v) const {
  require(static_cast<std::size_t>(v.size()) == dim, "generator: dimension mismatch");
  return (stiffness * v).cwiseQuotient(mass);
}

double GridAxis::cell_width(std::size_t c) const {
  if (c + 1 < nodes.size()) return nodes[c + 1] - nodes[c];
  return period - (nodes.back() - nodes.front());
}

namespace {

constexpr int pow3(int d) { return d == 0 ? 1 : 3 * pow3(d - 1); }

template <int D>
CornerSplitResult corner_split(const std::vector<GridAxis>& axes, const std::vector<double>& jac,
                               const std::function<void(std::size_t, double*)>& inverse_metric) {
  constexpr int S = pow3(D);
  constexpr int C = 1 << D;
  std::array<std::size_t, D> n{}, stride{}, ncell{};
  std::size_t total = 1;
  for (int k = D - 1; k >= 0; --k) {
    n[k] = axes[k].size();
    ncell[k] = axes[k].cells();
    stride[k] = total;
    total *= n[k];
    if (axes[k].periodic) require(n[k] >= 3, "periodic axis needs at least 3 nodes");
    else require(n[k] >= 2, "axis needs at least 2 nodes");
  }
  require(jac.size() == total, "jacobian size does not match grid");

  std::vector<double> ginv(total * D * D);
  for (std::size_t p = 0; p < total; ++p) {
    double* g = &ginv[p * D * D];
    inverse_metric(p, g);
    for (int i = 0; i < D; ++i)
      for (int j = i + 1; j < D; ++j) {
        const double s = 0.5 * (g[i * D + j] + g[j * D + i]);
        g[i * D + j] = g[j * D + i] = s;
      }
  }

  std::array<int, D> pow3k{};
  for (int k = 0, q = 1; k < D; ++k, q *= 3) pow3k[k] = q;
  const int center = (S - 1) / 2;

  std::vector<double> acc(total * S, 0.0);
  Vec cv = Vec::Zero(static_cast<Eigen::Index>(total));

  std::size_t ncells = 1;
  for (int k = 0; k < D; ++k) ncells *= ncell[k];

  std::array<std::size_t, D> cidx{};
  for (std::size_t cell = 0; cell < ncells; ++cell) {
    std::size_t rem = cell;
    for (int k = D - 1; k >= 0; --k) {
      cidx[k] = rem % ncell[k];
      rem /= ncell[k];
    }
    std::array<double, D> h{};
    double vol = 1.0;
    for (int k = 0; k < D; ++k) {
      h[k] = axes[k].cell_width(cidx[k]);
      vol *= h[k];
    }
    const double share = vol / C;

    std::array<std::size_t, C> corner{};
    for (int dl = 0; dl < C; ++dl) {
      std::size_t p = 0;
      for (int k = 0; k < D; ++k) {
        std::size_t ik = cidx[k] + ((dl >> k) & 1);
        if (ik == n[k]) ik = 0;
        p += ik * stride[k];
      }
      corner[dl] = p;
    }

    for (int dl = 0; dl < C; ++dl) {
      const std::size_t p = corner[dl];
      cv[static_cast<Eigen::Index>(p)] += share;
      const double w = share * jac[p];
      const double* g = &ginv[p * D * D];
      std::array<int, D> sg{};
      std::array<std::size_t, D> nb{};
      for (int k = 0; k < D; ++k) {
        sg[k] = ((dl >> k) & 1) ? -1 : 1;
        nb[k] = corner[dl ^ (1 << k)];
      }
      double* acc_p = &acc[p * S];
      for (int i = 0; i < D; ++i) {
        double* acc_a = &acc[nb[i] * S];
        for (int j = 0; j < D; ++j) {
          const double c = w * g[i * D + j] * static_cast<double>(sg[i] * sg[j]) / (h[i] * h[j]);
          const int code_ab = center + sg[j] * pow3k[j] - sg[i] * pow3k[i];
          acc_a[code_ab] += c;
          acc_a[center - sg[i] * pow3k[i]] -= c;
          acc_p[center + sg[j] * pow3k[j]] -= c;
          acc_p[center] += c;
        }
      }
    }
  }

  SpMat K(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(total));
  Eigen::VectorXi per_row(static_cast<Eigen::Index>(total));
  for (std::size_t p = 0; p < total; ++p) {
    int cnt = 0;
    for (int s = 0; s < S; ++s) cnt += acc[p * S + s] != 0.0;
    per_row[static_cast<Eigen::Index>(p)] = cnt;
  }
  K.reserve(per_row);
  std::array<std::size_t, D> idx{};
  for (std::size_t p = 0; p < total; ++p) {
    std::size_t rem = p;
    for (int k = D - 1; k >= 0; --k) {
      idx[k] = rem % n[k];
      rem /= n[k];
    }
    for (int s = 0; s < S; ++s) {
      const double v = acc[p * S + s];
      if (v == 0.0) continue;
      std::size_t q = 0;
      int code = s;
      bool inside = true;
      for (int k = 0; k < D; ++k) {
        const int o = code % 3 - 1;
        code /= 3;
        long ik = static_cast<long>(idx[k]) + o;
        if (ik < 0 || ik >= static_cast<long>(n[k])) {
          if (!axes[k].periodic) {
            inside = false;
            break;
          }
          ik = (ik + static_cast<long>(n[k])) % static_cast<long>(n[k]);
        }
        q += static_cast<std::size_t>(ik) * stride[k];
      }
      if (!inside) throw Error(Status::internal_error, "corner-split stencil left the grid");
      K.insert(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) = v;
    }
  }
  K.makeCompressed();
  SpMat Kt = SpMat(K.transpose());
  CornerSplitResult out;
  out.stiffness = 0.5 * (K + Kt);
  out.coordinate_volume = cv;
  return out;
}

Eigen::Matrix2d chol_lower(const Eigen::Matrix2d& m, const char* what) {
  Eigen::LLT<Eigen::Matrix2d> llt(m);
  if (llt.info() != Eigen::Success) throw InvalidArgument(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

std::vector<GridAxis> base_axes(const BaseGrid& grid) {
  GridAxis a1, a2;
  a1.nodes = grid.coord1;
  a2.nodes = grid.coord2;
  if (grid.periodic2()) {
    a2.periodic = true;
    a2.period = 2.0 * std::numbers::pi;
  }
  return {a1, a2};
}

GridAxis fiber_axis(int n_f) {
  GridAxis a;
  a.periodic = true;
  a.period = 1.0;
  a.nodes.resize(n_f);
  for (int k = 0; k < n_f; ++k) a.nodes[k] = static_cast<double>(k) / n_f;
  return a;
}

}  // namespace

CornerSplitResult assemble_corner_split(const std::vector<GridAxis>& axes, const std::vector<double>& jacobian,
                                        const std::function<void(std::size_t, double*)>& inverse_metric) {
  switch (axes.size()) {
    case 1: return corner_split<1>(axes, jacobian, inverse_metric);
    case 2: return corner_split<2>(axes, jacobian, inverse_metric);
    case 3: return corner_split<3>(axes, jacobian, inverse_metric);
    case 4: return corner_split<4>(axes, jacobian, inverse_metric);
    default: throw InvalidArgument("corner-split assembly supports 1 to 4 axes");
  }
}

DiscreteOperator restrict_operator(const SpMat& full, const Vec& full_mass, const std::vector<bool>& eliminate,
                                   BoundaryCondition bc) {
  const std::size_t n = static_cast<std::size_t>(full.rows());
  require(eliminate.size() == n && static_cast<std::size_t>(full_mass.size()) == n, "restrict: size mismatch");
  std::vector<long> node_to_dof(n, -1);
  DiscreteOperator op;
  op.grid_nodes = n;
  op.bc = bc;
  for (std::size_t p = 0; p < n; ++p) {
    if (eliminate[p]) continue;
    node_to_dof[p] = static_cast<long>(op.dof_to_node.size());
    op.dof_to_node.push_back(p);
  }
  op.dim = op.dof_to_node.size();
  require(op.dim > 0, "all nodes eliminated");
  const auto m = static_cast<Eigen::Index>(op.dim);
  op.mass.resize(m);
  Eigen::VectorXi per_row(m);
  for (std::size_t d = 0; d < op.dim; ++d) {
    const std::size_t p = op.dof_to_node[d];
    op.mass[static_cast<Eigen::Index>(d)] = full_mass[static_cast<Eigen::Index>(p)];
    int cnt = 0;
    for (SpMat::InnerIterator it(full, static_cast<Eigen::Index>(p)); it; ++it) cnt += node_to_dof[it.col()] >= 0;
    per_row[static_cast<Eigen::Index>(d)] = cnt;
  }
  op.stiffness.resize(m, m);
  op.stiffness.reserve(per_row);
  for (std::size_t d = 0; d < op.dim; ++d) {
    for (SpMat::InnerIterator it(full, static_cast<Eigen::Index>(op.dof_to_node[d])); it; ++it) {
      const long q = node_to_dof[it.col()];
      if (q >= 0) op.stiffness.insert(static_cast<Eigen::Index>(d), q) = it.value();
    }
  }
  op.stiffness.makeCompressed();
  for (Eigen::Index i = 0; i < m; ++i)
    if (!(op.mass[i] > 0.0)) throw NumericError("nonpositive quadrature weight in assembled operator");
  return op;
}

DiscreteOperator assemble_base(const BaseGrid& grid, BoundaryCondition bc) {
  const std::size_t n = grid.size();
  require(grid.metric.size() == n && grid.quad_weights.size() == n, "base grid is incomplete");
  std::vector<Eigen::Matrix2d> inv(n);
  for (std::size_t p = 0; p < n; ++p) {
    const Eigen::Matrix2d g = grid.metric[p].matrix();
    if (!(g(0, 0) > 0.0 && g.determinant() > 0.0))
      throw InvalidArgument("base metric is not positive definite at node " + std::to_string(p));
    inv[p] = g.inverse();
  }
  auto res = assemble_corner_split(base_axes(grid), grid.volume_density, [&](std::size_t p, double* out) {
    out[0] = inv[p](0, 0);
    out[1] = inv[p](0, 1);
    out[2] = inv[p](1, 0);
    out[3] = inv[p](1, 1);
  });
  Vec mass(static_cast<Eigen::Index>(n));
  for (std::size_t p = 0; p < n; ++p) mass[static_cast<Eigen::Index>(p)] = grid.quad_weights[p];
  std::vector<bool> elim(n, false);
  if (bc == BoundaryCondition::dirichlet)
    for (std::size_t p = 0; p < n; ++p) elim[p] = grid.is_outer_boundary(p);
  return restrict_operator(res.stiffness, mass, elim, bc);
}

DiscreteOperator assemble_interval(int n_nodes, double length, BoundaryCondition bc) {
  require(n_nodes >= 3 && length > 0.0, "interval needs >= 3 nodes and positive length");
  GridAxis ax;
  ax.nodes.resize(n_nodes);
  for (int k = 0; k < n_nodes; ++k) ax.nodes[k] = length * k / (n_nodes - 1);
  std::vector<double> jac(n_nodes, 1.0);
  auto res = assemble_corner_split({ax}, jac, [](std::size_t, double* out) { out[0] = 1.0; });
  std::vector<bool> elim(n_nodes, false);
  if (bc == BoundaryCondition::dirichlet) elim.front() = elim.back() = true;
  return restrict_operator(res.stiffness, res.coordinate_volume, elim, bc);
}

DiscreteOperator assemble_fiber(const FiberLattice& lattice, int n_f) {
  require(n_f >= 4, "fiber grid needs n_f >= 4");
  const Eigen::Matrix2d hinv = lattice.gram().inverse();
  const std::size_t n = static_cast<std::size_t>(n_f) * n_f;
  std::vector<double> jac(n, lattice.area());
  auto res = assemble_corner_split({fiber_axis(n_f), fiber_axis(n_f)}, jac, [&](std::size_t, double* out) {
    out[0] = hinv(0, 0);
    out[1] = hinv(0, 1);
    out[2] = hinv(1, 0);
    out[3] = hinv(1, 1);
  });
  Vec mass = Vec::Constant(static_cast<Eigen::Index>(n), lattice.area() / static_cast<double>(n));
  return restrict_operator(res.stiffness, mass, std::vector<bool>(n, false), BoundaryCondition::neumann);
}

double Disintegration::normalization_defect() const {
  double worst = 0.0;
  const std::size_t nb = static_cast<std::size_t>(density.size()) / fiber_size;
  for (std::size_t b = 0; b < nb; ++b) {
    const double s = density.segment(static_cast<Eigen::Index>(b * fiber_size), static_cast<Eigen::Index>(fiber_size)).sum();
    worst = std::max(worst, std::abs(s / static_cast<double>(fiber_size) - 1.0));
  }
  return worst;
}

FibrationModel assemble_total(std::shared_ptr<const BaseGrid> base, const FiberLattice& fiber, int n_f,
                              const PerturbationField& perturbation, BoundaryCondition bc,
                              const TotalAssemblyOptions& options) {
  require(base != nullptr, "assemble_total: missing base grid");
  ProductShape shape{base.get(), fiber, n_f};
  TensorField field = sample_perturbation(shape, perturbation);
  return assemble_total(std::move(base), fiber, n_f, std::move(field), bc, options);
}

FibrationModel assemble_total(std::shared_ptr<const BaseGrid> base, const FiberLattice& fiber, int n_f,
                              TensorField field, BoundaryCondition bc, const TotalAssemblyOptions& options) {
  require(base != nullptr, "assemble_total: missing base grid");
  require(n_f >= 4, "fiber grid needs n_f >= 4");
  const BaseGrid& g = *base;
  const std::size_t nf = static_cast<std::size_t>(n_f) * n_f;
  const std::size_t total = g.size() * nf;
  if (total > options.max_dim) {
    std::ostringstream os;
    os << "total-space dimension " << total << " (" << g.size() << " base x " << nf
       << " fiber nodes) exceeds the configured cap " << options.max_dim;
    throw ConfigError(os.str());
  }
  ProductShape shape{base.get(), fiber, n_f};
  if (!field.empty()) require(field.values.size() == total, "perturbation field does not match the product grid");

  FibrationModel model;
  model.base = base;
  model.fiber = fiber;
  model.n_f = n_f;
  model.epsilon = measure_c1_norm(field, shape);

  const Eigen::Matrix2d RF = chol_lower(fiber.gram(), "fiber metric");
  const double area = fiber.area();
  std::vector<double> jac(total), det_factor(total, 1.0);
  std::vector<Eigen::Matrix4d> ginv(total);
  for (std::size_t b = 0; b < g.size(); ++b) {
    const Eigen::Matrix2d RB = chol_lower(g.metric[b].matrix(), "base metric");
    Eigen::Matrix4d R = Eigen::Matrix4d::Zero();
    R.topLeftCorner<2, 2>() = RB;
    R.bottomRightCorner<2, 2>() = RF;
    const Eigen::Matrix4d Rinv = R.triangularView<Eigen::Lower>().solve(Eigen::Matrix4d::Identity());
    for (std::size_t f = 0; f < nf; ++f) {
      const std::size_t node = b * nf + f;
      if (field.empty()) {
        ginv[node] = Rinv.transpose() * Rinv;
      } else {
        const Eigen::Matrix4d A = Eigen::Matrix4d::Identity() + field.values[node];
        Eigen::LLT<Eigen::Matrix4d> llt(A);
        if (llt.info() != Eigen::Success)
          throw InvalidArgument("perturbed total metric is not positive definite at node " + std::to_string(node));
        const double d = llt.matrixL().determinant();
        det_factor[node] = d;
        ginv[node] = Rinv.transpose() * llt.solve(Rinv);
      }
      jac[node] = g.volume_density[b] * area * det_factor[node];
    }
  }

  std::vector<GridAxis> axes = base_axes(g);
  axes.push_back(fiber_axis(n_f));
  axes.push_back(fiber_axis(n_f));
  auto res = assemble_corner_split(axes, jac, [&](std::size_t p, double* out) {
    Eigen::Map<Eigen::Matrix<double, 4, 4, Eigen::RowMajor>> m(out);
    m = ginv[p];
  });
  SpMat K = std::move(res.stiffness);

  // Vertical energy carried by the excised tip disk.
  if (g.kind == GridKind::polar_wedge && g.cap_at_puncture) {
    std::vector<Eigen::Triplet<double>> trip;
    const std::vector<GridAxis> faxes{fiber_axis(n_f), fiber_axis(n_f)};
    const double dtheta = g.spacing2();
    const double cap_coord = 0.5 * g.r_min * dtheta;  // cap area / (alpha r_min)
    for (std::size_t j = 0; j < g.n2(); ++j) {
      const std::size_t b = g.index(0, j);
      std::vector<double> fj(nf);
      for (std::size_t f = 0; f < nf; ++f) fj[f] = cap_coord * jac[b * nf + f];
      auto fr = assemble_corner_split(faxes, fj, [&](std::size_t f, double* out) {
        const Eigen::Matrix4d& gi = ginv[b * nf + f];
        out[0] = gi(2, 2);
        out[1] = gi(2, 3);
        out[2] = gi(3, 2);
        out[3] = gi(3, 3);
      });
      for (Eigen::Index r = 0; r < fr.stiffness.outerSize(); ++r)
        for (SpMat::InnerIterator it(fr.stiffness, r); it; ++it)
          trip.emplace_back(static_cast<int>(b * nf + it.row()), static_cast<int>(b * nf + it.col()), it.value());
    }
    SpMat C(K.rows(), K.cols());
    C.setFromTriplets(trip.begin(), trip.end());
    K += C;
  }

  const double wF = area / static_cast<double>(nf);
  Vec mass(static_cast<Eigen::Index>(total));
  double max_ratio = 0.0;
  for (std::size_t b = 0; b < g.size(); ++b)
    for (std::size_t f = 0; f < nf; ++f) {
      const std::size_t node = b * nf + f;
      mass[static_cast<Eigen::Index>(node)] = g.quad_weights[b] * wF * det_factor[node];
      max_ratio = std::max(max_ratio, det_factor[node]);
    }
  model.max_mass_ratio = max_ratio;

  std::vector<bool> elim(total, false);
  if (bc == BoundaryCondition::dirichlet)
    for (std::size_t p = 0; p < total; ++p) elim[p] = g.is_outer_boundary(p / nf);
  model.total_op = restrict_operator(K, mass, elim, bc);
  model.total_op.measured_epsilon = model.epsilon;
  model.base_op = assemble_base(g, bc);
  model.fiber_op = assemble_fiber(fiber, n_f);

  const std::size_t nb = model.base_op.dim;
  Disintegration& dis = model.disint;
  dis.fiber_size = nf;
  dis.fiber_area.resize(static_cast<Eigen::Index>(nb));
  dis.density.resize(static_cast<Eigen::Index>(nb * nf));
  for (std::size_t bd = 0; bd < nb; ++bd) {
    const std::size_t b = model.base_op.dof_to_node[bd];
    double sum = 0.0;
    for (std::size_t f = 0; f < nf; ++f) sum += det_factor[b * nf + f];
    dis.fiber_area[static_cast<Eigen::Index>(bd)] = wF * sum;
    for (std::size_t f = 0; f < nf; ++f)
      dis.density[static_cast<Eigen::Index>(bd * nf + f)] = static_cast<double>(nf) * det_factor[b * nf + f] / sum;
  }
  if (options.break_density_normalization && nb > 0) {
    for (std::size_t f = 0; f < nf; ++f) dis.density[static_cast<Eigen::Index>(f)] *= 1.05;
  }
  model.perturbation = std::move(field);
  return model;
}

double dirichlet_energy(const DiscreteOperator& op, const Vec& v) {
  require(static_cast<std::size_t>(v.size()) == op.dim, "dirichlet_energy: dimension mismatch");
  return v.dot(op.stiffness * v);
}

double vertical_energy(const FibrationModel& model, const Vec& u) {
  const std::size_t nf = model.fiber_size();
  const std::size_t nb = model.base_op.dim;
  require(static_cast<std::size_t>(u.size()) == nb * nf, "vertical_energy: dimension mismatch");
  double e = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    const auto slice = u.segment(static_cast<Eigen::Index>(b * nf), static_cast<Eigen::Index>(nf));
    e += model.base_op.mass[static_cast<Eigen::Index>(b)] * slice.dot(model.fiber_op.stiffness * slice);
  }
  return e;
}

}  // namespace collapse_heat
