#include "implantheat/coupled3d1d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Sparse>

#include "implantheat/kernels.hpp"
#include "implantheat/quadrature.hpp"

namespace implantheat::coupled {

using sparse::CsrMatrix;
using sparse::Triplet;

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// Second matrix on the first one's pattern; every triplet must hit it.
CsrMatrix on_pattern(const CsrMatrix& like, const std::vector<Triplet>& triplets) {
  std::vector<double> v(like.nnz(), 0.0);
  for (const auto& t : triplets) {
    const auto pos = like.pattern().find(t.row, t.col);
    if (pos < 0) throw Error(ErrorKind::numerical, "entry outside the shared 1D pattern");
    v[static_cast<std::size_t>(pos)] += t.value;
  }
  return CsrMatrix(like.shared_pattern(), std::move(v));
}

double dot(std::span<const double> a, std::span<const double> b) { return kernels::dot(a, b, Exec::serial); }

}  // namespace

double Mesh1D::total_length() const {
  double s = 0.0;
  for (const auto& c : cells) s += c.length;
  return s;
}

Mesh1D build_mesh1d(const geometry::ImplantNetwork& network, double h_hat) {
  if (!(h_hat > 0.0) || !std::isfinite(h_hat)) throw Error(ErrorKind::input, "1D element size must be positive");
  Mesh1D m;
  m.network_nodes = network.node_count();
  m.positions = network.nodes();
  m.node_branch.assign(m.network_nodes, kNone);
  m.node_arc.assign(m.network_nodes, 0.0);
  m.branch_first_cell.push_back(0);
  for (std::size_t b = 0; b < network.branch_count(); ++b) {
    const auto& br = network.branches()[b];
    const double l = network.length(b);
    const auto nc = static_cast<std::size_t>(std::max(1.0, std::ceil(l / h_hat - 1e-9)));
    const double h = l / static_cast<double>(nc);
    m.h_hat = std::max(m.h_hat, h);
    if (m.node_branch[br.from] == kNone) {
      m.node_branch[br.from] = b;
      m.node_arc[br.from] = 0.0;
    }
    if (m.node_branch[br.to] == kNone) {
      m.node_branch[br.to] = b;
      m.node_arc[br.to] = l;
    }
    const Point3 a = network.nodes()[br.from];
    const Vec3 d = network.nodes()[br.to] - a;
    std::size_t prev = br.from;
    for (std::size_t k = 0; k < nc; ++k) {
      std::size_t next = br.to;
      if (k + 1 < nc) {
        const double t = static_cast<double>(k + 1) / static_cast<double>(nc);
        next = m.positions.size();
        m.positions.push_back(a + d * t);
        m.node_branch.push_back(b);
        m.node_arc.push_back(t * l);
      }
      m.cells.push_back({prev, next, b, h, static_cast<double>(k) * h});
      prev = next;
    }
    m.branch_first_cell.push_back(m.cells.size());
  }
  for (std::size_t n = 0; n < m.network_nodes; ++n) {
    if (m.node_branch[n] == kNone) {
      throw Error(ErrorKind::geometry, "network node " + std::to_string(n) + " has no branch");
    }
  }
  return m;
}

ControlMesh build_control_mesh(const geometry::ImplantNetwork& network, const Mesh1D& mesh, int factor) {
  if (factor < 1) throw Error(ErrorKind::input, "control coarsening factor must be >= 1");
  ControlMesh cm;
  cm.psi_nodes = network.node_count();
  cm.control_of_cell.assign(mesh.cell_count(), kNone);
  const auto c = static_cast<std::size_t>(factor);
  for (std::size_t b = 0; b < network.branch_count(); ++b) {
    const std::size_t first = mesh.branch_first_cell[b];
    const std::size_t end = mesh.branch_first_cell[b + 1];
    const std::size_t n = end - first;
    const std::size_t groups = std::max<std::size_t>(1, n / c);
    std::size_t left = network.branches()[b].from;
    for (std::size_t g = 0; g < groups; ++g) {
      ControlCell cc;
      cc.branch = b;
      cc.first_cell = first + g * c;
      cc.last_cell = g + 1 == groups ? end : cc.first_cell + c;
      cc.psi0 = left;
      cc.psi1 = g + 1 == groups ? network.branches()[b].to : cm.psi_nodes++;
      cc.s0 = mesh.cells[cc.first_cell].s0;
      for (std::size_t k = cc.first_cell; k < cc.last_cell; ++k) {
        cc.length += mesh.cells[k].length;
        cm.control_of_cell[k] = cm.cells.size();
      }
      cm.h_bar = std::max(cm.h_bar, cc.length);
      left = cc.psi1;
      cm.cells.push_back(cc);
    }
  }
  return cm;
}

Blocks1D assemble_1d(const Mesh1D& mesh, double radius, const geometry::Material& implant,
                     const em::BranchLosses& losses) {
  if (!(radius > 0.0)) throw Error(ErrorKind::input, "wire radius must be positive");
  const std::size_t nb = mesh.branch_first_cell.size() - 1;
  if (losses.linear_density.size() != nb) {
    throw Error(ErrorKind::input, "missing branch losses: " + std::to_string(losses.linear_density.size()) +
                                      " values for " + std::to_string(nb) + " branches");
  }
  const double area = kPi * radius * radius;
  const double mcoef = area * implant.volumetric_heat_capacity();
  const double kcoef = area * implant.conductivity;
  std::vector<Triplet> mt, kt;
  mt.reserve(4 * mesh.cell_count());
  kt.reserve(4 * mesh.cell_count());
  Blocks1D out;
  out.load.assign(mesh.node_count(), 0.0);
  for (const auto& cell : mesh.cells) {
    const double h = cell.length;
    const std::size_t n[2] = {cell.n0, cell.n1};
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        mt.push_back({n[a], n[b], mcoef * h * (a == b ? 1.0 / 3.0 : 1.0 / 6.0)});
        kt.push_back({n[a], n[b], kcoef / h * (a == b ? 1.0 : -1.0)});
      }
      out.load[n[a]] += 0.5 * h * losses.linear_density[cell.branch];
    }
  }
  out.mass = CsrMatrix::from_triplets(mesh.node_count(), mesh.node_count(), std::move(mt));
  out.stiffness = on_pattern(out.mass, kt);
  return out;
}

CouplingAssembly assemble_coupling(const geometry::VoxelGrid& grid, const Mesh1D& mesh, const ControlMesh& control,
                                   double radius, int order) {
  if (!(radius > 0.0)) throw Error(ErrorKind::input, "wire radius must be positive");
  const GaussRule& g = gauss_legendre(order);
  CouplingAssembly ca;
  ca.radius = radius;
  const double perimeter = 2.0 * kPi * radius;
  const std::size_t nq = mesh.cell_count() * static_cast<std::size_t>(order);
  ca.weights.reserve(nq);
  ca.points.reserve(nq);
  ca.point_phi.reserve(nq);
  ca.phi_mass.assign(control.phi_count(), 0.0);
  std::vector<Triplet> t3, t1, tp, dt, ct, pm;
  t3.reserve(8 * nq);
  t1.reserve(2 * nq);
  tp.reserve(2 * nq);
  dt.reserve(8 * nq);
  ct.reserve(2 * nq);
  pm.reserve(4 * nq);
  for (std::size_t k = 0; k < mesh.cell_count(); ++k) {
    const Cell1D& cell = mesh.cells[k];
    const std::size_t cc_id = control.control_of_cell[k];
    const ControlCell& cc = control.cells[cc_id];
    const Point3 p0 = mesh.positions[cell.n0];
    const Vec3 d = mesh.positions[cell.n1] - p0;
    for (int q = 0; q < order; ++q) {
      const double xi = g.nodes[q];
      const double w = g.weights[q] * cell.length;
      const Point3 x = p0 + d * xi;
      const std::size_t row = ca.weights.size();
      geometry::TrilinearSample s;
      try {
        s = grid.sample(x);
      } catch (const Error&) {
        throw Error(ErrorKind::geometry, "coupling quadrature point on branch " + std::to_string(cell.branch) +
                                             " lies outside the voxel grid");
      }
      for (int a = 0; a < 8; ++a) {
        if (s.values[a] == 0.0) continue;
        t3.push_back({row, s.nodes[a], s.values[a]});
        dt.push_back({s.nodes[a], cc_id, perimeter * w * s.values[a]});
      }
      const double n1v[2] = {1.0 - xi, xi};
      const std::size_t n1i[2] = {cell.n0, cell.n1};
      const double zeta = std::clamp((cell.s0 + xi * cell.length - cc.s0) / cc.length, 0.0, 1.0);
      const double npv[2] = {1.0 - zeta, zeta};
      const std::size_t npi[2] = {cc.psi0, cc.psi1};
      for (int a = 0; a < 2; ++a) {
        t1.push_back({row, n1i[a], n1v[a]});
        ct.push_back({n1i[a], cc_id, perimeter * w * n1v[a]});
        tp.push_back({row, npi[a], npv[a]});
        for (int b = 0; b < 2; ++b) pm.push_back({npi[a], npi[b], w * npv[a] * npv[b]});
      }
      ca.weights.push_back(w);
      ca.points.push_back(x);
      ca.point_phi.push_back(cc_id);
      ca.phi_mass[cc_id] += w;
    }
  }
  ca.trace3 = CsrMatrix::from_triplets(nq, grid.node_count(), std::move(t3));
  ca.trace1 = CsrMatrix::from_triplets(nq, mesh.node_count(), std::move(t1));
  ca.trace_psi = CsrMatrix::from_triplets(nq, control.psi_nodes, std::move(tp));
  ca.d = CsrMatrix::from_triplets(grid.node_count(), control.phi_count(), std::move(dt));
  ca.c = CsrMatrix::from_triplets(mesh.node_count(), control.phi_count(), std::move(ct));
  ca.psi_mass = CsrMatrix::from_triplets(control.psi_nodes, control.psi_nodes, std::move(pm));
  return ca;
}

double continuity_mismatch(std::span<const double> theta3, std::span<const double> theta1,
                           const CouplingAssembly& coupling) {
  const std::size_t nq = coupling.point_count();
  std::vector<double> a(nq), b(nq);
  coupling.trace3.multiply(theta3, a);
  coupling.trace1.multiply(theta1, b);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    num += coupling.weights[q] * (a[q] - b[q]) * (a[q] - b[q]);
    den += coupling.weights[q] * a[q] * a[q];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

double evaluate_functional(std::span<const double> theta3, std::span<const double> theta1,
                           std::span<const double> psi, const CouplingAssembly& coupling) {
  const std::size_t nq = coupling.point_count();
  std::vector<double> a(nq), b(nq), p(nq);
  coupling.trace3.multiply(theta3, a);
  coupling.trace1.multiply(theta1, b);
  coupling.trace_psi.multiply(psi, p);
  double j = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    j += coupling.weights[q] * ((a[q] - p[q]) * (a[q] - p[q]) + (b[q] - p[q]) * (b[q] - p[q]));
  }
  return 0.5 * j;
}

// ---------------------------------------------------------------------------

namespace {

sparse::SparseSpd one_d_matrix(const Blocks1D& b, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorKind::input, "time step must be positive");
  const double w[2] = {1.0 / dt, 1.0};
  const CsrMatrix* t[2] = {&b.mass, &b.stiffness};
  return sparse::SparseSpd(sparse::linear_combination(w, t));
}

sparse::SparseSpd doubled(const CsrMatrix& m) {
  std::vector<double> v(m.values().begin(), m.values().end());
  for (double& x : v) x *= 2.0;
  return sparse::SparseSpd(CsrMatrix(m.shared_pattern(), std::move(v)));
}

}  // namespace

CoupledSolver::CoupledSolver(const thermal::FemSystem3D& system3, const Blocks1D& blocks1,
                             const CouplingAssembly& coupling, const geometry::Material& implant,
                             const CoupledOptions& options)
    : system3_(system3),
      blocks1_(blocks1),
      coupling_(coupling),
      options_(options),
      stepper3_(system3, options.dt, options.tol_inner, options.exec),
      a1_(one_d_matrix(blocks1, options.dt)),
      chol1_(a1_),
      g_psi_(doubled(coupling.psi_mass)),
      ic_psi_(g_psi_) {
  if (coupling.d.rows() != system3.nodes || coupling.c.rows() != blocks1.mass.rows()) {
    throw Error(ErrorKind::input, "coupling matrices do not match the 3D/1D systems");
  }
  // 1D temperature response to a unit lateral flux over one step when the
  // wire's own heat capacity dominates: 2 dt / (r rho c).
  const double beta = 2.0 * options.dt / (coupling.radius * implant.volumetric_heat_capacity());
  phi_scale_ = beta * beta;
  if (options.preconditioner != OuterPreconditioner::block_diagonal) build_kkt();
}

void CoupledSolver::build_kkt() {
  using Sp = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
  const auto to_sp = [](const CsrMatrix& m) {
    std::vector<Eigen::Triplet<double, int>> t;
    t.reserve(m.nnz());
    const auto& pat = m.pattern();
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t k = pat.offsets[i]; k < pat.offsets[i + 1]; ++k) {
        t.emplace_back(static_cast<int>(i), static_cast<int>(pat.columns[k]), m.values()[k]);
      }
    }
    Sp out(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    out.setFromTriplets(t.begin(), t.end());
    return out;
  };
  const std::size_t n3 = system3_.nodes;
  const std::size_t nphi = phi_count();
  const std::size_t npsi = psi_count();
  const std::size_t n1 = blocks1_.mass.rows();
  const bool lumped = options_.preconditioner == OuterPreconditioner::lumped_kkt;
  const CsrMatrix& a3 = stepper3_.matrix().matrix();
  const auto& a3p = a3.pattern();

  // 3D nodes kept in the surrogate: everything the coupling touches, grown
  // by graph layers of the 3D stencil
  std::vector<std::size_t> local(n3, kNone);
  std::vector<std::size_t> kept;
  const auto keep = [&](std::size_t n) {
    if (local[n] == kNone) {
      local[n] = kept.size();
      kept.push_back(n);
    }
  };
  for (std::size_t i = 0; i < n3; ++i) {
    if (coupling_.d.pattern().offsets[i + 1] > coupling_.d.pattern().offsets[i]) keep(i);
  }
  for (std::uint32_t col : coupling_.trace3.pattern().columns) keep(col);
  const std::size_t layers = lumped ? 0 : options_.kkt_halo;
  std::size_t front = 0;
  for (std::size_t layer = 0; layer < layers; ++layer) {
    const std::size_t end = kept.size();
    for (std::size_t k = front; k < end; ++k) {
      const std::size_t i = kept[k];
      for (std::size_t q = a3p.offsets[i]; q < a3p.offsets[i + 1]; ++q) keep(a3p.columns[q]);
    }
    front = end;
  }
  const std::size_t ns = kept.size();

  // surrogate 3D operator on the kept nodes
  std::vector<Triplet> as;
  if (lumped) {
    std::vector<double> ones(n3, 1.0), row_sum(n3);
    a3.multiply(ones, row_sum, options_.exec);
    for (std::size_t k = 0; k < ns; ++k) {
      if (!(row_sum[kept[k]] > 0.0)) throw Error(ErrorKind::numerical, "lumped 3D operator is not positive");
      as.push_back({k, k, row_sum[kept[k]]});
    }
  } else {
    for (std::size_t k = 0; k < ns; ++k) {
      const std::size_t i = kept[k];
      for (std::size_t q = a3p.offsets[i]; q < a3p.offsets[i + 1]; ++q) {
        const std::size_t j = local[a3p.columns[q]];
        if (j != kNone) as.push_back({k, j, a3.values()[q]});
      }
    }
  }
  std::vector<Triplet> ts, ds;
  {
    const auto& p = coupling_.trace3.pattern();
    for (std::size_t q = 0; q < coupling_.point_count(); ++q) {
      for (std::size_t k = p.offsets[q]; k < p.offsets[q + 1]; ++k) {
        ts.push_back({q, local[p.columns[k]], coupling_.trace3.values()[k]});
      }
    }
    const auto& pd = coupling_.d.pattern();
    for (std::size_t i = 0; i < n3; ++i) {
      for (std::size_t k = pd.offsets[i]; k < pd.offsets[i + 1]; ++k) {
        ds.push_back({local[i], pd.columns[k], coupling_.d.values()[k]});
      }
    }
  }
  const Sp t3 = to_sp(CsrMatrix::from_triplets(coupling_.point_count(), ns, std::move(ts)));
  const Sp d = to_sp(CsrMatrix::from_triplets(ns, nphi, std::move(ds)));
  const Sp a3s = to_sp(CsrMatrix::from_triplets(ns, ns, std::move(as)));

  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(coupling_.weights.data(),
                                                        static_cast<Eigen::Index>(coupling_.weights.size()));
  const Sp t1 = to_sp(coupling_.trace1);
  const Sp tpsi = to_sp(coupling_.trace_psi);
  const Sp c = to_sp(coupling_.c);
  const Sp a1 = to_sp(a1_.matrix());
  const Sp wt3 = w.asDiagonal() * t3;
  const Sp wt1 = w.asDiagonal() * t1;
  const Sp wtpsi = w.asDiagonal() * tpsi;

  // unknowns: phi, psi, theta3 (kept nodes), y = -theta1, and one
  // multiplier per state equation
  const std::size_t o_psi = nphi, o_3 = o_psi + npsi, o_y = o_3 + ns, o_l3 = o_y + n1, o_l1 = o_l3 + ns;
  kkt_size_ = o_l1 + n1;
  std::vector<Triplet> t;
  const auto put = [&t](const Sp& m, std::size_t r0, std::size_t c0, bool mirror) {
    for (int k = 0; k < m.outerSize(); ++k) {
      for (Sp::InnerIterator it(m, k); it; ++it) {
        const auto r = static_cast<std::size_t>(it.row()), cc = static_cast<std::size_t>(it.col());
        t.push_back({r0 + r, c0 + cc, it.value()});
        if (mirror) t.push_back({c0 + cc, r0 + r, it.value()});
      }
    }
  };
  put(Sp(t3.transpose()) * wt3, o_3, o_3, false);
  put(-(Sp(t3.transpose()) * wtpsi), o_3, o_psi, true);
  put(2.0 * (Sp(tpsi.transpose()) * wtpsi), o_psi, o_psi, false);
  put(Sp(tpsi.transpose()) * wt1, o_psi, o_y, true);
  put(Sp(t1.transpose()) * wt1, o_y, o_y, false);
  put(a3s, o_3, o_l3, true);
  put(-Sp(d.transpose()), 0, o_l3, true);
  put(a1, o_y, o_l1, true);
  put(-Sp(c.transpose()), 0, o_l1, true);
  kkt_ = std::make_unique<sparse::SparseLu>(kkt_size_, t);
}

CoupledState CoupledSolver::initial_state() const {
  CoupledState s;
  s.theta3.assign(system3_.nodes, 0.0);
  s.theta1.assign(blocks1_.mass.rows(), 0.0);
  s.phi.assign(phi_count(), 0.0);
  s.psi.assign(psi_count(), 0.0);
  return s;
}

void CoupledSolver::count(const sparse::PcgResult& r) {
  if (!diag_) return;
  ++diag_->inner_solves;
  diag_->inner_iterations += r.iterations;
  diag_->max_inner_iterations = std::max(diag_->max_inner_iterations, r.iterations);
  diag_->worst_inner_residual = std::max(diag_->worst_inner_residual, r.relative_residual);
}

std::vector<double> CoupledSolver::solve3(std::span<const double> rhs, std::span<const double> x0) {
  auto r = stepper3_.solve(rhs, x0);
  count(r);
  return std::move(r.x);
}

std::vector<double> CoupledSolver::solve1(std::span<const double> rhs, std::span<const double> x0) {
  sparse::PcgOptions opt;
  opt.rtol = options_.tol_inner;
  opt.exec = Exec::serial;
  opt.max_iterations = 20000;
  auto r = sparse::pcg(sparse::MatrixOperator(a1_, Exec::serial), rhs, chol1_, opt, x0);
  count(r);
  return std::move(r.x);
}

CoupledSolver::Fields CoupledSolver::fields_at(const CoupledState& prev, std::span<const double> phi,
                                               const Fields* guess) {
  // increments from the previous step: A d = forcing - (A - M/dt) theta_prev
  const std::size_t n3 = system3_.nodes;
  const std::size_t n1 = blocks1_.mass.rows();
  std::vector<double> rhs3(n3), tmp3(n3);
  coupling_.d.multiply(phi, rhs3, options_.exec);
  stepper3_.matrix().multiply(prev.theta3, tmp3, options_.exec);
  kernels::axpy(-1.0, tmp3, rhs3, options_.exec);
  stepper3_.history(prev.theta3, tmp3);
  kernels::axpy(1.0, tmp3, rhs3, options_.exec);

  std::vector<double> rhs1(blocks1_.load), tmp1(n1);
  coupling_.c.multiply(phi, tmp1, Exec::serial);
  kernels::axpy(-1.0, tmp1, rhs1, Exec::serial);
  blocks1_.stiffness.multiply(prev.theta1, tmp1, Exec::serial);
  kernels::axpy(-1.0, tmp1, rhs1, Exec::serial);

  Fields f;
  if (guess) {
    std::vector<double> g3(guess->theta3), g1(guess->theta1);
    kernels::axpy(-1.0, prev.theta3, g3, options_.exec);
    kernels::axpy(-1.0, prev.theta1, g1, Exec::serial);
    f.theta3 = solve3(rhs3, g3);
    f.theta1 = solve1(rhs1, g1);
  } else {
    f.theta3 = solve3(rhs3);
    f.theta1 = solve1(rhs1);
  }
  kernels::axpy(1.0, prev.theta3, f.theta3, options_.exec);
  kernels::axpy(1.0, prev.theta1, f.theta1, Exec::serial);
  return f;
}

void CoupledSolver::residual_at_points(const Fields& f, std::span<const double> psi, std::vector<double>& e3,
                                       std::vector<double>& e1) const {
  const std::size_t nq = coupling_.point_count();
  std::vector<double> tp(nq);
  e3.resize(nq);
  e1.resize(nq);
  coupling_.trace3.multiply(f.theta3, e3, Exec::serial);
  coupling_.trace1.multiply(f.theta1, e1, Exec::serial);
  coupling_.trace_psi.multiply(psi, tp, Exec::serial);
  for (std::size_t q = 0; q < nq; ++q) {
    e3[q] -= tp[q];
    e1[q] -= tp[q];
  }
}

std::vector<double> CoupledSolver::gradient(std::span<const double> e3, std::span<const double> e1) {
  const std::size_t nq = coupling_.point_count();
  const std::size_t nphi = phi_count();
  std::vector<double> y3(nq), y1(nq), ysum(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    y3[q] = coupling_.weights[q] * e3[q];
    y1[q] = coupling_.weights[q] * e1[q];
    ysum[q] = y3[q] + y1[q];
  }
  std::vector<double> r3(system3_.nodes), r1(blocks1_.mass.rows());
  coupling_.trace3.multiply_transposed(y3, r3);
  coupling_.trace1.multiply_transposed(y1, r1);
  const auto a3 = solve3(r3);
  const auto a1 = solve1(r1);
  std::vector<double> g(nphi + psi_count());
  std::vector<double> tmp(nphi);
  std::span<double> gphi(g.data(), nphi);
  std::span<double> gpsi(g.data() + nphi, psi_count());
  coupling_.d.multiply_transposed(a3, gphi);
  coupling_.c.multiply_transposed(a1, tmp);
  for (std::size_t i = 0; i < nphi; ++i) gphi[i] -= tmp[i];
  coupling_.trace_psi.multiply_transposed(ysum, gpsi);
  for (double& v : gpsi) v = -v;
  return g;
}

void CoupledSolver::apply_preconditioner(std::span<const double> r, std::span<double> z) const {
  const std::size_t nphi = phi_count();
  if (kkt_) {
    std::vector<double> rhs(kkt_size_, 0.0), sol(kkt_size_);
    std::copy(r.begin(), r.end(), rhs.begin());
    kkt_->solve(rhs, sol);
    std::copy(sol.begin(), sol.begin() + static_cast<std::ptrdiff_t>(r.size()), z.begin());
    return;
  }
  for (std::size_t i = 0; i < nphi; ++i) z[i] = r[i] / (phi_scale_ * coupling_.phi_mass[i]);
  ic_psi_.apply(r.subspan(nphi), z.subspan(nphi));
}

double CoupledSolver::enthalpy3(std::span<const double> theta3) const { return thermal::enthalpy(system3_, theta3); }

double CoupledSolver::enthalpy1(std::span<const double> theta1) const {
  std::vector<double> m(theta1.size());
  blocks1_.mass.multiply(theta1, m, Exec::serial);
  double s = 0.0;
  for (double v : m) s += v;
  return s;
}

double CoupledSolver::functional_at(const CoupledState& previous, std::span<const double> phi,
                                    std::span<const double> psi) {
  const Fields f = fields_at(previous, phi);
  return evaluate_functional(f.theta3, f.theta1, psi, coupling_);
}

std::vector<double> CoupledSolver::gradient_at(const CoupledState& previous, std::span<const double> phi,
                                               std::span<const double> psi) {
  const Fields f = fields_at(previous, phi);
  std::vector<double> e3, e1;
  residual_at_points(f, psi, e3, e1);
  return gradient(e3, e1);
}

CoupledState CoupledSolver::step(const CoupledState& prev, StepDiagnostics* diagnostics) {
  StepDiagnostics local;
  diag_ = diagnostics ? diagnostics : &local;
  *diag_ = StepDiagnostics{};
  const std::size_t nphi = phi_count();
  const std::size_t npsi = psi_count();
  const std::size_t nu = nphi + npsi;
  const std::size_t nq = coupling_.point_count();
  if (prev.theta3.size() != system3_.nodes || prev.theta1.size() != blocks1_.mass.rows() ||
      prev.phi.size() != nphi || prev.psi.size() != npsi) {
    throw Error(ErrorKind::input, "coupled state does not match the discretization");
  }
  const double e_before = enthalpy3(prev.theta3) + enthalpy1(prev.theta1);

  // controls-free base state and b = -grad J(0)
  const std::vector<double> zero_phi(nphi, 0.0);
  const std::vector<double> zero_psi(npsi, 0.0);
  Fields f = fields_at(prev, zero_phi);
  std::vector<double> e3, e1;
  residual_at_points(f, zero_psi, e3, e1);
  std::vector<double> b = gradient(e3, e1);
  for (double& v : b) v = -v;
  const double bnorm = kernels::norm2(b, Exec::serial);

  std::vector<double> u(nu, 0.0);
  std::vector<double> r = b;
  const bool warm = options_.warm_start && bnorm > 0.0 &&
                    (std::any_of(prev.phi.begin(), prev.phi.end(), [](double v) { return v != 0.0; }) ||
                     std::any_of(prev.psi.begin(), prev.psi.end(), [](double v) { return v != 0.0; }));
  if (warm) {
    std::copy(prev.phi.begin(), prev.phi.end(), u.begin());
    std::copy(prev.psi.begin(), prev.psi.end(), u.begin() + static_cast<std::ptrdiff_t>(nphi));
    std::vector<double> dphi(system3_.nodes), cphi(blocks1_.mass.rows());
    coupling_.d.multiply(prev.phi, dphi, options_.exec);
    coupling_.c.multiply(prev.phi, cphi, Exec::serial);
    const auto v3 = solve3(dphi);
    const auto v1 = solve1(cphi);
    kernels::axpy(1.0, v3, f.theta3, options_.exec);
    kernels::axpy(-1.0, v1, f.theta1, Exec::serial);
    residual_at_points(f, prev.psi, e3, e1);
    r = gradient(e3, e1);
    for (double& v : r) v = -v;
  }
  const auto functional = [&] {
    double j = 0.0;
    for (std::size_t q = 0; q < nq; ++q) j += coupling_.weights[q] * (e3[q] * e3[q] + e1[q] * e1[q]);
    return 0.5 * j;
  };
  diag_->functional_history.push_back(functional());

  double rel = bnorm > 0.0 ? kernels::norm2(r, Exec::serial) / bnorm : 0.0;
  std::vector<double> z(nu), p(nu), hp(nu), bp3(nq), bp1(nq), tq(nq);
  std::vector<double> dp(system3_.nodes), cp(blocks1_.mass.rows());
  double rho_old = 0.0;
  std::size_t it = 0;
  while (rel > options_.tol_outer) {
    if (it == options_.max_outer) {
      std::ostringstream os;
      os << "outer PCG did not reach " << options_.tol_outer << " after " << it << " iterations (residual " << rel
         << ")";
      throw Error(ErrorKind::solver, os.str());
    }
    apply_preconditioner(r, z);
    const double rho = dot(r, z);
    if (it == 0) {
      p = z;
    } else {
      kernels::xpby(z, rho / rho_old, p, Exec::serial);
    }
    rho_old = rho;
    const std::span<const double> pphi(p.data(), nphi);
    const std::span<const double> ppsi(p.data() + nphi, npsi);
    coupling_.d.multiply(pphi, dp, options_.exec);
    coupling_.c.multiply(pphi, cp, Exec::serial);
    const auto v3 = solve3(dp);
    const auto v1 = solve1(cp);
    coupling_.trace3.multiply(v3, bp3, Exec::serial);
    coupling_.trace1.multiply(v1, bp1, Exec::serial);
    coupling_.trace_psi.multiply(ppsi, tq, Exec::serial);
    for (std::size_t q = 0; q < nq; ++q) {
      bp3[q] -= tq[q];
      bp1[q] = -bp1[q] - tq[q];
    }
    hp = gradient(bp3, bp1);
    const double php = dot(p, hp);
    if (!(php > 0.0)) throw Error(ErrorKind::solver, "outer PCG: reduced Hessian is not positive definite");
    const double alpha = rho / php;
    kernels::axpy(alpha, p, u, Exec::serial);
    kernels::axpy(-alpha, hp, r, Exec::serial);
    kernels::axpy(alpha, bp3, e3, Exec::serial);
    kernels::axpy(alpha, bp1, e1, Exec::serial);
    kernels::axpy(alpha, v3, f.theta3, options_.exec);
    kernels::axpy(-alpha, v1, f.theta1, Exec::serial);
    ++it;
    rel = kernels::norm2(r, Exec::serial) / bnorm;
    diag_->functional_history.push_back(functional());
  }

  CoupledState next;
  next.time = prev.time + options_.dt;
  next.phi.assign(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(nphi));
  next.psi.assign(u.begin() + static_cast<std::ptrdiff_t>(nphi), u.end());
  // fresh state solves at the final controls, seeded with the tracked fields
  {
    Fields fresh = fields_at(prev, next.phi, &f);
    next.theta3 = std::move(fresh.theta3);
    next.theta1 = std::move(fresh.theta1);
  }
  diag_->outer_iterations = it;
  diag_->outer_residual = rel;
  diag_->functional = evaluate_functional(next.theta3, next.theta1, next.psi, coupling_);
  diag_->mismatch = continuity_mismatch(next.theta3, next.theta1, coupling_);
  diag_->enthalpy_gain = enthalpy3(next.theta3) + enthalpy1(next.theta1) - e_before;
  double power = 0.0;
  for (double v : blocks1_.load) power += v;
  diag_->injected_energy = options_.dt * power;
  diag_ = nullptr;
  return next;
}

std::vector<Profile1D> profile_1d(const Mesh1D& mesh, std::span<const double> theta1) {
  if (theta1.size() != mesh.node_count()) throw Error(ErrorKind::input, "1D field does not match the mesh");
  std::vector<Profile1D> out(mesh.node_count());
  for (std::size_t n = 0; n < mesh.node_count(); ++n) out[n] = {mesh.node_branch[n], mesh.node_arc[n], theta1[n]};
  std::stable_sort(out.begin(), out.end(), [](const Profile1D& a, const Profile1D& b) {
    return a.branch != b.branch ? a.branch < b.branch : a.arc < b.arc;
  });
  return out;
}

}  // namespace implantheat::coupled
