#include "implantheat/bioheat3d.hpp"

#include <array>
#include <exception>

#include "implantheat/kernels.hpp"

namespace implantheat::thermal {

using geometry::VoxelGrid;
using sparse::CsrMatrix;
using sparse::CsrPattern;

double VolumetricPower::total(const VoxelGrid& grid) const {
  double s = 0.0;
  for (double p : density) s += p;
  return s * grid.voxel_volume();
}

VolumetricPower deposit_power(const geometry::ImplantNetwork& network, const em::BranchLosses& losses,
                              const VoxelGrid& grid) {
  if (losses.linear_density.size() != network.branch_count()) {
    throw Error(ErrorKind::input, "loss table does not match the network");
  }
  VolumetricPower out;
  out.density.assign(grid.voxel_count(), 0.0);
  const double inv_volume = 1.0 / grid.voxel_volume();
  for (std::size_t b = 0; b < network.branch_count(); ++b) {
    const double pl = losses.linear_density[b];
    if (pl == 0.0) continue;
    for (const auto& piece : geometry::clip_branch_to_voxels(network, b, grid)) {
      out.density[piece.voxel] += pl * piece.length * inv_volume;
    }
  }
  return out;
}

namespace {

// Neighbour window of a node along one axis: offsets lo..hi in {-1, 0, 1}.
struct Window {
  int lo[3];
  int hi[3];
  int count(int axis) const { return hi[axis] - lo[axis] + 1; }
};

Window window_of(const std::array<std::size_t, 3>& ijk, const std::array<std::size_t, 3>& node_dims) {
  Window w{};
  for (int a = 0; a < 3; ++a) {
    w.lo[a] = ijk[a] > 0 ? -1 : 0;
    w.hi[a] = ijk[a] + 1 < node_dims[a] ? 1 : 0;
  }
  return w;
}

// Position of neighbour (di, dj, dk) inside the node's row.
std::size_t slot(const Window& w, int di, int dj, int dk) {
  return static_cast<std::size_t>(((dk - w.lo[2]) * w.count(1) + (dj - w.lo[1])) * w.count(0) + (di - w.lo[0]));
}

struct Coefficients {
  double rho_c;
  double lambda;
  double perfusion;
};

std::vector<Coefficients> voxel_coefficients(const VoxelGrid& grid, const geometry::MaterialTable& table) {
  grid.check_materials(table);
  std::vector<Coefficients> out(grid.voxel_count());
  for (std::size_t v = 0; v < out.size(); ++v) {
    const auto& m = table.at(grid.material(v));
    out[v] = {m.volumetric_heat_capacity(), m.conductivity, m.perfusion};
  }
  return out;
}

// 1D reference matrices on one edge: mass h/6 [2 1; 1 2], stiffness 1/h [1 -1; -1 1].
struct Edge1D {
  double m[2][2];
  double k[2][2];
};

Edge1D edge(double h) {
  return {{{h / 3.0, h / 6.0}, {h / 6.0, h / 3.0}}, {{1.0 / h, -1.0 / h}, {-1.0 / h, 1.0 / h}}};
}

// Element matrices of one voxel: unit-coefficient mass, stiffness and the
// face masses of the six faces (face f = 2 * axis + side).
struct ElementMatrices {
  double mass[8][8];
  double stiff[8][8];
  double face[6][8][8];
};

ElementMatrices element_matrices(const Vec3& h) {
  const Edge1D ex = edge(h.x);
  const Edge1D ey = edge(h.y);
  const Edge1D ez = edge(h.z);
  const Edge1D* e[3] = {&ex, &ey, &ez};
  ElementMatrices em{};
  for (int a = 0; a < 8; ++a) {
    const int ai[3] = {a & 1, (a >> 1) & 1, (a >> 2) & 1};
    for (int b = 0; b < 8; ++b) {
      const int bi[3] = {b & 1, (b >> 1) & 1, (b >> 2) & 1};
      const double mx = ex.m[ai[0]][bi[0]];
      const double my = ey.m[ai[1]][bi[1]];
      const double mz = ez.m[ai[2]][bi[2]];
      em.mass[a][b] = mx * my * mz;
      em.stiff[a][b] = ex.k[ai[0]][bi[0]] * my * mz + mx * ey.k[ai[1]][bi[1]] * mz + mx * my * ez.k[ai[2]][bi[2]];
      for (int axis = 0; axis < 3; ++axis) {
        for (int side = 0; side < 2; ++side) {
          double v = 0.0;
          if (ai[axis] == side && bi[axis] == side) {
            v = 1.0;
            for (int t = 0; t < 3; ++t) {
              if (t != axis) v *= e[t]->m[ai[t]][bi[t]];
            }
          }
          em.face[2 * axis + side][a][b] = v;
        }
      }
    }
  }
  return em;
}

// Exterior faces of voxel (i, j, k) as a bit mask over face ids.
unsigned exterior_faces(const std::array<std::size_t, 3>& v, const std::array<std::size_t, 3>& dims) {
  unsigned mask = 0;
  for (int axis = 0; axis < 3; ++axis) {
    if (v[axis] == 0) mask |= 1u << (2 * axis);
    if (v[axis] + 1 == dims[axis]) mask |= 1u << (2 * axis + 1);
  }
  return mask;
}

}  // namespace

std::shared_ptr<const CsrPattern> nodal_pattern(const VoxelGrid& grid) {
  const auto nd = grid.node_dims();
  auto p = std::make_shared<CsrPattern>();
  const std::size_t n = grid.node_count();
  p->rows = n;
  p->cols = n;
  p->offsets.resize(n + 1);
  p->offsets[0] = 0;
  for (std::size_t node = 0; node < n; ++node) {
    const Window w = window_of(grid.node_ijk(node), nd);
    p->offsets[node + 1] = p->offsets[node] + static_cast<std::size_t>(w.count(0) * w.count(1) * w.count(2));
  }
  p->columns.resize(p->offsets[n]);
  for (std::size_t node = 0; node < n; ++node) {
    const auto ijk = grid.node_ijk(node);
    const Window w = window_of(ijk, nd);
    std::size_t pos = p->offsets[node];
    for (int dk = w.lo[2]; dk <= w.hi[2]; ++dk) {
      for (int dj = w.lo[1]; dj <= w.hi[1]; ++dj) {
        for (int di = w.lo[0]; di <= w.hi[0]; ++di) {
          p->columns[pos++] = static_cast<std::uint32_t>(grid.node_index(ijk[0] + di, ijk[1] + dj, ijk[2] + dk));
        }
      }
    }
  }
  return p;
}

FemSystem3D assemble_3d(const VoxelGrid& grid, const geometry::MaterialTable& materials, double h_amb, Exec exec) {
  if (!(h_amb >= 0.0) || !std::isfinite(h_amb)) throw Error(ErrorKind::input, "h_amb must be non-negative");
  const auto coef = voxel_coefficients(grid, materials);
  const auto pattern = nodal_pattern(grid);
  const std::size_t nnz = pattern->nnz();
  std::vector<double> mv(nnz, 0.0), kv(nnz, 0.0), pv(nnz, 0.0), bv(nnz, 0.0);
  const ElementMatrices em = element_matrices(grid.spacing());
  const auto dims = grid.dims();
  const auto nd = grid.node_dims();

  if (exec == Exec::serial) {
    for (std::size_t vk = 0; vk < dims[2]; ++vk) {
      for (std::size_t vj = 0; vj < dims[1]; ++vj) {
        for (std::size_t vi = 0; vi < dims[0]; ++vi) {
          const auto& c = coef[grid.voxel_index(vi, vj, vk)];
          const unsigned faces = exterior_faces({vi, vj, vk}, dims);
          for (int a = 0; a < 8; ++a) {
            const std::array<std::size_t, 3> na = {vi + (a & 1), vj + ((a >> 1) & 1), vk + ((a >> 2) & 1)};
            const std::size_t row = grid.node_index(na[0], na[1], na[2]);
            const Window w = window_of(na, nd);
            for (int b = 0; b < 8; ++b) {
              const int di = (b & 1) - (a & 1);
              const int dj = ((b >> 1) & 1) - ((a >> 1) & 1);
              const int dk = ((b >> 2) & 1) - ((a >> 2) & 1);
              const std::size_t pos = pattern->offsets[row] + slot(w, di, dj, dk);
              mv[pos] += c.rho_c * em.mass[a][b];
              kv[pos] += c.lambda * em.stiff[a][b];
              pv[pos] += c.perfusion * em.mass[a][b];
              for (unsigned f = 0; f < 6; ++f) {
                if (faces & (1u << f)) bv[pos] += h_amb * em.face[f][a][b];
              }
            }
          }
        }
      }
    }
  } else {
    const auto n = static_cast<std::ptrdiff_t>(grid.node_count());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t node = 0; node < n; ++node) {
      const auto ijk = grid.node_ijk(static_cast<std::size_t>(node));
      const Window w = window_of(ijk, nd);
      const std::size_t base = pattern->offsets[static_cast<std::size_t>(node)];
      // voxels whose corner this node is: lower corner at ijk - s, s in {0,1}^3
      for (int s = 0; s < 8; ++s) {
        const int sx = s & 1, sy = (s >> 1) & 1, sz = (s >> 2) & 1;
        if ((sx && ijk[0] == 0) || (sy && ijk[1] == 0) || (sz && ijk[2] == 0)) continue;
        const std::array<std::size_t, 3> v = {ijk[0] - sx, ijk[1] - sy, ijk[2] - sz};
        if (v[0] >= dims[0] || v[1] >= dims[1] || v[2] >= dims[2]) continue;
        const auto& c = coef[grid.voxel_index(v[0], v[1], v[2])];
        const unsigned faces = exterior_faces(v, dims);
        const int a = sx | (sy << 1) | (sz << 2);
        for (int b = 0; b < 8; ++b) {
          const std::size_t pos =
              base + slot(w, (b & 1) - sx, ((b >> 1) & 1) - sy, ((b >> 2) & 1) - sz);
          mv[pos] += c.rho_c * em.mass[a][b];
          kv[pos] += c.lambda * em.stiff[a][b];
          pv[pos] += c.perfusion * em.mass[a][b];
          for (unsigned f = 0; f < 6; ++f) {
            if (faces & (1u << f)) bv[pos] += h_amb * em.face[f][a][b];
          }
        }
      }
    }
  }
  FemSystem3D sys;
  sys.nodes = grid.node_count();
  sys.mass = CsrMatrix(pattern, std::move(mv));
  sys.stiffness = CsrMatrix(pattern, std::move(kv));
  sys.perfusion = CsrMatrix(pattern, std::move(pv));
  sys.robin = CsrMatrix(pattern, std::move(bv));
  return sys;
}

std::vector<double> load_vector(const VoxelGrid& grid, const VolumetricPower& power) {
  if (power.density.size() != grid.voxel_count()) throw Error(ErrorKind::input, "power field does not match grid");
  std::vector<double> f(grid.node_count(), 0.0);
  const double share = grid.voxel_volume() / 8.0;
  const auto dims = grid.dims();
  for (std::size_t vk = 0; vk < dims[2]; ++vk) {
    for (std::size_t vj = 0; vj < dims[1]; ++vj) {
      for (std::size_t vi = 0; vi < dims[0]; ++vi) {
        const double p = power.density[grid.voxel_index(vi, vj, vk)];
        if (p == 0.0) continue;
        for (int a = 0; a < 8; ++a) {
          f[grid.node_index(vi + (a & 1), vj + ((a >> 1) & 1), vk + ((a >> 2) & 1))] += p * share;
        }
      }
    }
  }
  return f;
}

namespace {

sparse::SparseSpd backward_euler_matrix(const FemSystem3D& s, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorKind::input, "time step must be positive");
  const double w[4] = {1.0 / dt, 1.0, 1.0, 1.0};
  const CsrMatrix* terms[4] = {&s.mass, &s.stiffness, &s.perfusion, &s.robin};
  return sparse::SparseSpd(sparse::linear_combination(w, terms));
}

}  // namespace

ImplicitStepper3D::ImplicitStepper3D(const FemSystem3D& system, double dt, double rtol, Exec exec)
    : system_(system), dt_(dt), rtol_(rtol), exec_(exec), matrix_(backward_euler_matrix(system, dt)), ic_(matrix_) {
  const std::vector<double> ones(matrix_.size(), 1.0);
  a_ones_.resize(matrix_.size());
  matrix_.multiply(ones, a_ones_, exec_);
  for (double v : a_ones_) ones_a_ones_ += v;
}

void ImplicitStepper3D::history(std::span<const double> prev, std::span<double> out) const {
  system_.mass.multiply(prev, out, exec_);
  const double inv = 1.0 / dt_;
  for (double& v : out) v *= inv;
}

sparse::PcgResult ImplicitStepper3D::solve(std::span<const double> rhs, std::span<const double> x0) const {
  sparse::PcgOptions opt;
  opt.rtol = rtol_;
  opt.exec = exec_;
  opt.max_iterations = 5000;
  auto res = sparse::pcg(sparse::MatrixOperator(matrix_, exec_), rhs, ic_, opt, x0);
  const double bnorm = kernels::norm2(rhs, exec_);
  if (bnorm == 0.0 || !(ones_a_ones_ > 0.0)) return res;

  std::vector<double> r(rhs.begin(), rhs.end()), ax(rhs.size());
  matrix_.multiply(res.x, ax, exec_);
  kernels::axpy(-1.0, ax, r, exec_);
  double rsum = 0.0;
  for (double v : r) rsum += v;
  const double c = rsum / ones_a_ones_;
  for (double& v : res.x) v += c;
  kernels::axpy(-c, a_ones_, r, exec_);
  res.relative_residual = kernels::norm2(r, exec_) / bnorm;
  if (!res.residual_history.empty()) res.residual_history.back() = res.relative_residual;
  return res;
}

SeedSolver::SeedSolver(const FemSystem3D& system, std::vector<double> load, double dt, double rtol, Exec exec)
    : stepper_(system, dt, rtol, exec), load_(std::move(load)) {
  if (load_.size() != system.nodes) throw Error(ErrorKind::input, "seed load does not match the grid");
}

TemperatureField3D SeedSolver::step(const TemperatureField3D& state) {
  if (state.values.size() != stepper_.size()) throw Error(ErrorKind::input, "state does not match the grid");
  // increment form: A d = f - (A - M/dt) theta, so the solver tolerance
  // applies to the change over the step
  const std::size_t n = stepper_.size();
  std::vector<double> rhs(load_), tmp(n);
  stepper_.matrix().multiply(state.values, tmp);
  kernels::axpy(-1.0, tmp, rhs);
  stepper_.history(state.values, tmp);
  kernels::axpy(1.0, tmp, rhs);
  auto res = stepper_.solve(rhs);
  last_iterations_ = res.iterations;
  last_residual_ = res.relative_residual;
  kernels::axpy(1.0, state.values, res.x);
  return {std::move(res.x), state.time + stepper_.dt()};
}

double enthalpy(const FemSystem3D& system, std::span<const double> theta) {
  std::vector<double> mt(theta.size());
  system.mass.multiply(theta, mt);
  double s = 0.0;
  for (double v : mt) s += v;
  return s;
}

}  // namespace implantheat::thermal
