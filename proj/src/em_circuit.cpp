#include "implantheat/em_circuit.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "implantheat/quadrature.hpp"

namespace implantheat::em {

using geometry::ImplantNetwork;
using geometry::Segment;

double branch_resistance(double length, double radius, double conductivity) {
  if (!(length > 0.0) || !(radius > 0.0) || !(conductivity > 0.0)) {
    throw Error(ErrorKind::input, "branch resistance needs positive length, radius and conductivity");
  }
  return length / (conductivity * kPi * radius * radius);
}

double internal_inductance(double length) { return kMu0 * length / (8.0 * kPi); }

double self_inductance(double length, double radius) {
  if (!(length > 0.0) || !(radius > 0.0)) throw Error(ErrorKind::input, "self inductance needs positive l and r");
  return kMu0 * length / (2.0 * kPi) * (std::log(2.0 * length / radius) - 1.0) + internal_inductance(length);
}

namespace {

constexpr double kMuOver4Pi = kMu0 / (4.0 * kPi);
constexpr int kMaxDepth = 40;

// Integral of 1/|x - y| over two straight filaments meeting at a common
// vertex, with lengths l and m and far-end separation far.
double vertex_integral(double l, double m, double far) {
  const double t1 = m / (l + far);
  const double t2 = l / (m + far);
  if (t1 >= 1.0 || t2 >= 1.0) throw Error(ErrorKind::geometry, "overlapping filaments meet at a vertex");
  return 2.0 * (l * std::atanh(t1) + m * std::atanh(t2));
}

// Integral of 1/|x - y| with straight filaments a0 + s da and b0 + t db,
// s, t in [0, 1]; lengths are folded in (result has units of length).
double gauss_integral(const Point3& a0, const Vec3& da, const Point3& b0, const Vec3& db, int order) {
  const GaussRule& g = gauss_legendre(order);
  const double scale = norm(da) * norm(db);
  double s = 0.0;
  for (int i = 0; i < order; ++i) {
    const Point3 x = a0 + da * g.nodes[i];
    double inner = 0.0;
    for (int j = 0; j < order; ++j) inner += g.weights[j] / distance(x, b0 + db * g.nodes[j]);
    s += g.weights[i] * inner;
  }
  return s * scale;
}

double adaptive_integral(const Point3& a0, const Vec3& da, const Point3& b0, const Vec3& db, int depth) {
  const double la = norm(da);
  const double lb = norm(db);
  const double longest = std::max(la, lb);
  const double gap = distance(a0 + da * 0.5, b0 + db * 0.5) - 0.5 * (la + lb);
  const double q = gap / longest;
  if (q >= 8.0) return gauss_integral(a0, da, b0, db, 2);
  if (q >= 2.0) return gauss_integral(a0, da, b0, db, 4);
  if (q >= 0.5) return gauss_integral(a0, da, b0, db, 8);
  if (depth >= kMaxDepth) return gauss_integral(a0, da, b0, db, 16);
  if (la >= lb) {
    const Vec3 h = da * 0.5;
    return adaptive_integral(a0, h, b0, db, depth + 1) + adaptive_integral(a0 + h, h, b0, db, depth + 1);
  }
  const Vec3 h = db * 0.5;
  return adaptive_integral(a0, da, b0, h, depth + 1) + adaptive_integral(a0, da, b0 + h, h, depth + 1);
}

void check_collinear_overlap(const Segment& a, const Segment& b) {
  const Vec3 da = a.b - a.a;
  const Vec3 db = b.b - b.a;
  const double la = norm(da);
  const double lb = norm(db);
  const double tol = 1e-9 * std::max(la, lb);
  if (norm(cross(da, db)) > tol * std::max(la, lb)) return;
  const Vec3 ta = da * (1.0 / la);
  const Vec3 off = b.a - a.a;
  if (norm(off - ta * dot(off, ta)) > tol) return;
  const double s0 = dot(b.a - a.a, ta);
  const double s1 = dot(b.b - a.a, ta);
  const double overlap = std::min(la, std::max(s0, s1)) - std::max(0.0, std::min(s0, s1));
  if (overlap > tol) throw Error(ErrorKind::geometry, "collinear filaments overlap: mutual inductance is singular");
}

}  // namespace

double mutual_inductance(const Segment& a, const Segment& b) {
  const Vec3 da = a.b - a.a;
  const Vec3 db = b.b - b.a;
  const double la = norm(da);
  const double lb = norm(db);
  if (!(la > 0.0) || !(lb > 0.0)) throw Error(ErrorKind::geometry, "zero-length filament");
  const double orientation = dot(da, db) / (la * lb);
  if (orientation == 0.0) return 0.0;
  check_collinear_overlap(a, b);

  // shared endpoint: closed form around the common vertex
  const double tol = 1e-12 * std::max(la, lb);
  const Point3* ends_a[2] = {&a.a, &a.b};
  const Point3* ends_b[2] = {&b.a, &b.b};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      if (distance(*ends_a[i], *ends_b[j]) <= tol) {
        const double far = distance(*ends_a[1 - i], *ends_b[1 - j]);
        return kMuOver4Pi * orientation * vertex_integral(la, lb, far);
      }
    }
  }
  return kMuOver4Pi * orientation * adaptive_integral(a.a, da, b.a, db, 0);
}

BranchImpedance assemble_impedances(const ImplantNetwork& network, const InductanceOptions& options) {
  const std::size_t n = network.branch_count();
  BranchImpedance out;
  out.resistance.resize(n);
  out.inductance = SymmetricMatrix(n);
  for (std::size_t b = 0; b < n; ++b) {
    out.resistance[b] = branch_resistance(network.length(b), network.radius(), network.conductivity());
    out.inductance.set(b, b, self_inductance(network.length(b), network.radius()));
  }
  std::vector<Segment> segs(n);
  for (std::size_t b = 0; b < n; ++b) segs[b] = network.segment(b);

  const double floor = options.mutual_floor;
  std::size_t dropped = 0;
  const auto row = [&](std::size_t i) {
    std::size_t local_dropped = 0;
    for (std::size_t j = 0; j < i; ++j) {
      double m = mutual_inductance(segs[i], segs[j]);
      if (floor > 0.0 && std::abs(m) < floor && m != 0.0) {
        m = 0.0;
        ++local_dropped;
      }
      out.inductance.set(i, j, m);
    }
    return local_dropped;
  };
  if (options.exec == Exec::serial) {
    for (std::size_t i = 0; i < n; ++i) dropped += row(i);
  } else {
    const auto rows = static_cast<std::ptrdiff_t>(n);
    // an exception may not escape an OpenMP region: capture the first one
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : dropped)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      try {
        dropped += row(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical(implantheat_mutual_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  out.dropped_mutuals = dropped;
  return out;
}

LoopSystem assemble_loop_system(const ImplantNetwork& network, const BranchImpedance& impedance,
                                geometry::LoopBasis basis, const field::FieldSource& source, Exec exec) {
  field::validate(source);
  const std::size_t nb = network.branch_count();
  if (impedance.size() != nb) throw Error(ErrorKind::input, "impedance size does not match the network");
  LoopSystem sys;
  sys.omega = field::angular_frequency(source);
  sys.loops = basis.loop_count();

  // branch EMFs: e = -j omega * integral of A along the branch
  sys.branch_emf.resize(nb);
  const Complex mj_omega(0.0, -sys.omega);
  {
    const auto count = static_cast<std::ptrdiff_t>(nb);
    std::exception_ptr failure;
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
    for (std::ptrdiff_t b = 0; b < count; ++b) {
      try {
        const auto s = network.segment(static_cast<std::size_t>(b));
        sys.branch_emf[static_cast<std::size_t>(b)] = mj_omega * field::line_integral(source, s.a, s.b);
      } catch (...) {
#pragma omp critical(implantheat_emf_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  const std::size_t nl = sys.loops;
  sys.emf.assign(nl, Complex{});
  sys.z.assign(nl * nl, Complex{});
  for (std::size_t k = 0; k < nl; ++k) {
    for (const auto& sb : basis.cycles[k]) sys.emf[k] += static_cast<double>(sb.sign) * sys.branch_emf[sb.branch];
  }

  // Z = S (R + j omega L) S^T, one row of T = S L at a time
  const auto& cycles = basis.cycles;
  const auto fill_row = [&](std::size_t k, std::vector<double>& t) {
    std::fill(t.begin(), t.end(), 0.0);
    for (const auto& sb : cycles[k]) {
      const double s = static_cast<double>(sb.sign);
      const std::size_t b = sb.branch;
      const auto lrow = impedance.inductance.row(b);
      for (std::size_t c = 0; c < nb; ++c) t[c] += s * lrow[c];
    }
    for (std::size_t m = k; m < nl; ++m) {
      double x = 0.0;
      for (const auto& sb : cycles[m]) x += static_cast<double>(sb.sign) * t[sb.branch];
      sys.z[k * nl + m] = Complex(0.0, sys.omega * x);
    }
  };
  const auto count = static_cast<std::ptrdiff_t>(nl);
#pragma omp parallel if (exec == Exec::parallel)
  {
    std::vector<double> t(nb);
#pragma omp for schedule(dynamic, 4)
    for (std::ptrdiff_t k = 0; k < count; ++k) fill_row(static_cast<std::size_t>(k), t);
  }

  // resistive part through a sparse scatter: R only couples loops sharing branches
  std::vector<std::vector<std::pair<std::size_t, int>>> loops_of_branch(nb);
  for (std::size_t k = 0; k < nl; ++k) {
    for (const auto& sb : cycles[k]) loops_of_branch[sb.branch].emplace_back(k, sb.sign);
  }
  for (std::size_t b = 0; b < nb; ++b) {
    const double r = impedance.resistance[b];
    for (const auto& [k, sk] : loops_of_branch[b]) {
      for (const auto& [m, sm] : loops_of_branch[b]) {
        if (m >= k) sys.z[k * nl + m] += static_cast<double>(sk * sm) * r;
      }
    }
  }
  for (std::size_t k = 0; k < nl; ++k) {
    for (std::size_t m = k + 1; m < nl; ++m) sys.z[m * nl + k] = sys.z[k * nl + m];
  }
  sys.basis = std::move(basis);
  return sys;
}

ComplexLdlt::ComplexLdlt(std::span<const Complex> matrix, std::size_t n) : n_(n) {
  if (matrix.size() != n * n) throw Error(ErrorKind::input, "LDLT: matrix size mismatch");
  lre_.assign(n * n, 0.0);
  lim_.assign(n * n, 0.0);
  d_.assign(n, Complex{});
  // Crout, row by row. Row i first holds U = L D (k < j), then L itself.
  std::vector<double> ure(n), uim(n);
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(matrix[i * n + i]));
  for (std::size_t i = 0; i < n; ++i) {
    double* lr_i = lre_.data() + i * n;
    double* li_i = lim_.data() + i * n;
    for (std::size_t j = 0; j < i; ++j) {
      const double* lr_j = lre_.data() + j * n;
      const double* li_j = lim_.data() + j * n;
      double sr = 0.0;
      double si = 0.0;
#pragma omp simd reduction(+ : sr, si)
      for (std::size_t k = 0; k < j; ++k) {
        sr += ure[k] * lr_j[k] - uim[k] * li_j[k];
        si += ure[k] * li_j[k] + uim[k] * lr_j[k];
      }
      const Complex t = matrix[i * n + j] - Complex(sr, si);
      ure[j] = t.real();
      uim[j] = t.imag();
      const Complex l = t / d_[j];
      lr_i[j] = l.real();
      li_i[j] = l.imag();
    }
    double sr = 0.0;
    double si = 0.0;
#pragma omp simd reduction(+ : sr, si)
    for (std::size_t k = 0; k < i; ++k) {
      sr += ure[k] * lr_i[k] - uim[k] * li_i[k];
      si += ure[k] * li_i[k] + uim[k] * lr_i[k];
    }
    d_[i] = matrix[i * n + i] - Complex(sr, si);
    if (!(std::abs(d_[i]) > 1e-14 * scale) || !std::isfinite(std::abs(d_[i]))) {
      throw Error(ErrorKind::solver, "loop impedance matrix is singular at loop " + std::to_string(i) +
                                         " (duplicate branch geometry?)");
    }
    lr_i[i] = 1.0;
  }
}

std::vector<Complex> ComplexLdlt::solve(std::span<const Complex> rhs) const {
  const std::size_t n = n_;
  if (rhs.size() != n) throw Error(ErrorKind::input, "LDLT: rhs size mismatch");
  std::vector<Complex> x(rhs.begin(), rhs.end());
  for (std::size_t i = 0; i < n; ++i) {
    Complex s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= Complex(lre_[i * n + k], lim_[i * n + k]) * x[k];
    x[i] = s;
  }
  for (std::size_t i = 0; i < n; ++i) x[i] /= d_[i];
  for (std::size_t i = n; i-- > 0;) {
    const Complex xi = x[i];
    for (std::size_t k = 0; k < i; ++k) x[k] -= Complex(lre_[i * n + k], lim_[i * n + k]) * xi;
  }
  return x;
}

BranchCurrents solve_loop_currents(const LoopSystem& system, const ImplantNetwork& network, Exec) {
  const std::size_t nb = network.branch_count();
  BranchCurrents out;
  out.branch.assign(nb, Complex{});
  if (system.loops == 0) return out;
  const ComplexLdlt ldlt(system.z, system.loops);
  out.loop = ldlt.solve(system.emf);
  for (std::size_t k = 0; k < system.loops; ++k) {
    for (const auto& sb : system.basis.cycles[k]) out.branch[sb.branch] += static_cast<double>(sb.sign) * out.loop[k];
  }
  std::vector<Complex> node_sum(network.node_count());
  double imax = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    node_sum[network.branches()[b].from] -= out.branch[b];
    node_sum[network.branches()[b].to] += out.branch[b];
    imax = std::max(imax, std::abs(out.branch[b]));
  }
  double worst = 0.0;
  for (const auto& s : node_sum) worst = std::max(worst, std::abs(s));
  out.kcl_residual = imax > 0.0 ? worst / imax : 0.0;
  return out;
}

BranchLosses branch_losses(const ImplantNetwork& network, const BranchImpedance& impedance,
                           std::span<const Complex> branch_currents) {
  const std::size_t nb = network.branch_count();
  if (branch_currents.size() != nb || impedance.size() != nb) {
    throw Error(ErrorKind::input, "branch losses: size mismatch");
  }
  BranchLosses out;
  out.linear_density.resize(nb);
  out.power.resize(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const double p = 0.5 * impedance.resistance[b] * std::norm(branch_currents[b]);
    out.power[b] = p;
    out.linear_density[b] = p / network.length(b);
    out.total += p;
  }
  return out;
}

BranchLosses losses_from_density(const ImplantNetwork& network, std::vector<double> linear_density) {
  if (linear_density.size() != network.branch_count()) {
    throw Error(ErrorKind::input, "loss table has " + std::to_string(linear_density.size()) + " entries for " +
                                      std::to_string(network.branch_count()) + " branches");
  }
  BranchLosses out;
  out.power.resize(linear_density.size());
  for (std::size_t b = 0; b < linear_density.size(); ++b) {
    if (!(linear_density[b] >= 0.0) || !std::isfinite(linear_density[b])) {
      throw Error(ErrorKind::input, "negative or non-finite loss density on branch " + std::to_string(b));
    }
    out.power[b] = linear_density[b] * network.length(b);
    out.total += out.power[b];
  }
  out.linear_density = std::move(linear_density);
  return out;
}

EmSolution solve_em(const ImplantNetwork& network, const field::FieldSource& source, const InductanceOptions& options,
                    geometry::SpanningTree tree) {
  EmSolution sol;
  sol.impedance = assemble_impedances(network, options);
  sol.system = assemble_loop_system(network, sol.impedance, geometry::fundamental_loops(network, tree), source,
                                    options.exec);
  sol.currents = solve_loop_currents(sol.system, network, options.exec);
  sol.losses = branch_losses(network, sol.impedance, sol.currents.branch);
  double p = 0.0;
  for (std::size_t k = 0; k < sol.system.loops; ++k) p += (std::conj(sol.currents.loop[k]) * sol.system.emf[k]).real();
  sol.source_power = 0.5 * p;
  return sol;
}

}  // namespace implantheat::em
