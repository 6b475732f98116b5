#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "implantheat/coupled3d1d.hpp"
#include "implantheat/scenarios.hpp"
#include "support.hpp"

using namespace implantheat;
using namespace implantheat::coupled;
using geometry::Material;
using geometry::VoxelGrid;
using testsupport::rel_err;

namespace {

const Material kGel{0.624, 1006.0, 4200.0, 0.0};
const Material kTitanium{17.0, 4510.0, 523.0, 0.0};
constexpr double kR = 0.3e-3;

geometry::MaterialTable gel_table() {
  geometry::MaterialTable t;
  t.add(1, "gel", kGel);
  return t;
}

geometry::ImplantNetwork line(Point3 a, Point3 b) { return geometry::ImplantNetwork({a, b}, {{0, 1}}, kR, 1.82e6); }

// Small heated-wire problem: an oblique titanium wire in a 10 mm gel cube.
struct Fixture {
  VoxelGrid grid{{0, 0, 0}, {1e-3, 1e-3, 1e-3}, {10, 10, 10}, 1};
  geometry::ImplantNetwork net;
  Mesh1D mesh;
  ControlMesh control;
  Blocks1D blocks;
  thermal::FemSystem3D sys3;
  CouplingAssembly coupling;

  explicit Fixture(double load_w_per_m = 2.0, double h_hat = 0.5e-3,
                   geometry::ImplantNetwork n = line({1.3e-3, 4.6e-3, 5.1e-3}, {8.7e-3, 5.7e-3, 4.4e-3}))
      : net(std::move(n)),
        mesh(build_mesh1d(net, h_hat)),
        control(build_control_mesh(net, mesh, 2)),
        blocks(assemble_1d(mesh, kR, kTitanium,
                           em::losses_from_density(net, std::vector<double>(net.branch_count(), load_w_per_m)))),
        sys3(thermal::assemble_3d(grid, gel_table(), 0.0)),
        coupling(assemble_coupling(grid, mesh, control, kR)) {}
};

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("1D mesh: cell and node counts") {
  const auto one = line({0, 0, 0}, {10e-3, 0, 0});
  const auto m = build_mesh1d(one, 2e-3);
  CHECK(m.cell_count() == 5);
  CHECK(m.node_count() == 6);
  CHECK(m.total_length() == doctest::Approx(10e-3));

  const auto sq = geometry::build_network(testsupport::ladder(1, 1, 10e-3), kR, 1.82e6);
  const auto ms = build_mesh1d(sq, 10e-3);
  CHECK(ms.cell_count() == 4);
  CHECK(ms.node_count() == 4);

  const double pitch = 0.093 / 36.0;
  const auto net = geometry::build_network(
      scenarios::tile_cranial_mesh(scenarios::truncated_square_cell(pitch), 0.093), kR, 1.82e6);
  double longest = 0.0;
  for (double l : net.lengths()) longest = std::max(longest, l);
  const auto mc = build_mesh1d(net, longest * (1 + 1e-9));
  CHECK(mc.node_count() == net.node_count());
  CHECK(mc.cell_count() == net.branch_count());
}

TEST_CASE("control mesh: coarsening and remainder rule") {
  const auto one = line({0, 0, 0}, {10e-3, 0, 0});
  const auto m = build_mesh1d(one, 1e-3);
  const auto c1 = build_control_mesh(one, m, 1);
  REQUIRE(c1.phi_count() == m.cell_count());
  for (std::size_t k = 0; k < m.cell_count(); ++k) CHECK(c1.control_of_cell[k] == k);

  const auto c3 = build_control_mesh(one, m, 3);
  REQUIRE(c3.phi_count() == 3);
  CHECK(c3.cells[0].last_cell - c3.cells[0].first_cell == 3);
  CHECK(c3.cells[1].last_cell - c3.cells[1].first_cell == 3);
  CHECK(c3.cells[2].last_cell - c3.cells[2].first_cell == 4);
  CHECK(c3.psi_nodes == 4);

  const double pitch = 0.093 / 36.0;
  const auto net = geometry::build_network(
      scenarios::tile_cranial_mesh(scenarios::truncated_square_cell(pitch), 0.093), kR, 1.82e6);
  const auto mesh = build_mesh1d(net, 0.5 * net.total_length() / double(net.branch_count()));
  const auto cm = build_control_mesh(net, mesh, 2);
  std::vector<int> hits(mesh.cell_count(), 0);
  for (const auto& cc : cm.cells)
    for (std::size_t k = cc.first_cell; k < cc.last_cell; ++k) ++hits[k];
  for (std::size_t k = 0; k < hits.size(); ++k) {
    CHECK(hits[k] == 1);
    CHECK(cm.cells[cm.control_of_cell[k]].branch == mesh.cells[k].branch);
  }
  CHECK_THROWS_AS(build_control_mesh(net, mesh, 0), Error);
}

TEST_CASE("1D blocks: load totals and matrix sums") {
  const auto net = geometry::build_network(testsupport::ladder(3, 2, 4e-3), kR, 1.82e6);
  const auto mesh = build_mesh1d(net, 1e-3);
  const auto zero = assemble_1d(mesh, kR, kTitanium, em::losses_from_density(net, std::vector<double>(net.branch_count(), 0.0)));
  for (double v : zero.load) CHECK(v == 0.0);
  const auto unit = assemble_1d(mesh, kR, kTitanium, em::losses_from_density(net, std::vector<double>(net.branch_count(), 1.0)));
  CHECK(rel_err(sum(unit.load), net.total_length()) < 1e-13);
  const double area = kPi * kR * kR;
  CHECK(rel_err(sum(unit.mass.values()), area * kTitanium.volumetric_heat_capacity() * net.total_length()) < 1e-13);
  std::vector<double> ones(mesh.node_count(), 1.0), k1(mesh.node_count());
  unit.stiffness.multiply(ones, k1);
  for (double v : k1) CHECK(std::abs(v) < 1e-12 * area * kTitanium.conductivity / 1e-3);
}

TEST_CASE("coupling assembly: partition of unity and support") {
  Fixture fx;
  const auto& c = fx.coupling;
  std::vector<double> col3(c.d.cols(), 0.0), col1(c.c.cols(), 0.0);
  const std::vector<double> ones3(c.d.rows(), 1.0), ones1(c.c.rows(), 1.0);
  c.d.multiply_transposed(ones3, col3);
  c.c.multiply_transposed(ones1, col1);
  for (std::size_t k = 0; k < c.phi_mass.size(); ++k) {
    CHECK(rel_err(col3[k], 2 * kPi * kR * c.phi_mass[k]) < 1e-13);
    CHECK(rel_err(col1[k], 2 * kPi * kR * c.phi_mass[k]) < 1e-13);
  }
  CHECK(rel_err(sum(c.weights), fx.net.total_length()) < 1e-13);
  CHECK(rel_err(sum(c.psi_mass.values()), fx.net.total_length()) < 1e-13);

  // one short cell centred in a voxel touches exactly its 8 corners
  const auto inner = line({2.3e-3, 2.5e-3, 2.5e-3}, {2.7e-3, 2.5e-3, 2.5e-3});
  const auto m = build_mesh1d(inner, 1.0);
  const auto cm = build_control_mesh(inner, m, 1);
  const auto ca = assemble_coupling(fx.grid, m, cm, kR);
  std::set<std::size_t> touched;
  for (std::size_t r = 0; r < ca.d.rows(); ++r)
    if (ca.d.at(r, 0) != 0.0) touched.insert(r);
  CHECK(touched.size() == 8);
}

TEST_CASE("coupling assembly: traces integrate affine fields exactly") {
  auto segs = testsupport::polygon(7, 3e-3, {5e-3, 5e-3, 5.2e-3});
  const auto net = geometry::build_network(segs, kR, 1.82e6);
  const VoxelGrid grid({0, 0, 0}, {1e-3, 1e-3, 1e-3}, {10, 10, 10}, 1);
  const auto mesh = build_mesh1d(net, 0.7e-3);
  const auto cm = build_control_mesh(net, mesh, 2);
  const auto c = assemble_coupling(grid, mesh, cm, kR);

  auto affine = [](const Point3& p) { return 2.0 + 300.0 * p.x - 100.0 * p.y + 50.0 * p.z; };
  std::vector<double> f3(grid.node_count()), f1(mesh.node_count());
  for (std::size_t n = 0; n < f3.size(); ++n) f3[n] = affine(grid.node_position(n));
  for (std::size_t n = 0; n < f1.size(); ++n) f1[n] = affine(mesh.positions[n]);
  std::vector<double> t3(c.point_count()), t1(c.point_count());
  c.trace3.multiply(f3, t3);
  c.trace1.multiply(f1, t1);

  // oracle: dense midpoint sampling along every branch
  double oracle = 0.0;
  const int samples = 20000;
  for (std::size_t b = 0; b < net.branch_count(); ++b) {
    const auto s = net.segment(b);
    for (int k = 0; k < samples; ++k) oracle += affine(s.a + (s.b - s.a) * ((k + 0.5) / samples)) * net.length(b) / samples;
  }
  double q3 = 0.0, q1 = 0.0;
  for (std::size_t q = 0; q < c.point_count(); ++q) {
    q3 += c.weights[q] * t3[q];
    q1 += c.weights[q] * t1[q];
  }
  CHECK(std::abs(q3 - oracle) < 1e-8 * std::abs(oracle));
  CHECK(std::abs(q1 - oracle) < 1e-8 * std::abs(oracle));
}

TEST_CASE("mismatch and functional on prescribed fields") {
  Fixture fx;
  const auto& c = fx.coupling;
  std::vector<double> th3(fx.grid.node_count()), th1(fx.mesh.node_count());
  auto affine = [](const Point3& p) { return 1.0 + 100.0 * p.x + 40.0 * p.z; };
  for (std::size_t n = 0; n < th3.size(); ++n) th3[n] = affine(fx.grid.node_position(n));
  for (std::size_t n = 0; n < th1.size(); ++n) th1[n] = affine(fx.mesh.positions[n]);
  CHECK(continuity_mismatch(th3, th1, c) < 1e-13);

  const std::vector<double> ones3(th3.size(), 1.0), scaled1(th1.size(), 1.01);
  CHECK(continuity_mismatch(ones3, scaled1, c) == doctest::Approx(0.01).epsilon(1e-10));
  const std::vector<double> zero3(th3.size(), 0.0), zero1(th1.size(), 0.0);
  CHECK(continuity_mismatch(zero3, zero1, c) == 0.0);

  const std::vector<double> ones1(th1.size(), 1.0);
  std::vector<double> psi_c(c.psi_mass.rows(), 1.0 + 0.3);
  // constant traces, psi off by 0.3: J = |Gamma| c^2
  CHECK(rel_err(evaluate_functional(ones3, ones1, psi_c, c), fx.net.total_length() * 0.09) < 1e-12);
  // psi equal to the common trace: J = 0
  std::vector<double> psi_one(c.psi_mass.rows(), 1.0);
  CHECK(evaluate_functional(ones3, ones1, psi_one, c) < 1e-28);
}

TEST_CASE("coupled step: null forcing stays identically zero") {
  Fixture fx(0.0);
  CoupledOptions opt;
  opt.dt = 5.0;
  CoupledSolver solver(fx.sys3, fx.blocks, fx.coupling, kTitanium, opt);
  StepDiagnostics d;
  const auto s = solver.step(solver.initial_state(), &d);
  for (double v : s.theta3) CHECK(v == 0.0);
  for (double v : s.theta1) CHECK(v == 0.0);
  for (double v : s.phi) CHECK(v == 0.0);
  for (double v : s.psi) CHECK(v == 0.0);
  CHECK(d.functional == 0.0);
  CHECK(d.outer_iterations == 0);
}

TEST_CASE("coupled step: gradient matches central differences of J") {
  Fixture fx;
  CoupledOptions opt;
  opt.dt = 5.0;
  opt.tol_inner = 1e-13;
  CoupledSolver solver(fx.sys3, fx.blocks, fx.coupling, kTitanium, opt);
  const auto prev = solver.initial_state();
  std::mt19937 rng(17);
  std::normal_distribution<double> g;
  std::vector<double> phi(solver.phi_count()), psi(solver.psi_count());
  for (auto& v : phi) v = 50.0 * g(rng);
  for (auto& v : psi) v = 0.01 * g(rng);
  const auto grad = solver.gradient_at(prev, phi, psi);
  const double gnorm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
  for (int t = 0; t < 5; ++t) {
    std::vector<double> dir(grad.size());
    for (auto& v : dir) v = g(rng);
    const double dn = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
    for (auto& v : dir) v /= dn;
    const double h = 1e-3;
    auto shifted = [&](double s) {
      std::vector<double> p2(phi), q2(psi);
      for (std::size_t i = 0; i < p2.size(); ++i) p2[i] += s * dir[i] * 1e4;
      for (std::size_t i = 0; i < q2.size(); ++i) q2[i] += s * dir[p2.size() + i];
      return solver.functional_at(prev, p2, q2);
    };
    // directional derivative along the scaled direction (phi components x 1e4)
    double analytic = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) analytic += grad[i] * dir[i] * 1e4;
    for (std::size_t i = 0; i < psi.size(); ++i) analytic += grad[phi.size() + i] * dir[phi.size() + i];
    const double fd = (shifted(h) - shifted(-h)) / (2 * h);
    CHECK(std::abs(fd - analytic) <= 1e-6 * std::max(std::abs(analytic), 1e4 * gnorm * 1e-3));
  }
}

TEST_CASE("coupled step: conservation, monotone J, converged gradient") {
  Fixture fx;
  CoupledOptions opt;
  opt.dt = 5.0;
  CoupledSolver solver(fx.sys3, fx.blocks, fx.coupling, kTitanium, opt);
  auto state = solver.initial_state();
  for (int k = 0; k < 6; ++k) {
    StepDiagnostics d;
    const auto prev = state;
    state = solver.step(prev, &d);
    CHECK(rel_err(d.enthalpy_gain, d.injected_energy) < 1e-5);
    CHECK(d.outer_residual <= 1e-6);
    CHECK(d.worst_inner_residual <= 1e-7);
    for (std::size_t i = 1; i < d.functional_history.size(); ++i)
      CHECK(d.functional_history[i] <= d.functional_history[i - 1] * (1 + 1e-10) + 1e-300);
    CHECK(state.time == doctest::Approx(5.0 * (k + 1)));

    if (k == 2) {
      // every directional derivative at the minimizer is small against grad J(0)
      const std::vector<double> zphi(solver.phi_count(), 0.0), zpsi(solver.psi_count(), 0.0);
      const auto g0 = solver.gradient_at(prev, zphi, zpsi);
      const auto g = solver.gradient_at(prev, state.phi, state.psi);
      const double n0 = std::sqrt(std::inner_product(g0.begin(), g0.end(), g0.begin(), 0.0));
      std::mt19937 rng(23);
      std::normal_distribution<double> gauss;
      for (int t = 0; t < 5; ++t) {
        std::vector<double> dir(g.size());
        for (auto& v : dir) v = gauss(rng);
        const double dn = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
        const double dd = std::inner_product(g.begin(), g.end(), dir.begin(), 0.0) / dn;
        CHECK(std::abs(dd) <= 1e-6 * n0);
      }
    }
  }
  // both fields heat up; the hot wire sits above the medium
  double t3max = 0.0;
  for (double v : state.theta3) t3max = std::max(t3max, v);
  CHECK(t3max > 0.0);
  CHECK(*std::max_element(state.theta1.begin(), state.theta1.end()) > 0.0);
}

TEST_CASE("coupled step: every outer preconditioner reaches the same minimizer") {
  Fixture fx;
  CoupledOptions base;
  base.dt = 5.0;
  base.tol_outer = 1e-9;
  std::vector<CoupledState> results;
  std::vector<std::size_t> iterations;
  for (auto kind : {OuterPreconditioner::local_kkt, OuterPreconditioner::lumped_kkt,
                    OuterPreconditioner::block_diagonal}) {
    CoupledOptions o = base;
    o.preconditioner = kind;
    CoupledSolver solver(fx.sys3, fx.blocks, fx.coupling, kTitanium, o);
    StepDiagnostics d;
    results.push_back(solver.step(solver.initial_state(), &d));
    iterations.push_back(d.outer_iterations);
  }
  CHECK(iterations[0] <= iterations[1]);
  CHECK(iterations[1] < iterations[2]);
  double peak = 0.0;
  for (double v : results[0].theta1) peak = std::max(peak, std::abs(v));
  for (std::size_t k = 1; k < results.size(); ++k) {
    double diff = 0.0;
    for (std::size_t i = 0; i < results[0].theta1.size(); ++i) {
      diff = std::max(diff, std::abs(results[0].theta1[i] - results[k].theta1[i]));
    }
    CHECK(diff <= 1e-4 * peak);
  }
}

TEST_CASE("coupled step: the local surrogate keeps working in a light insulating medium") {
  // foam-like medium: conduction dominates heat capacity over one step,
  // which is where row lumping loses the 3D operator
  const Material foam{0.035, 20.0, 1200.0, 0.0};
  geometry::MaterialTable table;
  table.add(1, "foam", foam);
  Fixture fx;
  const auto sys3 = thermal::assemble_3d(fx.grid, table, 0.0);
  std::vector<std::size_t> iterations;
  for (auto kind : {OuterPreconditioner::local_kkt, OuterPreconditioner::lumped_kkt}) {
    CoupledOptions o;
    o.dt = 10.0;
    o.preconditioner = kind;
    CoupledSolver solver(sys3, fx.blocks, fx.coupling, kTitanium, o);
    StepDiagnostics d;
    (void)solver.step(solver.initial_state(), &d);
    CHECK(d.outer_residual <= 1e-6);
    iterations.push_back(d.outer_iterations);
  }
  CHECK(iterations[0] < iterations[1]);
}

TEST_CASE("coupled step: mismatch decreases under joint refinement") {
  double prev = 1.0;
  for (double h : {1.0e-3, 0.5e-3, 0.25e-3}) {
    Fixture fx(2.0, h);
    CoupledOptions opt;
    opt.dt = 5.0;
    CoupledSolver solver(fx.sys3, fx.blocks, fx.coupling, kTitanium, opt);
    auto s = solver.initial_state();
    StepDiagnostics d;
    for (int k = 0; k < 4; ++k) s = solver.step(s, &d);
    CHECK(d.mismatch < prev);
    prev = d.mismatch;
  }
}

TEST_CASE("1D profile is ordered by branch and arc length") {
  Fixture fx;
  std::vector<double> th(fx.mesh.node_count());
  for (std::size_t n = 0; n < th.size(); ++n) th[n] = double(n);
  const auto prof = profile_1d(fx.mesh, th);
  REQUIRE(prof.size() == th.size());
  for (std::size_t i = 1; i < prof.size(); ++i) CHECK(prof[i].arc > prof[i - 1].arc);
  CHECK(prof.front().arc == 0.0);
  CHECK(prof.back().arc == doctest::Approx(fx.net.length(0)));
}
