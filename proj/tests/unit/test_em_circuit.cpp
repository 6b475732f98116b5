#include <cmath>
#include <random>

#include "doctest.h"
#include "implantheat/em_circuit.hpp"
#include "implantheat/quadrature.hpp"
#include "implantheat/scenarios.hpp"
#include "support.hpp"

using namespace implantheat;
using namespace implantheat::em;
using geometry::Segment;
using testsupport::rel_err;

namespace {

constexpr double kSigma = 1.82e6;
constexpr double kRadius = 0.3e-3;

field::FieldSource uniform_z(double b, double f, Point3 gauge = {}) {
  return field::UniformHarmonicField{{0, 0, b}, f, gauge};
}

double sum_all(const SymmetricMatrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (double v : m.row(i)) s += v;
  return s;
}

// Neumann integral of two rays leaving a common vertex at angle gamma, done
// with the inner integral in closed form and a graded composite rule outside.
double vertex_oracle(double l, double m, double gamma) {
  const double c = std::cos(gamma), s = std::sin(gamma);
  auto inner = [&](double x) {
    return std::asinh((m - x * c) / (x * s)) + std::asinh(c / s);
  };
  const auto& g = gauss_legendre(20);
  double total = 0.0;
  double hi = l;
  for (int level = 0; level < 60; ++level) {
    const double lo = hi * 0.5;
    for (int q = 0; q < g.order(); ++q) total += (hi - lo) * g.weights[q] * inner(lo + (hi - lo) * g.nodes[q]);
    hi = lo;
  }
  return kMu0 / (4 * kPi) * c * total;
}

double parallel_filaments(double l, double d) {
  const double h = std::hypot(l, d);
  return kMu0 / (2 * kPi) * (l * std::log((l + h) / d) - h + d);
}

geometry::ImplantNetwork ring(std::size_t sides, double a, Point3 center = {}) {
  return geometry::build_network(testsupport::polygon(sides, a, center), kRadius, kSigma);
}

}  // namespace

TEST_CASE("wire resistance closed form") {
  CHECK(rel_err(branch_resistance(1e-3, kRadius, kSigma), 1.943e-3) < 2e-4);
  CHECK(branch_resistance(2e-3, kRadius, kSigma) == 2.0 * branch_resistance(1e-3, kRadius, kSigma));
  CHECK(branch_resistance(1.0, 1.0 / std::sqrt(kPi), 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(branch_resistance(0.0, kRadius, kSigma), Error);
}

TEST_CASE("mutual inductance: orthogonal filaments decouple") {
  const Segment a{{0, 0, 0}, {0.01, 0, 0}};
  const Segment b{{0.005, 0.002, 0.001}, {0.005, 0.012, 0.001}};
  CHECK(std::abs(mutual_inductance(a, b)) < 1e-20);
}

TEST_CASE("mutual inductance: parallel filaments against the closed form") {
  const Segment a{{0, 0, 0}, {0.01, 0, 0}};
  const Segment b{{0, 0.001, 0}, {0.01, 0.001, 0}};
  const double m = mutual_inductance(a, b);
  CHECK(rel_err(m, parallel_filaments(0.01, 0.001)) < 1e-2);
  CHECK(rel_err(m, parallel_filaments(0.01, 0.001)) < 1e-6);
  // reversing one filament flips the sign
  CHECK(mutual_inductance(a, Segment{b.b, b.a}) == doctest::Approx(-m));
  CHECK(mutual_inductance(b, a) == doctest::Approx(m).epsilon(1e-12));
}

TEST_CASE("mutual inductance: vertex-sharing filaments") {
  for (double gamma : {0.3, 1.0, kPi / 4, 2.2, 3.0}) {
    const double l = 1.2e-3, m = 0.8e-3;
    const Segment a{{0, 0, 0}, {l, 0, 0}};
    const Segment b{{0, 0, 0}, {m * std::cos(gamma), m * std::sin(gamma), 0}};
    CHECK(rel_err(mutual_inductance(a, b), vertex_oracle(l, m, gamma)) < 1e-9);
  }
  // collinear end to end: integral of 1/(s+t) in closed form
  const double l = 2e-3, m = 1e-3;
  const double want = kMu0 / (4 * kPi) * ((l + m) * std::log(l + m) - l * std::log(l) - m * std::log(m));
  CHECK(rel_err(mutual_inductance({{-l, 0, 0}, {0, 0, 0}}, {{0, 0, 0}, {m, 0, 0}}), want) < 1e-12);
}

TEST_CASE("mutual inductance: near pairs agree with a brute-force rule") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1e-3, 1e-3);
  const auto& g = gauss_legendre(64);
  for (int t = 0; t < 20; ++t) {
    const Segment a{{0, 0, 0}, {1e-3, 0, 0}};
    const Point3 p{u(rng), 0.4e-3 + std::abs(u(rng)), u(rng)};
    const Segment b{p, p + Vec3{u(rng), u(rng), u(rng)}};
    // composite GL64 on 32 x 32 sub-pairs as the oracle
    const int parts = 32;
    double s = 0.0;
    const Vec3 da = (a.b - a.a) * (1.0 / parts), db = (b.b - b.a) * (1.0 / parts);
    for (int i = 0; i < parts; ++i) {
      for (int j = 0; j < parts; ++j) {
        const Point3 a0 = a.a + da * double(i), b0 = b.a + db * double(j);
        for (int qi = 0; qi < 64; ++qi) {
          const Point3 x = a0 + da * g.nodes[qi];
          double inner = 0.0;
          for (int qj = 0; qj < 64; ++qj) inner += g.weights[qj] / distance(x, b0 + db * g.nodes[qj]);
          s += g.weights[qi] * inner;
        }
      }
    }
    const double oracle = kMu0 / (4 * kPi) * dot(a.b - a.a, b.b - b.a) / (parts * parts) * s;
    CHECK(std::abs(mutual_inductance(a, b) - oracle) <= 1e-8 * std::abs(oracle) + 1e-22);
  }
}

TEST_CASE("mutual inductance: collinear overlap is rejected") {
  CHECK_THROWS_AS(mutual_inductance({{0, 0, 0}, {2, 0, 0}}, {{1, 0, 0}, {3, 0, 0}}), Error);
}

TEST_CASE("64-gon loop inductance against the circular-loop closed forms") {
  const double a = 0.02;
  const auto net = ring(64, a);
  const auto z = assemble_impedances(net);
  const double total = sum_all(z.inductance);
  double internal = 0.0;
  for (double l : net.lengths()) internal += internal_inductance(l);
  // uniform current: ln(8a/r) - 7/4; external flux only: ln(8a/r) - 2
  const double uniform = kMu0 * a * (std::log(8 * a / kRadius) - 1.75);
  const double external = kMu0 * a * (std::log(8 * a / kRadius) - 2.0);
  CHECK(rel_err(total, uniform) < 0.02);
  CHECK(rel_err(total - internal, external) < 0.02);
}

TEST_CASE("Faraday EMF of a 20 mm square loop") {
  const double s = 0.02;
  std::vector<Segment> segs{{{0, 0, 0}, {s, 0, 0}}, {{s, 0, 0}, {s, s, 0}}, {{s, s, 0}, {0, s, 0}}, {{0, s, 0}, {0, 0, 0}}};
  const auto net = geometry::build_network(segs, kRadius, kSigma);
  const auto imp = assemble_impedances(net);
  const auto sys = assemble_loop_system(net, imp, geometry::fundamental_loops(net), uniform_z(3.5e-3, 2e3));
  REQUIRE(sys.loops == 1);
  CHECK(rel_err(std::abs(sys.emf[0]), 0.01759) < 1e-3);
  CHECK(rel_err(std::abs(sys.emf[0]), 2 * kPi * 2e3 * 3.5e-3 * s * s) < 1e-12);

  const auto shifted = assemble_loop_system(net, imp, geometry::fundamental_loops(net),
                                            uniform_z(3.5e-3, 2e3, {0.3, -1.2, 0.7}));
  CHECK(std::abs(shifted.emf[0] - sys.emf[0]) <= 1e-12 * std::abs(sys.emf[0]));

  // single loop: the phasor divider I = E / (R + j w L)
  const auto cur = solve_loop_currents(sys, net);
  const Complex zl(4 * imp.resistance[0], 2 * kPi * 2e3 * sum_all(imp.inductance));
  CHECK(std::abs(cur.loop[0] - sys.emf[0] / zl) <= 1e-12 * std::abs(cur.loop[0]));
  CHECK(cur.kcl_residual < 1e-14);
}

TEST_CASE("tree network gives an empty system and zero currents") {
  std::vector<Segment> segs{{{0, 0, 0}, {1e-3, 0, 0}}, {{1e-3, 0, 0}, {1e-3, 1e-3, 0}}};
  const auto net = geometry::build_network(segs, kRadius, kSigma);
  const auto sol = solve_em(net, uniform_z(3.5e-3, 2e3));
  CHECK(sol.system.loops == 0);
  CHECK(sol.losses.total == 0.0);
}

TEST_CASE("zero source gives zero currents and zero loss") {
  const auto net = ring(16, 0.01);
  const auto sol = solve_em(net, uniform_z(0.0, 2e3));
  for (const auto& i : sol.currents.branch) CHECK(std::abs(i) == 0.0);
  CHECK(sol.losses.total == 0.0);
}

TEST_CASE("distant loops decouple") {
  const double a = 0.005;
  auto segs = testsupport::polygon(24, a);
  auto far = testsupport::polygon(24, a, {60 * a, 0, 0});
  segs.insert(segs.end(), far.begin(), far.end());
  const auto pair = geometry::build_network(segs, kRadius, kSigma);
  const auto single = ring(24, a);
  const auto src = uniform_z(3.5e-3, 2e3);
  const auto both = solve_em(pair, src);
  const auto one = solve_em(single, src);
  REQUIRE(both.system.loops == 2);
  for (std::size_t k = 0; k < 2; ++k) CHECK(rel_err(std::abs(both.currents.loop[k]), std::abs(one.currents.loop[0])) < 1e-3);
}

TEST_CASE("RMS identity for the loss density") {
  const geometry::ImplantNetwork net({{0, 0, 0}, {1, 0, 0}}, {{0, 1}}, 1.0 / std::sqrt(kPi), 1.0);
  BranchImpedance imp;
  imp.resistance = {1.0};
  imp.inductance = SymmetricMatrix(1);
  const std::vector<Complex> i{Complex(std::sqrt(2.0), 0.0)};
  const auto loss = branch_losses(net, imp, i);
  CHECK(loss.linear_density[0] == doctest::Approx(1.0));
  CHECK(loss.total == doctest::Approx(1.0));
  CHECK(branch_losses(net, imp, std::vector<Complex>{0.0}).total == 0.0);
  CHECK_THROWS_AS(losses_from_density(net, {-1.0}), Error);
  CHECK(losses_from_density(net, {2.0}).total == 2.0);
}

TEST_CASE("tiled patch: power balance, basis invariance, KCL and frequency scaling") {
  const double pitch = 0.093 / 36.0;
  const auto segs = scenarios::tile_cranial_mesh(scenarios::truncated_square_cell(pitch), 8 * pitch);
  const auto net = geometry::build_network(segs, kRadius, kSigma);
  const auto src = uniform_z(3.5e-3, 2e3);

  const auto bfs = solve_em(net, src);
  const auto dfs = solve_em(net, src, {}, geometry::SpanningTree::depth_first);
  CHECK(bfs.system.loops == net.branch_count() - net.node_count() + 1);

  // losses equal the resistive part of 1/2 J^H Z J, which equals 1/2 Re(J^H E)
  CHECK(rel_err(bfs.losses.total, bfs.source_power) < 1e-9);
  Complex jzj{};
  const std::size_t n = bfs.system.loops;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) jzj += std::conj(bfs.currents.loop[i]) * bfs.system.at(i, j) * bfs.currents.loop[j];
  CHECK(rel_err(bfs.losses.total, 0.5 * jzj.real()) < 1e-9);

  double imax = 0.0;
  for (const auto& i : bfs.currents.branch) imax = std::max(imax, std::abs(i));
  for (std::size_t b = 0; b < net.branch_count(); ++b)
    CHECK(std::abs(bfs.currents.branch[b] - dfs.currents.branch[b]) <= 1e-9 * imax);
  CHECK(bfs.currents.kcl_residual < 1e-12);
  CHECK(dfs.currents.kcl_residual < 1e-12);

  // quasi-static regime: R dominates, so P grows as f^2
  const auto doubled = solve_em(net, uniform_z(3.5e-3, 4e3));
  CHECK(doubled.losses.total / bfs.losses.total == doctest::Approx(4.0).epsilon(1e-3));
  // and as B^2
  const auto stronger = solve_em(net, uniform_z(7e-3, 2e3));
  CHECK(stronger.losses.total / bfs.losses.total == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("serial and parallel impedance assembly agree exactly") {
  const auto net = ring(40, 0.01);
  const auto s = assemble_impedances(net, {0.0, Exec::serial});
  const auto p = assemble_impedances(net, {0.0, Exec::parallel});
  for (std::size_t i = 0; i < net.branch_count(); ++i)
    for (std::size_t j = 0; j < net.branch_count(); ++j) CHECK(s.inductance(i, j) == p.inductance(i, j));
}

TEST_CASE("complex LDLT against Gaussian elimination") {
  std::mt19937 rng(11);
  std::normal_distribution<double> g;
  const std::size_t n = 30;
  std::vector<Complex> a(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      Complex v(g(rng), g(rng));
      if (i == j) v += Complex(4.0 * n, 0.0);
      a[i * n + j] = a[j * n + i] = v;
    }
  }
  std::vector<Complex> b(n);
  for (auto& v : b) v = Complex(g(rng), g(rng));
  const auto x = ComplexLdlt(a, n).solve(b);
  // residual check
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Complex r = -b[i];
    for (std::size_t j = 0; j < n; ++j) r += a[i * n + j] * x[j];
    worst = std::max(worst, std::abs(r));
  }
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(ComplexLdlt(std::vector<Complex>(4, 0.0), 2), Error);
}
