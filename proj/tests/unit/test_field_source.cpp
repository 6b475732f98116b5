#include <cmath>
#include <random>

#include "doctest.h"
#include "implantheat/field_source.hpp"
#include "support.hpp"

using namespace implantheat;
using namespace implantheat::field;
using testsupport::rel_err;

namespace {

PolylineCoil loop_coil(double radius, std::size_t sides, Point3 center = {}, Complex current = 1.0) {
  PolylineCoil c;
  c.loops.push_back(circular_polyline(center, {0, 0, 1}, radius, sides));
  c.currents.push_back(current);
  c.frequency = 1e3;
  return c;
}

// Azimuthal vector potential of a circular filament (radius a, current I)
// in cylindrical coordinates, from the complete elliptic integrals.
double loop_a_phi(double a, double current, double rho, double z) {
  const double k2 = 4.0 * a * rho / ((a + rho) * (a + rho) + z * z);
  const double k = std::sqrt(k2);
  return kMu0 * current / (kPi * k) * std::sqrt(a / rho) *
         ((1.0 - 0.5 * k2) * std::comp_ellint_1(k) - std::comp_ellint_2(k));
}

}  // namespace

TEST_CASE("uniform field: symmetric-gauge potential") {
  const double b0 = 3.5e-3;
  FieldSource src = UniformHarmonicField{{0, 0, b0}, 2e3, {0, 0, 0}};
  const Point3 p{0.3, -0.7, 0.0};
  const CVec3 a = vector_potential(src, p);
  CHECK(a.x.real() == doctest::Approx(0.5 * b0 * 0.7));
  CHECK(a.y.real() == doctest::Approx(0.5 * b0 * 0.3));
  CHECK(std::abs(a.z) == 0.0);
  CHECK(norm(flux_density(src, {5, 6, 7})) == doctest::Approx(b0));

  FieldSource shifted = UniformHarmonicField{{0, 0, b0}, 2e3, p};
  CHECK(norm(vector_potential(shifted, p)) == 0.0);
}

TEST_CASE("uniform field: circulation of A equals enclosed flux") {
  FieldSource src = UniformHarmonicField{{0.2e-3, -1e-3, 3.5e-3}, 2e3, {0.01, 0.02, -0.03}};
  const double s = 0.02;
  const Point3 c[4] = {{0, 0, 0}, {s, 0, 0}, {s, s, 0}, {0, s, 0}};
  Complex circ{};
  for (int k = 0; k < 4; ++k) circ += line_integral(src, c[k], c[(k + 1) % 4]);
  CHECK(circ.real() == doctest::Approx(3.5e-3 * s * s).epsilon(1e-12));
}

TEST_CASE("256-gon loop: field at the centre") {
  FieldSource src = loop_coil(0.1, 256);
  const CVec3 b = flux_density(src, {0, 0, 0});
  CHECK(rel_err(norm(b), kMu0 / (2 * 0.1)) < 1e-3);
  CHECK(rel_err(norm(b), 6.283e-6) < 1e-3);
  CHECK(b.z.real() > 0.0);
}

TEST_CASE("256-gon loop: on-axis field and vanishing on-axis potential") {
  const double a = 0.1, z = 0.05;
  FieldSource src = loop_coil(a, 256);
  const CVec3 b = flux_density(src, {0, 0, z});
  const double bz = kMu0 * a * a / (2.0 * std::pow(a * a + z * z, 1.5));
  CHECK(rel_err(b.z.real(), bz) < 1e-3);
  // by symmetry A has no component on the axis
  CHECK(norm(vector_potential(src, {0, 0, z})) < 1e-6 * loop_a_phi(a, 1.0, 0.05, z));
}

TEST_CASE("256-gon loop: off-axis potential against the elliptic-integral closed form") {
  const double a = 0.1;
  FieldSource src = loop_coil(a, 256);
  for (const auto& [rho, z] : {std::pair{0.02, 0.05}, {0.05, 0.0}, {0.15, -0.03}, {0.08, 0.1}}) {
    // azimuthal direction at angle 0.3 rad
    const double t = 0.3;
    const Point3 p{rho * std::cos(t), rho * std::sin(t), z};
    const CVec3 av = vector_potential(src, p);
    const Vec3 e_phi{-std::sin(t), std::cos(t), 0.0};
    const double a_phi = dot(av, e_phi).real();
    CHECK(rel_err(a_phi, loop_a_phi(a, 1.0, rho, z)) < 1e-3);
  }
}

TEST_CASE("B is the curl of A for a coil") {
  FieldSource src = loop_coil(0.05, 64, {0.01, -0.02, 0.0}, {2.0, 0.5});
  const Point3 p{0.03, 0.01, 0.02};
  const double h = 1e-5;
  auto d = [&](int comp, int axis) {
    Vec3 e{};
    if (axis == 0) e.x = h;
    if (axis == 1) e.y = h;
    if (axis == 2) e.z = h;
    const CVec3 ap = vector_potential(src, p + e);
    const CVec3 am = vector_potential(src, p - e);
    const Complex vp = comp == 0 ? ap.x : comp == 1 ? ap.y : ap.z;
    const Complex vm = comp == 0 ? am.x : comp == 1 ? am.y : am.z;
    return (vp - vm) / (2.0 * h);
  };
  const CVec3 curl{d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)};
  const CVec3 b = flux_density(src, p);
  CHECK(std::abs(curl.x - b.x) < 1e-6 * norm(b));
  CHECK(std::abs(curl.y - b.y) < 1e-6 * norm(b));
  CHECK(std::abs(curl.z - b.z) < 1e-6 * norm(b));
}

TEST_CASE("counter-wound coaxial loops cancel axial B at the midpoint") {
  PolylineCoil c;
  c.loops.push_back(circular_polyline({0, 0, -0.02}, {0, 0, 1}, 0.05, 128));
  c.loops.push_back(circular_polyline({0, 0, 0.02}, {0, 0, 1}, 0.05, 128));
  c.currents = {1.0, -1.0};
  c.frequency = 1e3;
  FieldSource src = c;
  const CVec3 b = flux_density(src, {0, 0, 0});
  const double single = norm(flux_density(FieldSource{loop_coil(0.05, 128, {0, 0, -0.02})}, {0, 0, 0}));
  CHECK(std::abs(b.z) < 1e-12 * single);
}

TEST_CASE("scaling and validation") {
  FieldSource src = loop_coil(0.05, 32);
  const Point3 p{0.01, 0.0, 0.01};
  const CVec3 b1 = flux_density(src, p);
  const CVec3 b3 = flux_density(scaled(src, 3.0), p);
  CHECK(norm(b3) == doctest::Approx(3.0 * norm(b1)));
  CHECK(angular_frequency(src) == doctest::Approx(2 * kPi * 1e3));

  PolylineCoil open = loop_coil(0.05, 8);
  open.loops[0].pop_back();
  CHECK_THROWS_AS(validate(FieldSource{open}), Error);
  FieldSource zero_f = UniformHarmonicField{{0, 0, 1}, 0.0, {}};
  CHECK_THROWS_AS(validate(zero_f), Error);
  // a point on a filament is rejected rather than returning inf
  CHECK_THROWS_AS(vector_potential(src, std::get<PolylineCoil>(src).loops[0][0]), Error);
}

TEST_CASE("coil file round trip") {
  const auto dir = testsupport::scratch_dir("coil");
  PolylineCoil c = loop_coil(0.07, 12, {0.1, 0.2, 0.3}, {1.5, -0.25});
  c.loops.push_back(circular_polyline({0, 0, 0.01}, {1, 0, 0}, 0.02, 5));
  c.currents.push_back(-2.0);
  write_coil_file(dir / "c.coil", c);
  const PolylineCoil r = read_coil_file(dir / "c.coil", 1e3);
  REQUIRE(r.loops.size() == 2);
  CHECK(r.currents[0] == c.currents[0]);
  CHECK(r.currents[1] == c.currents[1]);
  for (std::size_t l = 0; l < 2; ++l) {
    REQUIRE(r.loops[l].size() == c.loops[l].size());
    for (std::size_t k = 0; k < c.loops[l].size(); ++k) CHECK(r.loops[l][k] == c.loops[l][k]);
  }
  CHECK_THROWS_AS(read_coil_file(dir / "missing.coil", 1e3), Error);
}
