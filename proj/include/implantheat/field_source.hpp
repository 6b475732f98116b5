#pragma once

#include <filesystem>
#include <variant>
#include <vector>

#include "implantheat/common.hpp"

namespace implantheat::field {

/// Spatially uniform harmonic flux density B (peak phasor). The vector
/// potential uses the symmetric gauge A = B x (p - gauge_origin) / 2.
struct UniformHarmonicField {
  CVec3 amplitude;
  double frequency = 0.0;
  Point3 gauge_origin;
};

/// Closed filamentary loops carrying peak current phasors.
struct PolylineCoil {
  std::vector<std::vector<Point3>> loops;  // first point == last point
  std::vector<Complex> currents;
  double frequency = 0.0;
};

using FieldSource = std::variant<UniformHarmonicField, PolylineCoil>;

/// Throws input errors for violated source invariants.
void validate(const FieldSource& source);

double frequency(const FieldSource& source);
double angular_frequency(const FieldSource& source);

/// A(p) in Wb/m (peak). Coil variant: Gauss-Legendre order 8 per edge.
CVec3 vector_potential(const FieldSource& source, const Point3& p);

/// B(p) in T (peak).
CVec3 flux_density(const FieldSource& source, const Point3& p);

/// Line integral of A along the straight path a -> b (Wb).
Complex line_integral(const FieldSource& source, const Point3& a, const Point3& b, int order = 8);

/// Source with every amplitude/current multiplied by `factor`.
FieldSource scaled(const FieldSource& source, double factor);

/// Regular n-gon approximation of a circular loop in the plane normal to `axis`.
std::vector<Point3> circular_polyline(const Point3& center, const Vec3& axis, double radius, std::size_t sides);

/// Coil file: blocks of `loop <re> <im>` followed by `x y z` vertex lines.
PolylineCoil read_coil_file(const std::filesystem::path& path, double frequency);
void write_coil_file(const std::filesystem::path& path, const PolylineCoil& coil);

}  // namespace implantheat::field
