#include "implantheat/field_source.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>

#include "implantheat/quadrature.hpp"

namespace implantheat::field {

namespace {

constexpr int kEdgeOrder = 8;
constexpr double kFilamentClearance = 1e-9;

double point_segment_distance(const Point3& p, const Point3& a, const Point3& b) {
  const Vec3 d = b - a;
  const double dd = dot(d, d);
  double t = dd > 0.0 ? dot(p - a, d) / dd : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, a + d * t);
}

template <typename EdgeFn>
void for_each_edge(const PolylineCoil& coil, const Point3& p, EdgeFn&& fn) {
  for (std::size_t l = 0; l < coil.loops.size(); ++l) {
    const auto& pts = coil.loops[l];
    for (std::size_t e = 0; e + 1 < pts.size(); ++e) {
      if (point_segment_distance(p, pts[e], pts[e + 1]) <= kFilamentClearance) {
        throw Error(ErrorKind::numerical, "field point lies on a source filament (loop " + std::to_string(l) + ")");
      }
      fn(coil.currents[l], pts[e], pts[e + 1]);
    }
  }
}

CVec3 coil_potential(const PolylineCoil& coil, const Point3& p) {
  const GaussRule& g = gauss_legendre(kEdgeOrder);
  CVec3 a;
  for_each_edge(coil, p, [&](Complex current, const Point3& s0, const Point3& s1) {
    const Vec3 dl = s1 - s0;
    double integral = 0.0;
    for (int q = 0; q < g.order(); ++q) {
      const Point3 x = s0 + dl * g.nodes[q];
      integral += g.weights[q] / distance(p, x);
    }
    const Complex k = current * (kMu0 / (4.0 * kPi) * integral);
    a += CVec3{k * dl.x, k * dl.y, k * dl.z};
  });
  return a;
}

CVec3 coil_flux(const PolylineCoil& coil, const Point3& p) {
  const GaussRule& g = gauss_legendre(kEdgeOrder);
  CVec3 b;
  for_each_edge(coil, p, [&](Complex current, const Point3& s0, const Point3& s1) {
    const Vec3 dl = s1 - s0;
    Vec3 acc;
    for (int q = 0; q < g.order(); ++q) {
      const Vec3 r = p - (s0 + dl * g.nodes[q]);
      const double rn = norm(r);
      acc += cross(dl, r) * (g.weights[q] / (rn * rn * rn));
    }
    const Complex k = current * (kMu0 / (4.0 * kPi));
    b += CVec3{k * acc.x, k * acc.y, k * acc.z};
  });
  return b;
}

}  // namespace

void validate(const FieldSource& source) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if (!(s.frequency > 0.0) || !std::isfinite(s.frequency)) {
          throw Error(ErrorKind::input, "source frequency must be positive");
        }
        if constexpr (std::is_same_v<T, UniformHarmonicField>) {
          if (!std::isfinite(norm(s.amplitude))) throw Error(ErrorKind::input, "uniform field amplitude is not finite");
        } else {
          if (s.loops.size() != s.currents.size()) throw Error(ErrorKind::input, "coil loop/current count mismatch");
          for (const auto& loop : s.loops) {
            if (loop.size() < 3 || !(loop.front() == loop.back())) {
              throw Error(ErrorKind::input, "coil polyline must be closed (first point == last point)");
            }
          }
        }
      },
      source);
}

double frequency(const FieldSource& source) {
  return std::visit([](const auto& s) { return s.frequency; }, source);
}

double angular_frequency(const FieldSource& source) { return 2.0 * kPi * frequency(source); }

CVec3 vector_potential(const FieldSource& source, const Point3& p) {
  if (const auto* u = std::get_if<UniformHarmonicField>(&source)) {
    return cross(u->amplitude, p - u->gauge_origin) * Complex(0.5, 0.0);
  }
  return coil_potential(std::get<PolylineCoil>(source), p);
}

CVec3 flux_density(const FieldSource& source, const Point3& p) {
  if (const auto* u = std::get_if<UniformHarmonicField>(&source)) return u->amplitude;
  return coil_flux(std::get<PolylineCoil>(source), p);
}

Complex line_integral(const FieldSource& source, const Point3& a, const Point3& b, int order) {
  const Vec3 dl = b - a;
  if (std::holds_alternative<UniformHarmonicField>(source)) {
    // A is affine in p: the midpoint rule is exact
    return dot(vector_potential(source, a + dl * 0.5), dl);
  }
  const GaussRule& g = gauss_legendre(order);
  Complex s{};
  for (int q = 0; q < g.order(); ++q) s += g.weights[q] * dot(vector_potential(source, a + dl * g.nodes[q]), dl);
  return s;
}

FieldSource scaled(const FieldSource& source, double factor) {
  FieldSource out = source;
  std::visit(
      [factor](auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, UniformHarmonicField>) {
          s.amplitude *= factor;
        } else {
          for (auto& c : s.currents) c *= factor;
        }
      },
      out);
  return out;
}

std::vector<Point3> circular_polyline(const Point3& center, const Vec3& axis, double radius, std::size_t sides) {
  if (sides < 3) throw Error(ErrorKind::input, "polygon needs at least 3 sides");
  const Vec3 n = axis * (1.0 / norm(axis));
  const Vec3 helper = std::abs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  Vec3 u = cross(n, helper);
  u = u * (1.0 / norm(u));
  const Vec3 v = cross(n, u);
  std::vector<Point3> pts;
  pts.reserve(sides + 1);
  for (std::size_t k = 0; k < sides; ++k) {
    const double t = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(sides);
    pts.push_back(center + u * (radius * std::cos(t)) + v * (radius * std::sin(t)));
  }
  pts.push_back(pts.front());
  return pts;
}

PolylineCoil read_coil_file(const std::filesystem::path& path, double frequency) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open coil file " + path.string());
  PolylineCoil coil;
  coil.frequency = frequency;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;
    if (head == "loop") {
      double re = 0.0;
      double im = 0.0;
      if (!(ls >> re >> im)) throw Error(ErrorKind::io, path.string() + ":" + std::to_string(lineno) + ": bad loop header");
      coil.loops.emplace_back();
      coil.currents.emplace_back(re, im);
      continue;
    }
    if (coil.loops.empty()) throw Error(ErrorKind::io, path.string() + ": vertex before any loop header");
    std::istringstream vs(line);
    Point3 p;
    if (!(vs >> p.x >> p.y >> p.z)) {
      throw Error(ErrorKind::io, path.string() + ":" + std::to_string(lineno) + ": expected x y z");
    }
    coil.loops.back().push_back(p);
  }
  FieldSource check = coil;
  validate(check);
  return coil;
}

void write_coil_file(const std::filesystem::path& path, const PolylineCoil& coil) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write coil file " + path.string());
  out.precision(17);
  out << "# polyline coil: loop <current_re> <current_im> (A, peak), then x y z vertices (m)\n";
  for (std::size_t l = 0; l < coil.loops.size(); ++l) {
    out << "loop " << coil.currents[l].real() << " " << coil.currents[l].imag() << "\n";
    for (const auto& p : coil.loops[l]) out << p.x << " " << p.y << " " << p.z << "\n";
  }
}

}  // namespace implantheat::field
