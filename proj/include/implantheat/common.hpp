#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace implantheat {

inline constexpr double kPi = 3.14159265358979323846;
/// Vacuum permeability in H/m.
inline constexpr double kMu0 = 4.0e-7 * kPi;

/// Selects the serial reference or the OpenMP variant of a kernel.
enum class Exec { serial, parallel };

enum class ErrorKind { input, geometry, numerical, solver, io, config };

const char* to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a category so the CLI can
/// report it and map it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  constexpr double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr bool operator==(const Vec3&) const = default;
};

using Point3 = Vec3;

constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

using Complex = std::complex<double>;

/// Complex phasor 3-vector (peak amplitudes, cos(wt) convention).
struct CVec3 {
  Complex x{};
  Complex y{};
  Complex z{};

  CVec3& operator+=(const CVec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  CVec3& operator*=(Complex s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
};

inline CVec3 operator*(CVec3 a, Complex s) { return a *= s; }
inline Complex dot(const CVec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline CVec3 cross(const CVec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const CVec3& a) {
  return std::sqrt(std::norm(a.x) + std::norm(a.y) + std::norm(a.z));
}

}  // namespace implantheat
