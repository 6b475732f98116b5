#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "implantheat/field_source.hpp"
#include "implantheat/geometry.hpp"

namespace testsupport {

using implantheat::Point3;
using implantheat::Vec3;
using implantheat::geometry::Segment;

inline double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

/// Closed regular n-gon in the plane z = z0 as consecutive segments.
inline std::vector<Segment> polygon(std::size_t sides, double radius, Point3 center = {}) {
  const auto pts = implantheat::field::circular_polyline(center, {0, 0, 1}, radius, sides);
  std::vector<Segment> segs;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) segs.push_back({pts[i], pts[i + 1]});
  return segs;
}

/// n x m grid of unit squares of edge h in the z = 0 plane.
inline std::vector<Segment> ladder(std::size_t nx, std::size_t ny, double h, Point3 origin = {}) {
  std::vector<Segment> segs;
  for (std::size_t j = 0; j <= ny; ++j) {
    for (std::size_t i = 0; i <= nx; ++i) {
      const Point3 p = origin + Vec3{h * double(i), h * double(j), 0.0};
      if (i < nx) segs.push_back({p, p + Vec3{h, 0, 0}});
      if (j < ny) segs.push_back({p, p + Vec3{0, h, 0}});
    }
  }
  return segs;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("implantheat_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
