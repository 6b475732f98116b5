#include "implantheat/scenarios.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "implantheat/io.hpp"
#include "implantheat/quadrature.hpp"

namespace implantheat::scenarios {

namespace {

constexpr double kAbLimit = 5e9;

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

struct Bounds {
  Point3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
  Point3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};
  void add(const Point3& p) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
};

Bounds bounds_of(std::span<const Point3> points) {
  Bounds b;
  for (const auto& p : points) b.add(p);
  return b;
}

std::size_t step_count(const ScenarioConfig& c) {
  if (!(c.duration > 0.0) || !(c.dt > 0.0)) throw Error(ErrorKind::config, "exposure duration and dt must be positive");
  const double n = c.duration / c.dt;
  const double rounded = std::round(n);
  if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * std::max(1.0, n)) {
    throw Error(ErrorKind::config, "exposure duration must be a whole number of time steps");
  }
  return static_cast<std::size_t>(rounded);
}

std::string step_name(const std::string& prefix, std::size_t step) {
  std::ostringstream os;
  os << prefix << "_step_" << std::setw(4) << std::setfill('0') << step << ".vtk";
  return os.str();
}

std::vector<double> probe_values(const geometry::VoxelGrid& grid, std::span<const double> field,
                                 const std::vector<geometry::ProbeBox>& probes) {
  std::vector<double> out;
  out.reserve(probes.size());
  for (const auto& p : probes) out.push_back(virtual_probe(grid, field, p));
  return out;
}

coupled::OuterPreconditioner outer_preconditioner(const std::string& name) {
  if (name == "local_kkt") return coupled::OuterPreconditioner::local_kkt;
  if (name == "lumped_kkt") return coupled::OuterPreconditioner::lumped_kkt;
  if (name == "block_diagonal") return coupled::OuterPreconditioner::block_diagonal;
  throw Error(ErrorKind::config, "unknown solver.preconditioner '" + name + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Implant geometry

CellTemplate truncated_square_cell(double pitch) {
  if (!(pitch > 0.0) || !std::isfinite(pitch)) throw Error(ErrorKind::input, "cell pitch must be positive");
  // regular octagon with its four flats on the cell boundary: P = d (2 + sqrt 2)
  const double d = pitch / (2.0 + std::sqrt(2.0));
  const double p = pitch;
  const std::array<Point3, 8> v{Point3{d, 0, 0}, {p - d, 0, 0}, {p, d, 0}, {p, p - d, 0},
                                {p - d, p, 0},   {d, p, 0},     {0, p - d, 0}, {0, d, 0}};
  CellTemplate cell{pitch, {}};
  for (std::size_t i = 0; i < v.size(); ++i) cell.segments.push_back({v[i], v[(i + 1) % v.size()]});
  return cell;
}

void check_periodic(const CellTemplate& cell) {
  const double p = cell.pitch;
  if (!(p > 0.0) || cell.segments.empty()) throw Error(ErrorKind::geometry, "cell template is empty");
  const double tol = 1e-9 * p;
  std::vector<double> left, right, bottom, top;
  for (const auto& s : cell.segments) {
    for (const auto& q : {s.a, s.b}) {
      if (q.x < -tol || q.x > p + tol || q.y < -tol || q.y > p + tol || std::abs(q.z) > tol) {
        throw Error(ErrorKind::geometry, "cell template leaves its planar unit square");
      }
      if (near(q.x, 0, tol)) left.push_back(q.y);
      if (near(q.x, p, tol)) right.push_back(q.y);
      if (near(q.y, 0, tol)) bottom.push_back(q.x);
      if (near(q.y, p, tol)) top.push_back(q.x);
    }
  }
  const auto same = [tol](std::vector<double> a, std::vector<double> b) {
    const auto uniq = [tol](std::vector<double>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end(), [tol](double x, double y) { return std::abs(x - y) <= tol; }), v.end());
    };
    uniq(a);
    uniq(b);
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::abs(a[i] - b[i]) > tol) return false;
    }
    return true;
  };
  if (!same(left, right) || !same(bottom, top)) {
    throw Error(ErrorKind::geometry, "cell template does not tile periodically");
  }
  if (left.empty() && bottom.empty()) throw Error(ErrorKind::geometry, "cell template does not touch its boundary");
}

std::vector<Segment> tile_cranial_mesh(const CellTemplate& cell, double side) {
  if (!(side > 0.0) || !std::isfinite(side)) throw Error(ErrorKind::input, "mesh side must be positive");
  check_periodic(cell);
  const double ratio = side / cell.pitch;
  const double n = std::round(ratio);
  if (n < 1.0 || std::abs(ratio - n) > 1e-9 * std::max(1.0, ratio)) {
    throw Error(ErrorKind::geometry, "mesh side is not a whole number of cell pitches");
  }
  const auto count = static_cast<std::size_t>(n);
  std::vector<Segment> out;
  out.reserve(count * count * cell.segments.size());
  for (std::size_t j = 0; j < count; ++j) {
    for (std::size_t i = 0; i < count; ++i) {
      const Vec3 shift{static_cast<double>(i) * cell.pitch, static_cast<double>(j) * cell.pitch, 0.0};
      for (const auto& s : cell.segments) out.push_back({s.a + shift, s.b + shift});
    }
  }
  return out;
}

Point3 place_point(const Point3& local, const Placement& placement) {
  const double t = placement.rotation_deg * kPi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  return Point3{c * local.x - s * local.y, s * local.x + c * local.y, local.z} + placement.center;
}

std::vector<Segment> place(std::span<const Segment> local, const Placement& placement) {
  std::vector<Segment> out;
  out.reserve(local.size());
  for (const auto& s : local) out.push_back({place_point(s.a, placement), place_point(s.b, placement)});
  return out;
}

std::vector<Segment> centered(std::span<const Segment> segments) {
  Bounds b;
  for (const auto& s : segments) {
    b.add(s.a);
    b.add(s.b);
  }
  const Vec3 mid = 0.5 * (b.lo + b.hi);
  std::vector<Segment> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back({s.a - mid, s.b - mid});
  return out;
}

std::vector<Segment> bend_onto_cylinder(std::span<const Segment> segments, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw Error(ErrorKind::input, "bend radius must be positive");
  const auto wrap = [radius](const Point3& p) {
    if (std::abs(p.z) > 1e-12) throw Error(ErrorKind::geometry, "only planar (z = 0) patches can be bent");
    const double t = p.x / radius;
    return Point3{radius * std::sin(t), p.y, radius * (std::cos(t) - 1.0)};
  };
  std::vector<Segment> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back({wrap(s.a), wrap(s.b)});
  return out;
}

std::vector<Segment> read_segments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open segment file '" + path.string() + "'");
  std::vector<Segment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream is(line);
    double v[6];
    int n = 0;
    while (n < 6 && is >> v[n]) ++n;
    if (n == 0 && is.eof()) continue;
    std::string rest;
    if (n != 6 || (is >> rest)) {
      throw Error(ErrorKind::io, path.string() + ":" + std::to_string(lineno) + ": expected six coordinates");
    }
    out.push_back({{v[0], v[1], v[2]}, {v[3], v[4], v[5]}});
  }
  if (out.empty()) throw Error(ErrorKind::io, "segment file '" + path.string() + "' has no segments");
  return out;
}

void write_segments(const std::filesystem::path& path, std::span<const Segment> segments) {
  auto out = io::open_output(path);
  out << "# x1 y1 z1 x2 y2 z2 (m)\n";
  for (const auto& s : segments) {
    out << io::format_double(s.a.x) << ' ' << io::format_double(s.a.y) << ' ' << io::format_double(s.a.z) << ' '
        << io::format_double(s.b.x) << ' ' << io::format_double(s.b.y) << ' ' << io::format_double(s.b.z) << '\n';
  }
  if (!out) throw Error(ErrorKind::io, "write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------------------
// Probes and safety check

double virtual_probe(const geometry::VoxelGrid& grid, std::span<const double> field, const geometry::ProbeBox& box) {
  if (field.size() != grid.node_count()) throw Error(ErrorKind::input, "field does not match the grid");
  const Point3 up = grid.upper();
  const Point3& o = grid.origin();
  const Vec3& h = grid.spacing();
  const auto& dims = grid.dims();
  double lo[3], hi[3];
  std::size_t first[3], last[3];
  for (int a = 0; a < 3; ++a) {
    if (!(box.half_extent[a] >= 0.0)) throw Error(ErrorKind::input, "probe '" + box.name + "' has a negative extent");
    lo[a] = std::max(box.center[a] - box.half_extent[a], o[a]);
    hi[a] = std::min(box.center[a] + box.half_extent[a], up[a]);
    if (!(hi[a] > lo[a])) {
      throw Error(ErrorKind::geometry, "probe '" + box.name + "' does not intersect the grid");
    }
    first[a] = static_cast<std::size_t>(std::max(0.0, std::floor((lo[a] - o[a]) / h[a])));
    last[a] = std::min<std::size_t>(dims[a], static_cast<std::size_t>(std::ceil((hi[a] - o[a]) / h[a])));
  }
  const auto& rule = gauss_legendre(2);
  double sum = 0.0, volume = 0.0;
  for (std::size_t k = first[2]; k < last[2]; ++k) {
    for (std::size_t j = first[1]; j < last[1]; ++j) {
      for (std::size_t i = first[0]; i < last[0]; ++i) {
        const std::size_t idx[3] = {i, j, k};
        double a0[3], len[3];
        bool empty = false;
        for (int a = 0; a < 3; ++a) {
          const double v0 = o[a] + static_cast<double>(idx[a]) * h[a];
          a0[a] = std::max(lo[a], v0);
          len[a] = std::min(hi[a], v0 + h[a]) - a0[a];
          if (!(len[a] > 0.0)) empty = true;
        }
        if (empty) continue;
        const double vol = len[0] * len[1] * len[2];
        for (int qz = 0; qz < rule.order(); ++qz) {
          for (int qy = 0; qy < rule.order(); ++qy) {
            for (int qx = 0; qx < rule.order(); ++qx) {
              const Point3 p{a0[0] + rule.nodes[qx] * len[0], a0[1] + rule.nodes[qy] * len[1],
                             a0[2] + rule.nodes[qz] * len[2]};
              sum += vol * rule.weights[qx] * rule.weights[qy] * rule.weights[qz] * grid.interpolate(field, p);
            }
          }
        }
        volume += vol;
      }
    }
  }
  if (!(volume > 0.0)) throw Error(ErrorKind::geometry, "probe '" + box.name + "' does not intersect the grid");
  return sum / volume;
}

AbResult ab_limit_check(double h_peak, double frequency) {
  if (!(h_peak > 0.0) || !(frequency > 0.0) || !std::isfinite(h_peak) || !std::isfinite(frequency)) {
    throw Error(ErrorKind::input, "field strength and frequency must be positive");
  }
  AbResult r;
  r.product = h_peak * frequency;
  r.margin = r.product / kAbLimit;
  r.pass = r.product < kAbLimit;
  return r;
}

geometry::VoxelGrid container_grid(const Vec3& container, double spacing, int material,
                                   std::optional<std::pair<Point3, Point3>> crop) {
  if (!(spacing > 0.0)) throw Error(ErrorKind::config, "voxel spacing must be positive");
  std::array<std::size_t, 3> n{};
  for (int a = 0; a < 3; ++a) {
    const double r = container[a] / spacing;
    const double rounded = std::round(r);
    if (rounded < 1.0 || std::abs(r - rounded) > 1e-6 * std::max(1.0, r)) {
      throw Error(ErrorKind::config, "container size must be a whole number of voxels");
    }
    n[a] = static_cast<std::size_t>(rounded);
  }
  std::array<std::size_t, 3> first{0, 0, 0};
  std::array<std::size_t, 3> last = n;
  if (crop) {
    for (int a = 0; a < 3; ++a) {
      const double lo = std::floor(crop->first[a] / spacing + 1e-9);
      const double hi = std::ceil(crop->second[a] / spacing - 1e-9);
      first[a] = static_cast<std::size_t>(std::clamp(lo, 0.0, static_cast<double>(n[a])));
      last[a] = static_cast<std::size_t>(std::clamp(hi, 0.0, static_cast<double>(n[a])));
      if (last[a] <= first[a]) throw Error(ErrorKind::geometry, "crop box misses the container");
    }
  }
  const Point3 origin{static_cast<double>(first[0]) * spacing, static_cast<double>(first[1]) * spacing,
                      static_cast<double>(first[2]) * spacing};
  return geometry::VoxelGrid(origin, {spacing, spacing, spacing},
                             {last[0] - first[0], last[1] - first[1], last[2] - first[2]}, material);
}

// ---------------------------------------------------------------------------
// Scenario presets

MaterialSpec material_preset(const std::string& name) {
  // conductivity W/m/K, density kg/m^3, heat capacity J/kg/K, perfusion W/m^3/K
  if (name == "gel") return {name, {0.624, 1006.0, 4200.0, 0.0}};
  if (name == "polystyrene") return {name, {0.035, 20.0, 1200.0, 0.0}};
  if (name == "titanium") return {name, {17.0, 4510.0, 523.0, 0.0}};
  if (name == "tissue") return {name, {0.51, 1046.0, 3630.0, 3.0e4}};
  throw Error(ErrorKind::config, "unknown material preset '" + name + "'");
}

namespace {

std::vector<ProbeSpec> phantom_probes(double side) {
  // two peripheral probes 3 mm inside the midpoints of two edges, one at the
  // centre; boxes sit on top of the wire surface
  const double z = 0.3e-3 + 0.5e-3;
  const double edge = 0.5 * side - 3e-3;
  return {ProbeSpec{"ch1", {-edge, 0.0, z}, {0.0015, 0.001, 0.0005}, true},
          ProbeSpec{"ch2", {0.0, -edge, z}, {0.001, 0.0015, 0.0005}, true},
          ProbeSpec{"ch3", {0.0, 0.0, z}, {0.0015, 0.001, 0.0005}, true}};
}

std::vector<ProbeSpec> phantom_points(double side) {
  const double z = 0.3e-3 + 0.5e-3;
  const double c = 0.5 * side - 1e-3;
  return {ProbeSpec{"vertex", {-c, -c, z}, {}, true}, ProbeSpec{"edge_mid", {-c, 0.0, z}, {}, true},
          ProbeSpec{"centre", {0.0, 0.0, z}, {}, true}};
}

}  // namespace

ScenarioConfig gel_phantom() {
  ScenarioConfig c;
  c.name = "gel";
  c.medium = material_preset("gel");
  c.crop_margin = 0.03;
  c.placement = {{0.1, 0.22, 0.065}, 0.0};
  c.probes = phantom_probes(c.implant_side);
  c.points = phantom_points(c.implant_side);
  return c;
}

ScenarioConfig polystyrene_phantom() {
  ScenarioConfig c = gel_phantom();
  c.name = "polystyrene";
  c.medium = material_preset("polystyrene");
  c.crop_margin = 0.04;
  return c;
}

ScenarioConfig mh_synthetic() {
  ScenarioConfig c;
  c.name = "mh_synthetic";
  c.source_type = "collar";
  c.frequency = 100e3;
  c.b_peak = 16e-3;
  c.implant_side = 0.048;
  c.implant_cells = 18;
  c.bend_radius = 0.08;
  c.container = {0.16, 0.16, 0.12};
  c.placement = {{0.08, 0.08, 0.09}, 0.0};
  c.collar_radius = 0.07;
  c.collar_center = {0.1, 0.08, 0.06};
  c.collar_axis = {0.0, 0.0, 1.0};
  c.collar_turns = 4;
  c.collar_pitch = 0.01;
  c.medium = material_preset("tissue");
  c.crop_margin = 0.02;
  c.duration = 600.0;
  c.dt = 20.0;
  c.points = {ProbeSpec{"corner", {0.5 * c.implant_side - 1e-3, 0.5 * c.implant_side - 1e-3, 0.8e-3}, {}, true}};
  return c;
}

// ---------------------------------------------------------------------------
// Scenario assembly

std::vector<Segment> implant_segments(const ScenarioConfig& config) {
  std::vector<Segment> local;
  if (!config.segment_file.empty()) {
    local = read_segments(config.segment_file);
  } else {
    if (config.implant_cells == 0) throw Error(ErrorKind::config, "implant.cells must be positive");
    const double pitch = config.implant_side / static_cast<double>(config.implant_cells);
    local = centered(tile_cranial_mesh(truncated_square_cell(pitch), config.implant_side));
  }
  if (config.bend_radius > 0.0) local = bend_onto_cylinder(local, config.bend_radius);
  return place(local, config.placement);
}

double max_flux_density(const field::FieldSource& source, const geometry::VoxelGrid& grid, std::size_t stride) {
  if (stride == 0) throw Error(ErrorKind::input, "sampling stride must be positive");
  const auto nd = grid.node_dims();
  std::vector<std::size_t> nodes;
  for (std::size_t k = 0; k < nd[2]; k += stride) {
    for (std::size_t j = 0; j < nd[1]; j += stride) {
      for (std::size_t i = 0; i < nd[0]; i += stride) nodes.push_back(grid.node_index(i, j, k));
    }
  }
  double best = 0.0;
#pragma omp parallel for reduction(max : best) schedule(dynamic, 64)
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    best = std::max(best, norm(field::flux_density(source, grid.node_position(nodes[n]))));
  }
  return best;
}

field::FieldSource make_source(const ScenarioConfig& config, const geometry::ImplantNetwork& network,
                               const geometry::VoxelGrid& grid) {
  if (!(config.frequency > 0.0)) throw Error(ErrorKind::config, "source.frequency must be positive");
  if (!(config.b_peak >= 0.0)) throw Error(ErrorKind::config, "source.b_peak must not be negative");
  if (config.source_type == "uniform") {
    const double n = norm(config.b_direction);
    if (!(n > 0.0)) throw Error(ErrorKind::config, "source.direction must be a nonzero vector");
    const Vec3 dir = config.b_direction * (config.b_peak / n);
    const auto bb = bounds_of(network.nodes());
    return field::UniformHarmonicField{CVec3{dir.x, dir.y, dir.z}, config.frequency, 0.5 * (bb.lo + bb.hi)};
  }
  field::PolylineCoil coil;
  if (config.source_type == "coil") {
    if (config.coil_file.empty()) throw Error(ErrorKind::config, "source.coil_file is required for coil sources");
    coil = field::read_coil_file(config.coil_file, config.frequency);
  } else if (config.source_type == "collar") {
    if (config.collar_turns < 1) throw Error(ErrorKind::config, "source.collar_turns must be positive");
    const double an = norm(config.collar_axis);
    if (!(an > 0.0)) throw Error(ErrorKind::config, "source.collar_axis must be a nonzero vector");
    const Vec3 axis = config.collar_axis * (1.0 / an);
    coil.frequency = config.frequency;
    for (int t = 0; t < config.collar_turns; ++t) {
      const double off = (t - 0.5 * (config.collar_turns - 1)) * config.collar_pitch;
      coil.loops.push_back(field::circular_polyline(config.collar_center + axis * off, axis, config.collar_radius,
                                                    config.collar_sides));
      coil.currents.emplace_back(1.0, 0.0);
    }
  } else {
    throw Error(ErrorKind::config, "unknown source.type '" + config.source_type + "'");
  }
  field::FieldSource src = coil;
  field::validate(src);
  if (config.b_peak > 0.0) {
    const double b = max_flux_density(src, grid);
    if (!(b > 0.0)) throw Error(ErrorKind::numerical, "coil field vanishes on the grid; cannot rescale");
    src = field::scaled(src, config.b_peak / b);
  }
  return src;
}

Scenario build_scenario(const ScenarioConfig& config) {
  step_count(config);
  if (!(config.radius > 0.0)) throw Error(ErrorKind::config, "implant.radius must be positive");
  if (config.control_factor < 1) throw Error(ErrorKind::config, "solver.control_factor must be at least 1");
  if (!(config.h_amb >= 0.0)) throw Error(ErrorKind::config, "materials.h_amb must not be negative");
  (void)outer_preconditioner(config.preconditioner);
  const auto segs = implant_segments(config);
  auto network = geometry::build_network(segs, config.radius, config.conductivity);

  std::optional<std::pair<Point3, Point3>> crop;
  if (config.crop_margin > 0.0) {
    auto bb = bounds_of(network.nodes());
    const Vec3 m{config.crop_margin, config.crop_margin, config.crop_margin};
    crop = std::make_pair(bb.lo - m, bb.hi + m);
  }
  auto grid = container_grid(config.container, config.spacing, 1, crop);
  geometry::MaterialTable materials;
  materials.add(1, config.medium.name, config.medium.material);
  grid.check_materials(materials);
  for (const auto& p : network.nodes()) {
    if (!grid.contains(p)) throw Error(ErrorKind::geometry, "implant extends outside the voxel container");
  }

  auto source = make_source(config, network, grid);
  const double b_max =
      std::holds_alternative<field::UniformHarmonicField>(source) ? config.b_peak : max_flux_density(source, grid);
  Scenario s{config, std::move(network), std::move(source), std::move(grid), std::move(materials), {}, {}, b_max};
  const auto convert = [&](const ProbeSpec& p) {
    const Point3 c = p.implant_frame ? place_point(p.position, config.placement) : p.position;
    return geometry::ProbeBox{p.name, c, p.half_extent};
  };
  for (const auto& p : config.probes) s.probes.push_back(convert(p));
  for (const auto& p : config.points) {
    auto box = convert(p);
    if (!s.grid.contains(box.center)) throw Error(ErrorKind::geometry, "point '" + p.name + "' lies outside the grid");
    s.points.push_back(box);
  }
  const std::vector<double> zero(s.grid.node_count(), 0.0);
  for (const auto& p : s.probes) (void)virtual_probe(s.grid, zero, p);  // validates the overlap
  return s;
}

namespace {

double default_h_hat(const Scenario& s) {
  if (s.config.h_hat > 0.0) return s.config.h_hat;
  return 0.5 * s.network.total_length() / static_cast<double>(s.network.branch_count());
}

}  // namespace

std::vector<Point3> gamma_points(const Scenario& scenario) {
  const auto mesh = coupled::build_mesh1d(scenario.network, default_h_hat(scenario));
  const auto control = coupled::build_control_mesh(scenario.network, mesh, scenario.config.control_factor);
  return coupled::assemble_coupling(scenario.grid, mesh, control, scenario.network.radius()).points;
}

// ---------------------------------------------------------------------------
// Runs

em::EmSolution run_em(const Scenario& scenario) { return em::solve_em(scenario.network, scenario.source); }

ThermalRun run_seed(const Scenario& scenario, const em::BranchLosses& losses, const Progress& progress) {
  const auto& cfg = scenario.config;
  const std::size_t steps = step_count(cfg);
  const auto system = thermal::assemble_3d(scenario.grid, scenario.materials, cfg.h_amb);
  const auto power = thermal::deposit_power(scenario.network, losses, scenario.grid);
  thermal::SeedSolver solver(system, thermal::load_vector(scenario.grid, power), cfg.dt, cfg.tol_inner);
  thermal::TemperatureField3D state{std::vector<double>(system.nodes, 0.0), 0.0};
  ThermalRun run;
  run.times.push_back(0.0);
  run.probe_series.push_back(probe_values(scenario.grid, state.values, scenario.probes));
  for (std::size_t n = 1; n <= steps; ++n) {
    state = solver.step(state);
    run.times.push_back(state.time);
    run.probe_series.push_back(probe_values(scenario.grid, state.values, scenario.probes));
    if (!cfg.output_dir.empty() && cfg.snapshot_every > 0 && n % cfg.snapshot_every == 0) {
      io::write_vtk(cfg.output_dir / step_name("seed", n), scenario.grid, {{"theta", state.values}});
    }
    if (progress) progress("seed", n, steps);
  }
  run.final_field = std::move(state.values);
  return run;
}

ThermalRun run_coupled(const Scenario& scenario, const em::BranchLosses& losses, const Progress& progress) {
  const auto& cfg = scenario.config;
  const std::size_t steps = step_count(cfg);
  const auto system = thermal::assemble_3d(scenario.grid, scenario.materials, cfg.h_amb);
  const auto mesh = coupled::build_mesh1d(scenario.network, default_h_hat(scenario));
  const auto control = coupled::build_control_mesh(scenario.network, mesh, cfg.control_factor);
  const auto blocks = coupled::assemble_1d(mesh, scenario.network.radius(), cfg.implant.material, losses);
  const auto coupling = coupled::assemble_coupling(scenario.grid, mesh, control, scenario.network.radius());
  coupled::CoupledOptions opt;
  opt.dt = cfg.dt;
  opt.tol_outer = cfg.tol_outer;
  opt.tol_inner = cfg.tol_inner;
  opt.max_outer = cfg.max_outer;
  opt.preconditioner = outer_preconditioner(cfg.preconditioner);
  opt.kkt_halo = cfg.kkt_halo;
  coupled::CoupledSolver solver(system, blocks, coupling, cfg.implant.material, opt);
  auto state = solver.initial_state();
  ThermalRun run;
  run.times.push_back(0.0);
  run.probe_series.push_back(probe_values(scenario.grid, state.theta3, scenario.probes));
  for (std::size_t n = 1; n <= steps; ++n) {
    coupled::StepDiagnostics diag;
    state = solver.step(state, &diag);
    run.diagnostics.push_back(std::move(diag));
    run.times.push_back(state.time);
    run.probe_series.push_back(probe_values(scenario.grid, state.theta3, scenario.probes));
    if (!cfg.output_dir.empty() && cfg.snapshot_every > 0 && n % cfg.snapshot_every == 0) {
      io::write_vtk(cfg.output_dir / step_name("coupled", n), scenario.grid, {{"theta", state.theta3}});
    }
    if (progress) progress("coupled", n, steps);
  }
  run.final_field = std::move(state.theta3);
  if (!cfg.output_dir.empty()) {
    const auto profile = coupled::profile_1d(mesh, state.theta1);
    io::write_profile_csv(cfg.output_dir / "coupled_1d.csv", profile);
  }
  run.final_theta1 = std::move(state.theta1);
  return run;
}

const ProbeReading& ComparisonReport::probe(const std::string& name) const {
  for (const auto& p : probes) {
    if (p.name == name) return p;
  }
  throw Error(ErrorKind::input, "no probe named '" + name + "'");
}

const ProbeReading& ComparisonReport::point(const std::string& name) const {
  for (const auto& p : points) {
    if (p.name == name) return p;
  }
  throw Error(ErrorKind::input, "no point named '" + name + "'");
}

namespace {

std::vector<std::string> names_of(const std::vector<geometry::ProbeBox>& boxes) {
  std::vector<std::string> out;
  for (const auto& b : boxes) out.push_back(b.name);
  return out;
}

void write_report(const ComparisonReport& r, const Scenario& s, const std::filesystem::path& path) {
  io::Summary sum;
  sum.set("scenario", r.scenario);
  sum.set("complete", r.complete);
  sum.set("branches", r.branches);
  sum.set("loops", r.loops);
  sum.set("total_power_w", r.total_power);
  sum.set("frequency_hz", s.config.frequency);
  sum.set("b_max_t", s.b_max);
  sum.set("final_time_s", r.final_time);
  sum.set("steps", r.steps);
  for (const auto& p : r.probes) {
    sum.set("probe." + p.name + ".seed", p.seed);
    sum.set("probe." + p.name + ".coupled", p.coupled);
    sum.set("probe." + p.name + ".reduction", p.seed != 0.0 ? (p.seed - p.coupled) / p.seed : 0.0);
  }
  for (const auto& p : r.points) {
    sum.set("point." + p.name + ".seed", p.seed);
    sum.set("point." + p.name + ".coupled", p.coupled);
  }
  sum.set("seed_peak", r.seed_peak);
  sum.set("coupled_peak", r.coupled_peak);
  sum.set("peak_reduction", r.peak_reduction);
  sum.set("max_abs_difference", r.max_abs_difference);
  sum.set("max_difference_x", r.max_difference_location.x);
  sum.set("max_difference_y", r.max_difference_location.y);
  sum.set("max_difference_z", r.max_difference_location.z);
  sum.set("seed_gamma_min", r.seed_gamma_min);
  sum.set("coupled_gamma_min", r.coupled_gamma_min);
  sum.set("mismatch", r.mismatch);
  sum.set("worst_mismatch", r.worst_mismatch);
  sum.set("max_outer_iterations", r.max_outer_iterations);
  sum.set("worst_outer_residual", r.worst_outer_residual);
  sum.set("worst_inner_residual", r.worst_inner_residual);
  sum.set("functional_monotone", r.functional_monotone);
  sum.set("worst_energy_balance", r.worst_energy_balance);
  sum.set("wall_seconds", r.wall_seconds);
  sum.write(path);
}

bool non_increasing(const std::vector<double>& history) {
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] > history[i - 1] * (1.0 + 1e-10) + 1e-300) return false;
  }
  return true;
}

}  // namespace

ComparisonReport run_comparison(const ScenarioConfig& config, const Progress& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  const Scenario s = build_scenario(config);
  ComparisonReport r;
  r.scenario = config.name;
  r.branches = s.network.branch_count();
  const bool write = !config.output_dir.empty();
  const auto summary_path = config.output_dir / "summary.txt";
  try {
    const auto em = run_em(s);
    r.loops = em.system.loops;
    r.total_power = em.losses.total;
    if (write) io::write_branch_losses(config.output_dir / "branch_losses.csv", s.network, em.currents, em.losses);

    const auto seed = run_seed(s, em.losses, progress);
    const auto cpl = run_coupled(s, em.losses, progress);
    const auto names = names_of(s.probes);
    if (write) {
      io::write_probe_csv(config.output_dir / "seed_probes.csv", names, seed.times, seed.probe_series);
      io::write_probe_csv(config.output_dir / "coupled_probes.csv", names, cpl.times, cpl.probe_series);
      io::write_diagnostics_csv(config.output_dir / "coupled_diagnostics.csv",
                                std::span<const double>(cpl.times).subspan(1), cpl.diagnostics);
    }

    r.steps = cpl.diagnostics.size();
    r.final_time = seed.times.back();
    for (std::size_t i = 0; i < s.probes.size(); ++i) {
      r.probes.push_back({s.probes[i].name, seed.probe_series.back()[i], cpl.probe_series.back()[i]});
    }
    for (const auto& p : s.points) {
      r.points.push_back({p.name, s.grid.interpolate(seed.final_field, p.center),
                          s.grid.interpolate(cpl.final_field, p.center)});
    }
    r.seed_peak = *std::max_element(seed.final_field.begin(), seed.final_field.end());
    r.coupled_peak = *std::max_element(cpl.final_field.begin(), cpl.final_field.end());
    r.peak_reduction = r.seed_peak > 0.0 ? (r.seed_peak - r.coupled_peak) / r.seed_peak : 0.0;
    std::size_t arg = 0;
    for (std::size_t n = 0; n < seed.final_field.size(); ++n) {
      const double d = std::abs(cpl.final_field[n] - seed.final_field[n]);
      if (d > r.max_abs_difference) {
        r.max_abs_difference = d;
        arg = n;
      }
    }
    r.max_difference_location = s.grid.node_position(arg);
    const auto gp = gamma_points(s);
    r.seed_gamma_min = std::numeric_limits<double>::infinity();
    r.coupled_gamma_min = std::numeric_limits<double>::infinity();
    for (const auto& p : gp) {
      r.seed_gamma_min = std::min(r.seed_gamma_min, s.grid.interpolate(seed.final_field, p));
      r.coupled_gamma_min = std::min(r.coupled_gamma_min, s.grid.interpolate(cpl.final_field, p));
    }
    for (const auto& d : cpl.diagnostics) {
      r.worst_mismatch = std::max(r.worst_mismatch, d.mismatch);
      r.max_outer_iterations = std::max(r.max_outer_iterations, d.outer_iterations);
      r.worst_outer_residual = std::max(r.worst_outer_residual, d.outer_residual);
      r.worst_inner_residual = std::max(r.worst_inner_residual, d.worst_inner_residual);
      r.functional_monotone = r.functional_monotone && non_increasing(d.functional_history);
      if (d.injected_energy > 0.0) {
        r.worst_energy_balance = std::max(r.worst_energy_balance,
                                          std::abs(d.enthalpy_gain - d.injected_energy) / d.injected_energy);
      }
    }
    r.mismatch = cpl.diagnostics.empty() ? 0.0 : cpl.diagnostics.back().mismatch;
    if (write) {
      std::vector<double> diff(seed.final_field.size());
      for (std::size_t n = 0; n < diff.size(); ++n) diff[n] = cpl.final_field[n] - seed.final_field[n];
      io::write_vtk(config.output_dir / "final.vtk", s.grid,
                    {{"seed", seed.final_field}, {"coupled", cpl.final_field}, {"difference", diff}});
    }
    r.complete = true;
  } catch (...) {
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (write) {
      try {
        write_report(r, s, summary_path);
      } catch (...) {
      }
    }
    throw;
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (write) write_report(r, s, summary_path);
  return r;
}

}  // namespace implantheat::scenarios
