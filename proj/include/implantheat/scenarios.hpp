#pragma once

// Scenario layer: implant geometry generation, phantom grids, virtual
// probes, the Atkinson-Brezovich check and the seed-vs-coupled comparison.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "implantheat/bioheat3d.hpp"
#include "implantheat/coupled3d1d.hpp"
#include "implantheat/em_circuit.hpp"
#include "implantheat/field_source.hpp"
#include "implantheat/geometry.hpp"

namespace implantheat::scenarios {

using geometry::Segment;

/// Periodic planar cell in [0, pitch]^2 (z = 0).
struct CellTemplate {
  double pitch = 0.0;
  std::vector<Segment> segments;
};

/// Truncated-square (4.8.8) cell: one axis-aligned regular octagon whose
/// flat sides lie on the cell boundary. Neighbouring octagons share those
/// sides; the leftover square holes form the small meshes.
CellTemplate truncated_square_cell(double pitch);

/// Throws unless the template's boundary points match on opposite sides.
void check_periodic(const CellTemplate& cell);

/// Repeats the cell over an n x n array filling a square of the given side
/// (side / pitch must be an integer). Shared edges appear twice; build_network
/// merges them.
std::vector<Segment> tile_cranial_mesh(const CellTemplate& cell, double side);

/// Rigid placement of a planar implant built around the origin of its own
/// frame: rotation about its normal, then translation.
struct Placement {
  Point3 center;
  double rotation_deg = 0.0;
};

Point3 place_point(const Point3& local, const Placement& placement);
std::vector<Segment> place(std::span<const Segment> local, const Placement& placement);

/// Moves the square's center to the origin of its local frame.
std::vector<Segment> centered(std::span<const Segment> segments);

/// Wraps a planar (z = 0) patch onto a cylinder of the given radius whose
/// axis is parallel to y and lies at z = -radius; x becomes arc length.
std::vector<Segment> bend_onto_cylinder(std::span<const Segment> segments, double radius);

/// Read/write the plain segment format (x1 y1 z1 x2 y2 z2 per line, '#' comments).
std::vector<Segment> read_segments(const std::filesystem::path& path);
void write_segments(const std::filesystem::path& path, std::span<const Segment> segments);

/// Volume average of the trilinear field over the box (clipped to the grid).
double virtual_probe(const geometry::VoxelGrid& grid, std::span<const double> field, const geometry::ProbeBox& box);

struct AbResult {
  bool pass = false;
  double product = 0.0;  // H f, A/(m s)
  double margin = 0.0;   // H f / 5e9
};

/// Strict H f < 5e9 A/(m s).
AbResult ab_limit_check(double h_peak, double frequency);

/// Axis-aligned box of the voxel container around `lower`..`upper`, snapped
/// outward to the container's voxel planes and clipped to it.
geometry::VoxelGrid container_grid(const Vec3& container, double spacing, int material,
                                   std::optional<std::pair<Point3, Point3>> crop = std::nullopt);

// ---------------------------------------------------------------------------
// Scenario description and comparison driver

struct MaterialSpec {
  std::string name;
  geometry::Material material;
};

/// Named presets: gel, polystyrene, titanium, tissue.
MaterialSpec material_preset(const std::string& name);

struct ProbeSpec {
  std::string name;
  Point3 position;                            // in the frame given by `implant_frame`
  Vec3 half_extent{0.0015, 0.001, 0.0005};
  bool implant_frame = true;
};

struct ScenarioConfig {
  std::string name = "scenario";
  // source
  std::string source_type = "uniform";  // uniform | coil | collar
  double frequency = 2000.0;
  double b_peak = 3.5e-3;               // T; uniform amplitude, or coil scaling target
  Vec3 b_direction{0.0, 0.0, 1.0};
  std::filesystem::path coil_file;
  double collar_radius = 0.08;
  Point3 collar_center;
  Vec3 collar_axis{0.0, 0.0, 1.0};
  int collar_turns = 4;
  double collar_pitch = 0.01;
  std::size_t collar_sides = 96;
  // implant
  std::filesystem::path segment_file;
  double implant_side = 0.093;
  std::size_t implant_cells = 36;
  double bend_radius = 0.0;
  double radius = 0.3e-3;
  double conductivity = 1.82e6;
  Placement placement{{0.1, 0.22, 0.065}, 45.0};
  // grid and materials
  Vec3 container{0.2, 0.44, 0.13};
  double spacing = 0.002;
  double crop_margin = 0.0;  // 0 keeps the whole container
  MaterialSpec medium = material_preset("gel");
  MaterialSpec implant = material_preset("titanium");
  double h_amb = 0.0;
  // exposure
  double duration = 900.0;
  double dt = 10.0;
  // solver
  double h_hat = 0.0;  // 0: half the mean branch length
  int control_factor = 2;
  double tol_outer = 1e-6;
  double tol_inner = 1e-7;
  std::size_t max_outer = 5000;
  std::string preconditioner = "local_kkt";  // local_kkt | lumped_kkt | block_diagonal
  std::size_t kkt_halo = 1;
  // probes
  std::vector<ProbeSpec> probes;
  std::vector<ProbeSpec> points;  // pointwise comparison sites (half extent ignored)
  // output
  std::filesystem::path output_dir;
  std::size_t snapshot_every = 0;  // steps; 0 disables VTK snapshots
};

/// Defaults for the gel and polystyrene phantom experiments and the synthetic MH case.
ScenarioConfig gel_phantom();
ScenarioConfig polystyrene_phantom();
ScenarioConfig mh_synthetic();

/// Everything a thermal run needs, built once from a config.
struct Scenario {
  ScenarioConfig config;
  geometry::ImplantNetwork network;
  field::FieldSource source;
  geometry::VoxelGrid grid;
  geometry::MaterialTable materials;
  std::vector<geometry::ProbeBox> probes;
  std::vector<geometry::ProbeBox> points;
  double b_max = 0.0;  // peak |B| over the sampled grid nodes, T
};

std::vector<Segment> implant_segments(const ScenarioConfig& config);

/// Builds the configured source. Coil sources are rescaled so that the peak
/// |B| over every second grid node equals b_peak (when b_peak > 0).
field::FieldSource make_source(const ScenarioConfig& config, const geometry::ImplantNetwork& network,
                               const geometry::VoxelGrid& grid);

/// Largest |B| over the grid nodes taken with the given stride per axis.
double max_flux_density(const field::FieldSource& source, const geometry::VoxelGrid& grid, std::size_t stride = 2);

/// Gamma quadrature points of the coupled discretization (used to compare
/// both models on the implant surface).
std::vector<Point3> gamma_points(const Scenario& scenario);
Scenario build_scenario(const ScenarioConfig& config);

struct ProbeReading {
  std::string name;
  double seed = 0.0;
  double coupled = 0.0;
};

struct ComparisonReport {
  std::string scenario;
  double total_power = 0.0;
  std::size_t loops = 0;
  std::size_t branches = 0;
  double final_time = 0.0;
  std::vector<ProbeReading> probes;
  std::vector<ProbeReading> points;
  double seed_peak = 0.0;
  double coupled_peak = 0.0;
  double max_abs_difference = 0.0;
  Point3 max_difference_location;
  double mismatch = 0.0;          // Delta theta at the final step
  double worst_mismatch = 0.0;    // over all steps
  double peak_reduction = 0.0;    // (seed - coupled) / seed on the peaks
  double seed_gamma_min = 0.0;    // min over Gamma quadrature points
  double coupled_gamma_min = 0.0;
  std::size_t steps = 0;
  std::size_t max_outer_iterations = 0;
  double worst_outer_residual = 0.0;
  double worst_inner_residual = 0.0;
  bool functional_monotone = true;
  double worst_energy_balance = 0.0;  // max over steps of |gain - dt P| / (dt P)
  double wall_seconds = 0.0;
  bool complete = false;

  const ProbeReading& probe(const std::string& name) const;
  const ProbeReading& point(const std::string& name) const;
};

/// Progress callback: (model, step, steps).
using Progress = std::function<void(const std::string&, std::size_t, std::size_t)>;

struct ThermalRun {
  std::vector<double> times;
  std::vector<std::vector<double>> probe_series;  // per time, per probe
  std::vector<double> final_field;
  std::vector<double> final_theta1;               // coupled only
  std::vector<coupled::StepDiagnostics> diagnostics;
};

em::EmSolution run_em(const Scenario& scenario);
ThermalRun run_seed(const Scenario& scenario, const em::BranchLosses& losses, const Progress& progress = {});
ThermalRun run_coupled(const Scenario& scenario, const em::BranchLosses& losses, const Progress& progress = {});

/// EM solve once, then both thermal models; writes every artifact when the
/// config names an output directory.
ComparisonReport run_comparison(const ScenarioConfig& config, const Progress& progress = {});

}  // namespace implantheat::scenarios
