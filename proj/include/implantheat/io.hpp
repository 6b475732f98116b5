#pragma once

// Result files: CSV tables, flat key=value summaries and legacy ASCII VTK
// structured-points snapshots.

#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "implantheat/coupled3d1d.hpp"
#include "implantheat/em_circuit.hpp"
#include "implantheat/geometry.hpp"

namespace implantheat::io {

namespace fs = std::filesystem;

/// branch,from,to,length_m,resistance_ohm,current_abs_a,p_em_l_w_per_m
void write_branch_losses(const fs::path& path, const geometry::ImplantNetwork& network,
                         const em::BranchCurrents& currents, const em::BranchLosses& losses);

/// Reads the p_em_l column back; the row count must match `branch_count`.
em::BranchLosses read_branch_losses(const fs::path& path, const geometry::ImplantNetwork& network);

/// time_s followed by one column per probe.
void write_probe_csv(const fs::path& path, std::span<const std::string> names, std::span<const double> times,
                     const std::vector<std::vector<double>>& series);

/// branch,arc_m,theta_hat
void write_profile_csv(const fs::path& path, std::span<const coupled::Profile1D> profile);

/// step,time_s,functional,mismatch,outer_iterations,outer_residual,inner_solves,inner_iterations,
/// max_inner_iterations,worst_inner_residual,enthalpy_gain_j,injected_energy_j
void write_diagnostics_csv(const fs::path& path, std::span<const double> times,
                           std::span<const coupled::StepDiagnostics> diagnostics);

/// Point data on the grid nodes; every field must have node_count() values.
void write_vtk(const fs::path& path, const geometry::VoxelGrid& grid,
               const std::vector<std::pair<std::string, std::span<const double>>>& fields,
               const std::string& title = "temperature increase");

/// Ordered key=value lines; doubles use round-trip precision.
class Summary {
 public:
  void set(const std::string& key, double value);
  void set(const std::string& key, std::size_t value);
  void set(const std::string& key, bool value);
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  void write(const fs::path& path) const;

 private:
  void put(const std::string& key, std::string value);
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::map<std::string, std::string> read_summary(const fs::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Opens for writing, creating parent directories; throws io errors.
std::ofstream open_output(const fs::path& path);

}  // namespace implantheat::io
