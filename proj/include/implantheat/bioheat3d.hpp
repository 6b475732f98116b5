#pragma once

// Pennes bioheat equation (temperature-increase form) on a voxel grid with
// trilinear hexahedral elements, and the thermal-seed forcing built from the
// implant's Joule losses.

#include <span>
#include <vector>

#include "implantheat/common.hpp"
#include "implantheat/em_circuit.hpp"
#include "implantheat/geometry.hpp"
#include "implantheat/sparsekit.hpp"

namespace implantheat::thermal {

/// Piecewise-constant volumetric power, W/m^3 per voxel.
struct VolumetricPower {
  std::vector<double> density;
  /// Sum of density * voxel volume, W.
  double total(const geometry::VoxelGrid& grid) const;
};

/// Spreads every branch's losses over the voxels it crosses, in proportion
/// to the clipped length.
VolumetricPower deposit_power(const geometry::ImplantNetwork& network, const em::BranchLosses& losses,
                              const geometry::VoxelGrid& grid);

/// Finite-element matrices on the nodes of a voxel grid. All four share one
/// 27-point sparsity pattern.
struct FemSystem3D {
  std::size_t nodes = 0;
  sparse::CsrMatrix mass;        // rho c_p weighted
  sparse::CsrMatrix stiffness;   // lambda weighted
  sparse::CsrMatrix perfusion;   // h_b weighted
  sparse::CsrMatrix robin;       // h_amb weighted, exterior faces only
};

/// The 27-point nodal pattern of a grid.
std::shared_ptr<const sparse::CsrPattern> nodal_pattern(const geometry::VoxelGrid& grid);

/// Exec::serial scatters element matrices; Exec::parallel gathers each row
/// from its (at most eight) incident voxels.
FemSystem3D assemble_3d(const geometry::VoxelGrid& grid, const geometry::MaterialTable& materials, double h_amb,
                        Exec exec = Exec::parallel);

/// f_i = integral of p N_i; exact for voxel-wise constant p.
std::vector<double> load_vector(const geometry::VoxelGrid& grid, const VolumetricPower& power);

struct TemperatureField3D {
  std::vector<double> values;  // nodal temperature increase, degC
  double time = 0.0;
};

/// Backward-Euler system A = M/dt + K + P + B with its IC(0) factor.
class ImplicitStepper3D {
 public:
  ImplicitStepper3D(const FemSystem3D& system, double dt, double rtol = 1e-7, Exec exec = Exec::parallel);

  double dt() const { return dt_; }
  std::size_t size() const { return matrix_.size(); }
  const sparse::SparseSpd& matrix() const { return matrix_; }
  const sparse::IncompleteCholesky& preconditioner() const { return ic_; }
  const FemSystem3D& system() const { return system_; }

  /// out = M prev / dt
  void history(std::span<const double> prev, std::span<double> out) const;
  /// Solves A x = rhs to the stepper's relative tolerance, then applies a
  /// Galerkin correction along the constant vector. The correction zeroes
  /// the residual's sum, so with adiabatic, perfusion-free boundaries the
  /// discrete energy balance holds to rounding and not just to rtol. The
  /// returned residual is that of the corrected iterate.
  sparse::PcgResult solve(std::span<const double> rhs, std::span<const double> x0 = {}) const;

 private:
  const FemSystem3D& system_;
  double dt_;
  double rtol_;
  Exec exec_;
  sparse::SparseSpd matrix_;
  sparse::IncompleteCholesky ic_;
  std::vector<double> a_ones_;  // A 1
  double ones_a_ones_ = 0.0;    // 1^T A 1
};

/// The thermal-seed model: the implant only contributes its losses.
class SeedSolver {
 public:
  SeedSolver(const FemSystem3D& system, std::vector<double> load, double dt, double rtol = 1e-7,
             Exec exec = Exec::parallel);

  TemperatureField3D step(const TemperatureField3D& state);
  std::size_t last_iterations() const { return last_iterations_; }
  double last_residual() const { return last_residual_; }
  const ImplicitStepper3D& stepper() const { return stepper_; }

 private:
  ImplicitStepper3D stepper_;
  std::vector<double> load_;
  std::size_t last_iterations_ = 0;
  double last_residual_ = 0.0;
};

/// Thermal energy content integral of rho c_p theta, J (uses the mass matrix).
double enthalpy(const FemSystem3D& system, std::span<const double> theta);

}  // namespace implantheat::thermal
