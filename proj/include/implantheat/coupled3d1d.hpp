#pragma once

// Non-conforming 3D-1D thermal coupling. The implant is a 1D finite-element
// problem on the wire network; it exchanges heat with the voxel model through
// an interface flux phi (piecewise constant) and an interface temperature psi
// (piecewise linear) on a control mesh. Each time step minimizes the
// continuity functional J(phi, psi) subject to both backward-Euler problems.

#include <memory>
#include <span>
#include <vector>

#include "implantheat/bioheat3d.hpp"
#include "implantheat/em_circuit.hpp"
#include "implantheat/geometry.hpp"
#include "implantheat/sparsekit.hpp"

namespace implantheat::coupled {

struct Cell1D {
  std::size_t n0 = 0;  // node at the `from` side
  std::size_t n1 = 0;
  std::size_t branch = 0;
  double length = 0.0;
  double s0 = 0.0;  // arc length of n0 from the branch start
};

/// Partition of every branch into equal cells. Network nodes keep their ids
/// (0..network_nodes-1); interior nodes follow branch by branch.
struct Mesh1D {
  std::vector<Point3> positions;
  std::vector<std::size_t> node_branch;  // a branch containing the node
  std::vector<double> node_arc;          // arc length along node_branch
  std::vector<Cell1D> cells;
  std::vector<std::size_t> branch_first_cell;  // size branches + 1
  std::size_t network_nodes = 0;
  double h_hat = 0.0;  // largest cell length

  std::size_t node_count() const { return positions.size(); }
  std::size_t cell_count() const { return cells.size(); }
  double total_length() const;
};

/// Splits each branch into ceil(l / h_hat) cells.
Mesh1D build_mesh1d(const geometry::ImplantNetwork& network, double h_hat);

struct ControlCell {
  std::size_t branch = 0;
  std::size_t first_cell = 0;  // Mesh1D cells [first_cell, last_cell)
  std::size_t last_cell = 0;
  std::size_t psi0 = 0;
  std::size_t psi1 = 0;
  double length = 0.0;
  double s0 = 0.0;
};

/// Coarser partition hosting phi (one value per cell) and psi (nodal).
struct ControlMesh {
  std::vector<ControlCell> cells;
  std::vector<std::size_t> control_of_cell;  // per Mesh1D cell
  std::size_t psi_nodes = 0;
  double h_bar = 0.0;

  std::size_t phi_count() const { return cells.size(); }
};

/// Groups `factor` consecutive Mesh1D cells per branch; a remainder is
/// merged into the branch's last control cell.
ControlMesh build_control_mesh(const geometry::ImplantNetwork& network, const Mesh1D& mesh, int factor);

/// 1D finite-element blocks: mass pi r^2 rho c, stiffness pi r^2 lambda and the
/// load whose line density is p_em,l.
struct Blocks1D {
  sparse::CsrMatrix mass;
  sparse::CsrMatrix stiffness;
  std::vector<double> load;
};

Blocks1D assemble_1d(const Mesh1D& mesh, double radius, const geometry::Material& implant,
                     const em::BranchLosses& losses);

/// Gauss quadrature on Gamma and every matrix built from it.
struct CouplingAssembly {
  double radius = 0.0;
  std::vector<double> weights;           // per quadrature point, m
  std::vector<Point3> points;
  std::vector<std::size_t> point_phi;    // control cell of each point
  sparse::CsrMatrix trace3;              // points x 3D nodes
  sparse::CsrMatrix trace1;              // points x 1D nodes
  sparse::CsrMatrix trace_psi;           // points x psi nodes
  sparse::CsrMatrix d;                   // 3D nodes x phi: integral of 2 pi r phi v_h
  sparse::CsrMatrix c;                   // 1D nodes x phi: integral of 2 pi r phi v_hat
  sparse::CsrMatrix psi_mass;            // psi x psi Gamma mass
  std::vector<double> phi_mass;          // |control cell|

  std::size_t point_count() const { return weights.size(); }
};

/// Three Gauss points per Mesh1D cell.
CouplingAssembly assemble_coupling(const geometry::VoxelGrid& grid, const Mesh1D& mesh, const ControlMesh& control,
                                   double radius, int order = 3);

/// ||theta_h - theta_hat||_Gamma / ||theta_h||_Gamma (0 when both vanish).
double continuity_mismatch(std::span<const double> theta3, std::span<const double> theta1,
                           const CouplingAssembly& coupling);

/// J = 1/2 (||theta_h - psi||^2 + ||theta_hat - psi||^2) over Gamma.
double evaluate_functional(std::span<const double> theta3, std::span<const double> theta1,
                           std::span<const double> psi, const CouplingAssembly& coupling);

struct CoupledState {
  std::vector<double> theta3;
  std::vector<double> theta1;
  std::vector<double> phi;
  std::vector<double> psi;
  double time = 0.0;
};

/// Outer (control-space) preconditioner.
///  - block_diagonal: |cell|-scaled identity on phi, IC(0) of the doubled psi
///    mass on psi. Cheap, but the iteration count grows quickly with the
///    number of flux cells per voxel.
///  - lumped_kkt: exact inverse of the reduced Hessian of a surrogate problem
///    in which the 3D solve is replaced by its row-lumped diagonal while the
///    1D solve is kept exact; applied through one sparse LU factorization
///    of the surrogate's optimality system. Good when the medium's heat
///    capacity dominates its conduction over one step (water-like gels).
///  - local_kkt: same construction, but the surrogate keeps the true 3D
///    operator restricted to the nodes touched by the coupling plus
///    `kkt_halo` layers of neighbours (zero temperature beyond). This
///    captures lateral conduction and stays effective for light,
///    poorly conducting media such as foams.
enum class OuterPreconditioner { block_diagonal, lumped_kkt, local_kkt };

struct CoupledOptions {
  double dt = 1.0;
  double tol_outer = 1e-6;
  double tol_inner = 1e-7;
  std::size_t max_outer = 5000;
  bool warm_start = true;
  OuterPreconditioner preconditioner = OuterPreconditioner::local_kkt;
  std::size_t kkt_halo = 1;
  Exec exec = Exec::parallel;
};

struct StepDiagnostics {
  std::size_t outer_iterations = 0;
  double outer_residual = 0.0;              // ||grad J|| / ||grad J(0)|| at exit
  std::vector<double> functional_history;   // J at the start and after each outer iteration
  std::size_t inner_solves = 0;
  std::size_t inner_iterations = 0;         // summed over all inner solves
  std::size_t max_inner_iterations = 0;
  double worst_inner_residual = 0.0;
  double functional = 0.0;                  // J of the returned state
  double mismatch = 0.0;                    // continuity_mismatch of the returned state
  double enthalpy_gain = 0.0;               // 3D + 1D, J
  double injected_energy = 0.0;             // dt * total 1D load, J
};

class CoupledSolver {
 public:
  /// All referenced objects must outlive the solver.
  CoupledSolver(const thermal::FemSystem3D& system3, const Blocks1D& blocks1, const CouplingAssembly& coupling,
                const geometry::Material& implant, const CoupledOptions& options);

  CoupledState initial_state() const;
  CoupledState step(const CoupledState& previous, StepDiagnostics* diagnostics = nullptr);

  /// J and its gradient for the step that starts from `previous`, at the
  /// given controls (used by derivative checks).
  double functional_at(const CoupledState& previous, std::span<const double> phi, std::span<const double> psi);
  std::vector<double> gradient_at(const CoupledState& previous, std::span<const double> phi,
                                  std::span<const double> psi);

  std::size_t phi_count() const { return coupling_.phi_mass.size(); }
  std::size_t psi_count() const { return coupling_.psi_mass.rows(); }
  double enthalpy3(std::span<const double> theta3) const;
  double enthalpy1(std::span<const double> theta1) const;

 private:
  struct Fields {
    std::vector<double> theta3, theta1;
  };
  std::vector<double> solve3(std::span<const double> rhs, std::span<const double> x0 = {});
  std::vector<double> solve1(std::span<const double> rhs, std::span<const double> x0 = {});
  Fields fields_at(const CoupledState& previous, std::span<const double> phi, const Fields* guess = nullptr);
  void residual_at_points(const Fields& f, std::span<const double> psi, std::vector<double>& e3,
                          std::vector<double>& e1) const;
  std::vector<double> gradient(std::span<const double> e3, std::span<const double> e1);
  void apply_preconditioner(std::span<const double> r, std::span<double> z) const;
  void count(const sparse::PcgResult& r);
  void build_kkt();

  const thermal::FemSystem3D& system3_;
  const Blocks1D& blocks1_;
  const CouplingAssembly& coupling_;
  CoupledOptions options_;
  thermal::ImplicitStepper3D stepper3_;
  sparse::SparseSpd a1_;
  sparse::SparseCholesky chol1_;
  sparse::SparseSpd g_psi_;
  sparse::IncompleteCholesky ic_psi_;
  double phi_scale_ = 1.0;
  std::unique_ptr<sparse::SparseLu> kkt_;
  std::size_t kkt_size_ = 0;
  StepDiagnostics* diag_ = nullptr;
};

/// Value of the 1D field along the mesh: (branch, arc length, theta_hat) per node.
struct Profile1D {
  std::size_t branch;
  double arc;
  double value;
};
std::vector<Profile1D> profile_1d(const Mesh1D& mesh, std::span<const double> theta1);

}  // namespace implantheat::coupled
