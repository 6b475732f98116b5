#pragma once

// Lumped circuit model of a thin-wire implant in a harmonic magnetic field:
// partial inductances, loop-current phasor solve and Joule losses.

#include <span>
#include <vector>

#include "implantheat/common.hpp"
#include "implantheat/field_source.hpp"
#include "implantheat/geometry.hpp"

namespace implantheat::em {

/// R = l / (sigma pi r^2), DC resistance of a round wire.
double branch_resistance(double length, double radius, double conductivity);

/// Partial self-inductance of a straight round wire with uniform current,
/// mu0 l / (2 pi) (ln(2 l / r) - 1 + 1/4). The 1/4 is the internal term.
double self_inductance(double length, double radius);

/// Internal part alone, mu0 l / (8 pi).
double internal_inductance(double length);

/// Neumann mutual inductance of two straight filaments, signed by their
/// orientation. Touching pairs use the closed form for filaments meeting at a
/// vertex; other near pairs are subdivided. Collinear overlap is a geometry error.
double mutual_inductance(const geometry::Segment& a, const geometry::Segment& b);

/// Dense symmetric matrix stored in full so that every row is contiguous.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}
  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  /// Sets both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double v) {
    data_[i * n_ + j] = v;
    data_[j * n_ + i] = v;
  }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * n_, n_}; }

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

struct InductanceOptions {
  /// Mutual terms with |M| below this absolute value (H) are set to zero.
  double mutual_floor = 0.0;
  Exec exec = Exec::parallel;
};

/// Branch resistances plus the full inductance matrix (self terms on the
/// diagonal, mutual terms off it).
struct BranchImpedance {
  std::vector<double> resistance;
  SymmetricMatrix inductance;
  std::size_t dropped_mutuals = 0;

  std::size_t size() const { return resistance.size(); }
  double self(std::size_t b) const { return inductance(b, b); }
};

BranchImpedance assemble_impedances(const geometry::ImplantNetwork& network, const InductanceOptions& options = {});

/// Dense complex-symmetric loop system Z J = E.
struct LoopSystem {
  std::size_t loops = 0;
  std::vector<Complex> z;    // row-major loops x loops
  std::vector<Complex> emf;  // per loop, V peak
  std::vector<Complex> branch_emf;
  geometry::LoopBasis basis;
  double omega = 0.0;

  Complex at(std::size_t i, std::size_t j) const { return z[i * loops + j]; }
};

LoopSystem assemble_loop_system(const geometry::ImplantNetwork& network, const BranchImpedance& impedance,
                                geometry::LoopBasis basis, const field::FieldSource& source,
                                Exec exec = Exec::parallel);

/// Complex-symmetric L D L^T without pivoting (Re Z is positive definite for
/// a passive RL network, so no pivot can vanish in exact arithmetic).
class ComplexLdlt {
 public:
  ComplexLdlt(std::span<const Complex> matrix, std::size_t n);
  std::vector<Complex> solve(std::span<const Complex> rhs) const;
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::vector<double> lre_, lim_;  // unit lower factor, row-major
  std::vector<Complex> d_;
};

struct BranchCurrents {
  std::vector<Complex> loop;    // J
  std::vector<Complex> branch;  // I = S^T J, oriented from -> to
  /// max over nodes |sum of signed incident currents| / max |I|.
  double kcl_residual = 0.0;
};

BranchCurrents solve_loop_currents(const LoopSystem& system, const geometry::ImplantNetwork& network,
                                   Exec exec = Exec::parallel);

struct BranchLosses {
  std::vector<double> linear_density;  // p_em,l, W/m (time average)
  std::vector<double> power;           // W per branch
  double total = 0.0;
};

/// Time-averaged Joule losses for peak phasors: p = R |I|^2 / (2 l).
BranchLosses branch_losses(const geometry::ImplantNetwork& network, const BranchImpedance& impedance,
                           std::span<const Complex> branch_currents);

/// Losses built directly from per-branch densities (e.g. read back from CSV).
BranchLosses losses_from_density(const geometry::ImplantNetwork& network, std::vector<double> linear_density);

struct EmSolution {
  BranchImpedance impedance;
  LoopSystem system;
  BranchCurrents currents;
  BranchLosses losses;
  /// 1/2 Re(J^H E): the power delivered by the loop EMFs.
  double source_power = 0.0;
};

/// Full chain: impedances, fundamental loops, loop solve and losses.
EmSolution solve_em(const geometry::ImplantNetwork& network, const field::FieldSource& source,
                    const InductanceOptions& options = {},
                    geometry::SpanningTree tree = geometry::SpanningTree::breadth_first);

}  // namespace implantheat::em
