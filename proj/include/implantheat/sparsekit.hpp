#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "implantheat/common.hpp"

namespace implantheat::sparse {

struct CsrPattern {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;     // rows + 1
  std::vector<std::uint32_t> columns;   // ascending within each row

  std::size_t nnz() const { return columns.size(); }
  /// Position of (row, col) in the value array, or -1.
  std::ptrdiff_t find(std::size_t row, std::size_t col) const;
};

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Compressed-row matrix; the pattern may be shared between matrices.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  CsrMatrix(std::shared_ptr<const CsrPattern> pattern, std::vector<double> values);

  /// Duplicates are summed; explicit zeros are kept.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets);

  std::size_t rows() const { return pattern_ ? pattern_->rows : 0; }
  std::size_t cols() const { return pattern_ ? pattern_->cols : 0; }
  std::size_t nnz() const { return values_.size(); }
  const CsrPattern& pattern() const { return *pattern_; }
  const std::shared_ptr<const CsrPattern>& shared_pattern() const { return pattern_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double at(std::size_t row, std::size_t col) const;
  std::vector<double> diagonal() const;

  /// y = A x
  void multiply(std::span<const double> x, std::span<double> y, Exec exec = Exec::parallel) const;
  /// y = A^T x
  void multiply_transposed(std::span<const double> x, std::span<double> y) const;

 private:
  std::shared_ptr<const CsrPattern> pattern_;
  std::vector<double> values_;
};

/// Sum of scaled matrices sharing one pattern.
CsrMatrix linear_combination(std::span<const double> weights, std::span<const CsrMatrix* const> terms);

/// Square, structurally symmetric CSR matrix with a positive diagonal.
class SparseSpd {
 public:
  explicit SparseSpd(CsrMatrix matrix);
  const CsrMatrix& matrix() const { return matrix_; }
  std::size_t size() const { return matrix_.rows(); }
  void multiply(std::span<const double> x, std::span<double> y, Exec exec = Exec::parallel) const {
    matrix_.multiply(x, y, exec);
  }

 private:
  CsrMatrix matrix_;
};

class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  virtual std::size_t size() const = 0;
  virtual void apply(std::span<const double> x, std::span<double> y) const = 0;
};

/// Applies M^-1 for an SPD approximation M of the operator.
class Preconditioner {
 public:
  virtual ~Preconditioner() = default;
  virtual std::size_t size() const = 0;
  virtual void apply(std::span<const double> r, std::span<double> z) const = 0;
};

class MatrixOperator final : public LinearOperator {
 public:
  explicit MatrixOperator(const SparseSpd& a, Exec exec = Exec::parallel) : a_(a), exec_(exec) {}
  std::size_t size() const override { return a_.size(); }
  void apply(std::span<const double> x, std::span<double> y) const override { a_.multiply(x, y, exec_); }

 private:
  const SparseSpd& a_;
  Exec exec_;
};

class IdentityPreconditioner final : public Preconditioner {
 public:
  explicit IdentityPreconditioner(std::size_t n) : n_(n) {}
  std::size_t size() const override { return n_; }
  void apply(std::span<const double> r, std::span<double> z) const override;

 private:
  std::size_t n_;
};

/// Zero-fill incomplete Cholesky A ~= L L^T. On a non-positive pivot the
/// factorization restarts on A + alpha I, alpha starting at 1e-8 max(diag A)
/// and doubling.
class IncompleteCholesky final : public Preconditioner {
 public:
  explicit IncompleteCholesky(const SparseSpd& a, int max_shift_attempts = 60);

  std::size_t size() const override { return lower_.rows(); }
  void apply(std::span<const double> r, std::span<double> z) const override;

  /// Lower factor, pattern = lower triangle of A (diagonal last in each row).
  const CsrMatrix& lower() const { return lower_; }
  double shift() const { return shift_; }
  void forward_solve(std::span<const double> b, std::span<double> y) const;
  void backward_solve(std::span<const double> y, std::span<double> x) const;

 private:
  bool try_factor(const SparseSpd& a, double shift);
  CsrMatrix lower_;
  double shift_ = 0.0;
};

/// Complete sparse Cholesky factor (fill-reducing ordering). As a
/// preconditioner it turns PCG into a direct solve that converges in one step.
class SparseCholesky final : public Preconditioner {
 public:
  explicit SparseCholesky(const SparseSpd& a);
  ~SparseCholesky() override;
  SparseCholesky(SparseCholesky&&) noexcept;
  SparseCholesky& operator=(SparseCholesky&&) noexcept;

  std::size_t size() const override { return n_; }
  void apply(std::span<const double> r, std::span<double> z) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::size_t n_ = 0;
};

/// Sparse LU factorization of a general square matrix given as triplets
/// (duplicates are summed). Throws a solver error when it is singular.
class SparseLu {
 public:
  SparseLu(std::size_t n, const std::vector<Triplet>& entries);
  ~SparseLu();
  SparseLu(SparseLu&&) noexcept;
  SparseLu& operator=(SparseLu&&) noexcept;

  std::size_t size() const { return n_; }
  void solve(std::span<const double> b, std::span<double> x) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::size_t n_ = 0;
};

struct PcgOptions {
  double rtol = 1e-7;
  std::size_t max_iterations = 2000;
  bool throw_on_failure = true;
  Exec exec = Exec::parallel;
  /// Called after every iteration with (iteration, iterate, relative residual).
  std::function<void(std::size_t, std::span<const double>, double)> observer;
};

struct PcgResult {
  std::vector<double> x;
  std::size_t iterations = 0;
  std::vector<double> residual_history;  // ||b - A x_k|| / ||b||, k = 0..iterations
  bool converged = false;
  double relative_residual = 0.0;
};

/// Preconditioned conjugate gradient on ||b - A x|| <= rtol ||b||. Throws a
/// solver error on negative curvature, and on non-convergence unless
/// throw_on_failure is false.
PcgResult pcg(const LinearOperator& a, std::span<const double> b, const Preconditioner& m,
              const PcgOptions& options = {}, std::span<const double> x0 = {});

}  // namespace implantheat::sparse
