#include "implantheat/sparsekit.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "implantheat/kernels.hpp"

namespace implantheat::sparse {

std::ptrdiff_t CsrPattern::find(std::size_t row, std::size_t col) const {
  const auto begin = columns.begin() + static_cast<std::ptrdiff_t>(offsets[row]);
  const auto end = columns.begin() + static_cast<std::ptrdiff_t>(offsets[row + 1]);
  const auto it = std::lower_bound(begin, end, static_cast<std::uint32_t>(col));
  if (it == end || *it != col) return -1;
  return it - columns.begin();
}

CsrMatrix::CsrMatrix(std::shared_ptr<const CsrPattern> pattern, std::vector<double> values)
    : pattern_(std::move(pattern)), values_(std::move(values)) {
  if (!pattern_ || values_.size() != pattern_->nnz()) {
    throw Error(ErrorKind::input, "CSR value array does not match its pattern");
  }
}

CsrMatrix CsrMatrix::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
  std::sort(triplets.begin(), triplets.end(),
            [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  auto pattern = std::make_shared<CsrPattern>();
  pattern->rows = rows;
  pattern->cols = cols;
  pattern->offsets.assign(rows + 1, 0);
  std::vector<double> values;
  for (std::size_t k = 0; k < triplets.size();) {
    const auto& t = triplets[k];
    if (t.row >= rows || t.col >= cols) throw Error(ErrorKind::input, "triplet index out of range");
    double v = 0.0;
    std::size_t m = k;
    while (m < triplets.size() && triplets[m].row == t.row && triplets[m].col == t.col) v += triplets[m++].value;
    pattern->columns.push_back(static_cast<std::uint32_t>(t.col));
    values.push_back(v);
    ++pattern->offsets[t.row + 1];
    k = m;
  }
  for (std::size_t r = 0; r < rows; ++r) pattern->offsets[r + 1] += pattern->offsets[r];
  return CsrMatrix(std::move(pattern), std::move(values));
}

double CsrMatrix::at(std::size_t row, std::size_t col) const {
  const auto pos = pattern_->find(row, col);
  return pos < 0 ? 0.0 : values_[static_cast<std::size_t>(pos)];
}

std::vector<double> CsrMatrix::diagonal() const {
  std::vector<double> d(std::min(rows(), cols()), 0.0);
  for (std::size_t r = 0; r < d.size(); ++r) d[r] = at(r, r);
  return d;
}

void CsrMatrix::multiply(std::span<const double> x, std::span<double> y, Exec exec) const {
  kernels::spmv(pattern_->offsets, pattern_->columns, values_, x, y, exec);
}

void CsrMatrix::multiply_transposed(std::span<const double> x, std::span<double> y) const {
  std::fill(y.begin(), y.end(), 0.0);
  const auto& p = *pattern_;
  for (std::size_t r = 0; r < p.rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t k = p.offsets[r]; k < p.offsets[r + 1]; ++k) y[p.columns[k]] += values_[k] * xr;
  }
}

CsrMatrix linear_combination(std::span<const double> weights, std::span<const CsrMatrix* const> terms) {
  if (terms.empty() || weights.size() != terms.size()) throw Error(ErrorKind::input, "bad linear combination");
  const auto& pattern = terms.front()->shared_pattern();
  std::vector<double> values(pattern->nnz(), 0.0);
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (terms[t]->shared_pattern() != pattern) throw Error(ErrorKind::input, "linear combination needs a shared pattern");
    const auto v = terms[t]->values();
    for (std::size_t k = 0; k < values.size(); ++k) values[k] += weights[t] * v[k];
  }
  return CsrMatrix(pattern, std::move(values));
}

SparseSpd::SparseSpd(CsrMatrix matrix) : matrix_(std::move(matrix)) {
  const auto& p = matrix_.pattern();
  if (p.rows != p.cols) throw Error(ErrorKind::input, "SPD matrix must be square");
  for (std::size_t r = 0; r < p.rows; ++r) {
    bool has_diag = false;
    for (std::size_t k = p.offsets[r]; k < p.offsets[r + 1]; ++k) {
      const std::size_t c = p.columns[k];
      if (c == r) {
        has_diag = true;
        if (!(matrix_.values()[k] > 0.0)) {
          throw Error(ErrorKind::numerical, "non-positive diagonal at row " + std::to_string(r));
        }
      } else if (p.find(c, r) < 0) {
        throw Error(ErrorKind::input, "matrix is not structurally symmetric");
      }
    }
    if (!has_diag) throw Error(ErrorKind::input, "missing diagonal entry at row " + std::to_string(r));
  }
}

void IdentityPreconditioner::apply(std::span<const double> r, std::span<double> z) const {
  std::copy(r.begin(), r.end(), z.begin());
}

// ---------------------------------------------------------------------------
// IC(0)

IncompleteCholesky::IncompleteCholesky(const SparseSpd& a, int max_shift_attempts) {
  if (try_factor(a, 0.0)) return;
  const auto diag = a.matrix().diagonal();
  const double max_diag = *std::max_element(diag.begin(), diag.end());
  double alpha = 1e-8 * max_diag;
  for (int attempt = 0; attempt < max_shift_attempts; ++attempt, alpha *= 2.0) {
    if (try_factor(a, alpha)) return;
  }
  throw Error(ErrorKind::numerical, "incomplete Cholesky breakdown persists after diagonal shifting");
}

bool IncompleteCholesky::try_factor(const SparseSpd& a, double shift) {
  const auto& ap = a.matrix().pattern();
  const auto av = a.matrix().values();
  const std::size_t n = ap.rows;
  auto lp = std::make_shared<CsrPattern>();
  lp->rows = n;
  lp->cols = n;
  lp->offsets.assign(n + 1, 0);
  std::vector<double> lv;
  lv.reserve(ap.nnz() / 2 + n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = ap.offsets[r]; k < ap.offsets[r + 1]; ++k) {
      const std::size_t c = ap.columns[k];
      if (c > r) break;
      lp->columns.push_back(static_cast<std::uint32_t>(c));
      lv.push_back(av[k] + (c == r ? shift : 0.0));
    }
    lp->offsets[r + 1] = lp->columns.size();
    if (lp->columns.empty() || lp->columns.back() != r) throw Error(ErrorKind::input, "missing diagonal in IC(0)");
  }

  // row-oriented IC(0); `work` scatters the current row
  std::vector<double> work(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t begin = lp->offsets[i];
    const std::size_t diag = lp->offsets[i + 1] - 1;
    for (std::size_t k = begin; k < diag; ++k) {
      const std::size_t col = lp->columns[k];
      double s = lv[k];
      const std::size_t kdiag = lp->offsets[col + 1] - 1;
      for (std::size_t m = lp->offsets[col]; m < kdiag; ++m) s -= lv[m] * work[lp->columns[m]];
      lv[k] = s / lv[kdiag];
      work[col] = lv[k];
    }
    double d = lv[diag];
    for (std::size_t k = begin; k < diag; ++k) d -= lv[k] * lv[k];
    for (std::size_t k = begin; k < diag; ++k) work[lp->columns[k]] = 0.0;
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    lv[diag] = std::sqrt(d);
  }
  lower_ = CsrMatrix(std::move(lp), std::move(lv));
  shift_ = shift;
  return true;
}

void IncompleteCholesky::forward_solve(std::span<const double> b, std::span<double> y) const {
  const auto& p = lower_.pattern();
  const auto v = lower_.values();
  for (std::size_t i = 0; i < p.rows; ++i) {
    double s = b[i];
    const std::size_t diag = p.offsets[i + 1] - 1;
    for (std::size_t k = p.offsets[i]; k < diag; ++k) s -= v[k] * y[p.columns[k]];
    y[i] = s / v[diag];
  }
}

void IncompleteCholesky::backward_solve(std::span<const double> y, std::span<double> x) const {
  const auto& p = lower_.pattern();
  const auto v = lower_.values();
  std::copy(y.begin(), y.end(), x.begin());
  for (std::size_t i = p.rows; i-- > 0;) {
    const std::size_t diag = p.offsets[i + 1] - 1;
    const double xi = x[i] / v[diag];
    x[i] = xi;
    for (std::size_t k = p.offsets[i]; k < diag; ++k) x[p.columns[k]] -= v[k] * xi;
  }
}

void IncompleteCholesky::apply(std::span<const double> r, std::span<double> z) const {
  thread_local std::vector<double> tmp;
  tmp.resize(r.size());
  forward_solve(r, tmp);
  backward_solve(tmp, z);
}

// ---------------------------------------------------------------------------
// PCG

PcgResult pcg(const LinearOperator& a, std::span<const double> b, const Preconditioner& m,
              const PcgOptions& options, std::span<const double> x0) {
  const std::size_t n = a.size();
  if (b.size() != n || m.size() != n || (!x0.empty() && x0.size() != n)) {
    throw Error(ErrorKind::input, "pcg: dimension mismatch");
  }
  if (!(options.rtol > 0.0)) throw Error(ErrorKind::input, "pcg: rtol must be positive");
  const Exec ex = options.exec;
  PcgResult res;
  res.x.assign(n, 0.0);
  const double bnorm = kernels::norm2(b, ex);
  if (bnorm == 0.0) {
    res.converged = true;
    res.residual_history.push_back(0.0);
    return res;
  }
  std::vector<double> r(b.begin(), b.end());
  std::vector<double> q(n);
  if (!x0.empty()) {
    std::copy(x0.begin(), x0.end(), res.x.begin());
    a.apply(res.x, q);
    kernels::axpy(-1.0, q, r, ex);
  }
  double rel = kernels::norm2(r, ex) / bnorm;
  res.residual_history.push_back(rel);
  if (rel <= options.rtol) {
    res.converged = true;
    res.relative_residual = rel;
    return res;
  }
  std::vector<double> z(n);
  m.apply(r, z);
  std::vector<double> p = z;
  double rz = kernels::dot(r, z, ex);
  for (std::size_t it = 1; it <= options.max_iterations; ++it) {
    a.apply(p, q);
    const double pq = kernels::dot(p, q, ex);
    if (!(pq > 0.0)) {
      throw Error(ErrorKind::solver,
                  "pcg: operator is not positive definite (negative curvature at iteration " + std::to_string(it) + ")");
    }
    const double alpha = rz / pq;
    kernels::axpy(alpha, p, res.x, ex);
    kernels::axpy(-alpha, q, r, ex);
    rel = kernels::norm2(r, ex) / bnorm;
    res.residual_history.push_back(rel);
    res.iterations = it;
    if (options.observer) options.observer(it, res.x, rel);
    if (rel <= options.rtol) {
      res.converged = true;
      break;
    }
    m.apply(r, z);
    const double rz_new = kernels::dot(r, z, ex);
    kernels::xpby(z, rz_new / rz, p, ex);
    rz = rz_new;
  }
  res.relative_residual = rel;
  if (!res.converged && options.throw_on_failure) {
    std::ostringstream os;
    os << "pcg: no convergence after " << res.iterations << " iterations (relative residual " << rel
       << ", target " << options.rtol << ")";
    throw Error(ErrorKind::solver, os.str());
  }
  return res;
}

// ---------------------------------------------------------------------------
// Direct factorizations (Eigen)

namespace {

using EigenSparse = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

EigenSparse to_eigen(std::size_t n, const std::vector<Triplet>& entries) {
  if (n > static_cast<std::size_t>(std::numeric_limits<int>::max())) {
    throw Error(ErrorKind::input, "matrix too large for the direct solver");
  }
  std::vector<Eigen::Triplet<double, int>> t;
  t.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.row >= n || e.col >= n) throw Error(ErrorKind::input, "triplet index out of range");
    t.emplace_back(static_cast<int>(e.row), static_cast<int>(e.col), e.value);
  }
  EigenSparse m(static_cast<int>(n), static_cast<int>(n));
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

}  // namespace

struct SparseCholesky::Impl {
  Eigen::SimplicialLLT<EigenSparse, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
};

SparseCholesky::SparseCholesky(const SparseSpd& a) : impl_(std::make_unique<Impl>()), n_(a.size()) {
  const auto& m = a.matrix();
  std::vector<Triplet> t;
  t.reserve(m.nnz());
  const auto& pat = m.pattern();
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t k = pat.offsets[i]; k < pat.offsets[i + 1]; ++k) {
      if (pat.columns[k] <= i) t.push_back({i, pat.columns[k], m.values()[k]});
    }
  }
  impl_->llt.compute(to_eigen(n_, t));
  if (impl_->llt.info() != Eigen::Success) throw Error(ErrorKind::solver, "sparse Cholesky: matrix is not positive definite");
}

SparseCholesky::~SparseCholesky() = default;
SparseCholesky::SparseCholesky(SparseCholesky&&) noexcept = default;
SparseCholesky& SparseCholesky::operator=(SparseCholesky&&) noexcept = default;

void SparseCholesky::apply(std::span<const double> r, std::span<double> z) const {
  if (r.size() != n_ || z.size() != n_) throw Error(ErrorKind::input, "sparse Cholesky: size mismatch");
  Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(n_));
  Eigen::Map<Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(n_));
  zv = impl_->llt.solve(rv);
}

struct SparseLu::Impl {
  Eigen::SparseLU<EigenSparse, Eigen::COLAMDOrdering<int>> lu;
};

SparseLu::SparseLu(std::size_t n, const std::vector<Triplet>& entries) : impl_(std::make_unique<Impl>()), n_(n) {
  const EigenSparse m = to_eigen(n, entries);
  impl_->lu.analyzePattern(m);
  impl_->lu.factorize(m);
  if (impl_->lu.info() != Eigen::Success) {
    throw Error(ErrorKind::solver, "sparse LU factorization failed: " + impl_->lu.lastErrorMessage());
  }
}

SparseLu::~SparseLu() = default;
SparseLu::SparseLu(SparseLu&&) noexcept = default;
SparseLu& SparseLu::operator=(SparseLu&&) noexcept = default;

void SparseLu::solve(std::span<const double> b, std::span<double> x) const {
  if (b.size() != n_ || x.size() != n_) throw Error(ErrorKind::input, "sparse LU: size mismatch");
  Eigen::Map<const Eigen::VectorXd> bv(b.data(), static_cast<Eigen::Index>(n_));
  Eigen::Map<Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(n_));
  xv = impl_->lu.solve(bv);
}

}  // namespace implantheat::sparse
