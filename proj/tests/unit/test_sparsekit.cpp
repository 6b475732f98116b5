#include <cmath>
#include <random>

#include "doctest.h"
#include "implantheat/sparsekit.hpp"

using namespace implantheat;
using namespace implantheat::sparse;

namespace {

using Dense = std::vector<std::vector<double>>;

CsrMatrix from_dense(const Dense& a) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (a[i][j] != 0.0) t.push_back({i, j, a[i][j]});
  return CsrMatrix::from_triplets(a.size(), a.size(), std::move(t));
}

Dense dense_cholesky(const Dense& a) {
  const std::size_t n = a.size();
  Dense l(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j][k] * l[j][k];
    l[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      l[i][j] = s / l[j][j];
    }
  }
  return l;
}

std::vector<double> dense_solve(const Dense& a, std::vector<double> b) {
  const Dense l = dense_cholesky(a);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= l[i][k] * b[k];
    b[i] /= l[i][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= l[k][i] * b[k];
    b[i] /= l[i][i];
  }
  return b;
}

SparseSpd laplacian3d(std::size_t m) {
  std::vector<Triplet> t;
  auto id = [m](std::size_t i, std::size_t j, std::size_t k) { return i + m * (j + m * k); };
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t r = id(i, j, k);
        t.push_back({r, r, 6.0});
        if (i > 0) t.push_back({r, id(i - 1, j, k), -1.0});
        if (i + 1 < m) t.push_back({r, id(i + 1, j, k), -1.0});
        if (j > 0) t.push_back({r, id(i, j - 1, k), -1.0});
        if (j + 1 < m) t.push_back({r, id(i, j + 1, k), -1.0});
        if (k > 0) t.push_back({r, id(i, j, k - 1), -1.0});
        if (k + 1 < m) t.push_back({r, id(i, j, k + 1), -1.0});
      }
  return SparseSpd(CsrMatrix::from_triplets(m * m * m, m * m * m, std::move(t)));
}

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

double residual(const SparseSpd& a, std::span<const double> x, std::span<const double> b) {
  std::vector<double> ax(b.size());
  a.multiply(x, ax);
  double r = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    r += (ax[i] - b[i]) * (ax[i] - b[i]);
    nb += b[i] * b[i];
  }
  return std::sqrt(r / nb);
}

}  // namespace

TEST_CASE("triplet assembly sums duplicates and keeps ascending columns") {
  const auto m = CsrMatrix::from_triplets(3, 3, {{0, 2, 1.0}, {0, 0, 2.0}, {0, 2, 0.5}, {2, 1, 0.0}, {1, 1, 3.0}});
  CHECK(m.at(0, 2) == 1.5);
  CHECK(m.at(0, 0) == 2.0);
  CHECK(m.at(1, 0) == 0.0);
  CHECK(m.pattern().find(2, 1) >= 0);  // explicit zero kept
  CHECK(m.pattern().find(2, 2) == -1);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = m.pattern().offsets[r] + 1; k < m.pattern().offsets[r + 1]; ++k)
      CHECK(m.pattern().columns[k - 1] < m.pattern().columns[k]);
  const auto d = m.diagonal();
  CHECK(d[2] == 0.0);
}

TEST_CASE("transpose product and linear combination") {
  const Dense a{{1, 2, 0}, {0, 3, 4}, {5, 0, 6}};
  const auto m = from_dense(a);
  const std::vector<double> x{1.0, -2.0, 0.5};
  std::vector<double> y(3), yt(3);
  m.multiply(x, y);
  m.multiply_transposed(x, yt);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0, st = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      s += a[i][j] * x[j];
      st += a[j][i] * x[j];
    }
    CHECK(y[i] == doctest::Approx(s));
    CHECK(yt[i] == doctest::Approx(st));
  }
  CsrMatrix twice(m.shared_pattern(), std::vector<double>(m.values().begin(), m.values().end()));
  const double w[2] = {2.0, -0.5};
  const CsrMatrix* terms[2] = {&m, &twice};
  const auto c = linear_combination(w, terms);
  CHECK(c.at(2, 0) == doctest::Approx(1.5 * 5.0));
}

TEST_CASE("IC(0) of a diagonal matrix is its square root") {
  const Dense a{{4, 0, 0}, {0, 9, 0}, {0, 0, 2}};
  const IncompleteCholesky ic{SparseSpd(from_dense(a))};
  CHECK(ic.lower().at(0, 0) == doctest::Approx(2.0));
  CHECK(ic.lower().at(1, 1) == doctest::Approx(3.0));
  CHECK(ic.lower().at(2, 2) == doctest::Approx(std::sqrt(2.0)));
  CHECK(ic.shift() == 0.0);
}

TEST_CASE("IC(0) of a tridiagonal matrix equals the complete factor") {
  const std::size_t n = 5;
  Dense a(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    a[i][i] = 2.0 + 0.1 * double(i);
    if (i > 0) a[i][i - 1] = a[i - 1][i] = -1.0;
  }
  const IncompleteCholesky ic{SparseSpd(from_dense(a))};
  const Dense l = dense_cholesky(a);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) CHECK(ic.lower().at(i, j) == doctest::Approx(l[i][j]).epsilon(1e-14));
}

TEST_CASE("IC(0) shifts an indefinite-pivot matrix instead of failing") {
  // SPD but with a zero-fill pattern that breaks plain IC(0)
  const Dense a{{3, -2, 0, 2}, {-2, 3, -2, 0}, {0, -2, 3, -2}, {2, 0, -2, 3}};
  const IncompleteCholesky ic{SparseSpd(from_dense(a))};
  std::vector<double> z(4);
  const std::vector<double> r{1, 2, 3, 4};
  ic.apply(r, z);
  for (double v : z) CHECK(std::isfinite(v));
}

TEST_CASE("PCG: identity converges in one step, zero rhs returns zero") {
  const Dense eye{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const SparseSpd a(from_dense(eye));
  const MatrixOperator op(a);
  const IdentityPreconditioner id(3);
  const std::vector<double> b{1, 2, 3};
  const auto r = pcg(op, b, id);
  CHECK(r.iterations == 1);
  CHECK(r.converged);
  CHECK(r.x[2] == doctest::Approx(3.0));

  const auto z = pcg(op, std::vector<double>(3, 0.0), id);
  CHECK(z.iterations == 0);
  CHECK(z.converged);
  for (double v : z.x) CHECK(v == 0.0);
}

TEST_CASE("PCG: random SPD against a dense solve") {
  const std::size_t n = 50;
  std::mt19937 rng(9);
  std::normal_distribution<double> g;
  Dense b(n, std::vector<double>(n));
  for (auto& row : b)
    for (auto& v : row) v = g(rng);
  Dense a(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) a[i][j] += b[k][i] * b[k][j];
      if (i == j) a[i][j] += 1.0;
    }
  const SparseSpd s(from_dense(a));
  const auto rhs = random_vector(n, 2);
  const auto want = dense_solve(a, rhs);
  const IncompleteCholesky ic(s);
  const auto got = pcg(MatrixOperator(s), rhs, ic, {.rtol = 1e-12, .max_iterations = 500});
  CHECK(got.converged);
  double err = 0.0, nw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    err += (got.x[i] - want[i]) * (got.x[i] - want[i]);
    nw += want[i] * want[i];
  }
  CHECK(std::sqrt(err / nw) < 1e-8);
  CHECK(residual(s, got.x, rhs) <= 1e-12);
}

TEST_CASE("PCG: IC(0) beats plain CG on the 3D Laplacian") {
  const auto a = laplacian3d(8);
  const auto b = random_vector(a.size(), 4);
  const PcgOptions opts{.rtol = 1e-10, .max_iterations = 2000};
  const auto plain = pcg(MatrixOperator(a), b, IdentityPreconditioner(a.size()), opts);
  const auto pre = pcg(MatrixOperator(a), b, IncompleteCholesky(a), opts);
  CHECK(plain.converged);
  CHECK(pre.converged);
  CHECK(pre.iterations < plain.iterations);
  CHECK(residual(a, pre.x, b) <= 1e-10);
  // history is recorded for every iterate and ends at the reported residual
  CHECK(pre.residual_history.size() == pre.iterations + 1);
  CHECK(pre.residual_history.back() == doctest::Approx(pre.relative_residual));
}

TEST_CASE("PCG: failure modes") {
  const auto a = laplacian3d(6);
  const auto b = random_vector(a.size(), 5);
  CHECK_THROWS_AS(pcg(MatrixOperator(a), b, IdentityPreconditioner(a.size()), {.rtol = 1e-12, .max_iterations = 2}),
                  Error);
  const auto soft =
      pcg(MatrixOperator(a), b, IdentityPreconditioner(a.size()), {.rtol = 1e-12, .max_iterations = 2, .throw_on_failure = false});
  CHECK_FALSE(soft.converged);

  // negative definite operator
  struct Neg final : LinearOperator {
    std::size_t size() const override { return 2; }
    void apply(std::span<const double> x, std::span<double> y) const override {
      y[0] = -x[0];
      y[1] = -2.0 * x[1];
    }
  } op;
  CHECK_THROWS_AS(pcg(op, std::vector<double>{1, 1}, IdentityPreconditioner(2)), Error);
}

TEST_CASE("PCG: warm start and observer") {
  const auto a = laplacian3d(5);
  const auto b = random_vector(a.size(), 6);
  const IncompleteCholesky ic(a);
  const auto cold = pcg(MatrixOperator(a), b, ic, {.rtol = 1e-10});
  std::size_t calls = 0;
  PcgOptions opts{.rtol = 1e-10};
  opts.observer = [&](std::size_t, std::span<const double>, double) { ++calls; };
  const auto warm = pcg(MatrixOperator(a), b, ic, opts, cold.x);
  CHECK(warm.iterations == 0);
  const auto again = pcg(MatrixOperator(a), b, ic, opts);
  CHECK(calls == again.iterations);
}

TEST_CASE("complete sparse Cholesky and sparse LU solve exactly") {
  const auto a = laplacian3d(7);
  const auto b = random_vector(a.size(), 8);
  const SparseCholesky chol(a);
  const auto r = pcg(MatrixOperator(a), b, chol, {.rtol = 1e-12});
  CHECK(r.iterations <= 2);
  CHECK(residual(a, r.x, b) <= 1e-12);

  // nonsymmetric LU on a saddle-point system
  std::vector<Triplet> t;
  const std::size_t n = a.size();
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t k = a.matrix().pattern().offsets[row]; k < a.matrix().pattern().offsets[row + 1]; ++k)
      t.push_back({row, a.matrix().pattern().columns[k], a.matrix().values()[k]});
  t.push_back({0, n, 1.0});
  t.push_back({n, 0, 1.0});
  t.push_back({n, 1, 0.5});
  const SparseLu lu(n + 1, t);
  std::vector<double> rhs(n + 1, 1.0), x(n + 1);
  lu.solve(rhs, x);
  const auto m = CsrMatrix::from_triplets(n + 1, n + 1, t);
  std::vector<double> mx(n + 1);
  m.multiply(x, mx);
  for (std::size_t i = 0; i <= n; ++i) CHECK(mx[i] == doctest::Approx(1.0).epsilon(1e-10));

  CHECK_THROWS_AS(SparseLu(2, {{0, 0, 1.0}}), Error);
  const Dense indefinite{{1, 2}, {2, 1}};
  CHECK_THROWS_AS(SparseCholesky{SparseSpd(from_dense(indefinite))}, Error);
}

TEST_CASE("serial and parallel products agree") {
  const auto a = laplacian3d(9);
  const auto x = random_vector(a.size(), 10);
  std::vector<double> ys(a.size()), yp(a.size());
  a.multiply(x, ys, Exec::serial);
  a.multiply(x, yp, Exec::parallel);
  for (std::size_t i = 0; i < ys.size(); ++i) CHECK(ys[i] == yp[i]);
}
