#include <cmath>
#include <random>

#include "doctest.h"
#include "implantheat/kernels.hpp"
#include "implantheat/quadrature.hpp"
#include "implantheat/sparsekit.hpp"

using namespace implantheat;

namespace {

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("serial and parallel reductions agree to rounding") {
  for (std::size_t n : {0u, 1u, 7u, 1000u, 100003u}) {
    const auto x = random_vector(n, 1), y = random_vector(n, 2);
    const double ds = kernels::dot(x, y, Exec::serial);
    const double dp = kernels::dot(x, y, Exec::parallel);
    CHECK(std::abs(ds - dp) <= 1e-12 * std::max(1.0, std::sqrt(double(n))));
    CHECK(kernels::norm2(x, Exec::serial) == doctest::Approx(kernels::norm2(x, Exec::parallel)).epsilon(1e-13));
  }
}

TEST_CASE("serial and parallel vector updates are bit-identical") {
  const auto x = random_vector(50001, 3);
  auto ys = random_vector(50001, 4), yp = ys;
  kernels::axpy(0.37, x, ys, Exec::serial);
  kernels::axpy(0.37, x, yp, Exec::parallel);
  CHECK(ys == yp);
  const auto before = ys;
  kernels::xpby(x, -1.5, ys, Exec::serial);
  kernels::xpby(x, -1.5, yp, Exec::parallel);
  CHECK(ys == yp);
  CHECK(ys[10] == x[10] - 1.5 * before[10]);
}

TEST_CASE("CSR product kernel matches the matrix class") {
  std::vector<sparse::Triplet> t;
  const std::size_t n = 2000;
  std::mt19937 rng(5);
  std::uniform_int_distribution<std::size_t> col(0, n - 1);
  for (std::size_t r = 0; r < n; ++r)
    for (int k = 0; k < 7; ++k) t.push_back({r, col(rng), double(k) - 3.0});
  const auto m = sparse::CsrMatrix::from_triplets(n, n, t);
  const auto x = random_vector(n, 6);
  std::vector<double> ys(n), yp(n), yd(n, 0.0);
  kernels::spmv(m.pattern().offsets, m.pattern().columns, m.values(), x, ys, Exec::serial);
  kernels::spmv(m.pattern().offsets, m.pattern().columns, m.values(), x, yp, Exec::parallel);
  CHECK(ys == yp);
  for (const auto& e : t) yd[e.row] += e.value * x[e.col];
  for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(yd[i]).epsilon(1e-12));
  CHECK(kernels::thread_count() >= 1);
}

TEST_CASE("Gauss-Legendre rules integrate polynomials of degree 2n-1 exactly") {
  for (int n : {1, 2, 3, 8, 16, 64}) {
    const auto& g = gauss_legendre(n);
    REQUIRE(g.order() == n);
    for (int p = 0; p < 2 * n; ++p) {
      double s = 0.0;
      for (int q = 0; q < n; ++q) s += g.weights[q] * std::pow(g.nodes[q], p);
      CHECK(s == doctest::Approx(1.0 / (p + 1)).epsilon(1e-13));
    }
  }
}
