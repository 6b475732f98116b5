#include "implantheat/kernels.hpp"

#include <omp.h>

namespace implantheat::kernels {

namespace {

using Index = std::ptrdiff_t;

double dot_serial(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double dot_parallel(std::span<const double> x, std::span<const double> y) {
  const Index n = static_cast<Index>(x.size());
  double s = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : s)
  for (Index i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

int thread_count() { return omp_get_max_threads(); }

double dot(std::span<const double> x, std::span<const double> y, Exec exec) {
  return exec == Exec::serial ? dot_serial(x, y) : dot_parallel(x, y);
}

double norm2(std::span<const double> x, Exec exec) { return std::sqrt(dot(x, x, exec)); }

void axpy(double a, std::span<const double> x, std::span<double> y, Exec exec) {
  const Index n = static_cast<Index>(x.size());
  if (exec == Exec::serial) {
    for (Index i = 0; i < n; ++i) y[i] += a * x[i];
    return;
  }
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) y[i] += a * x[i];
}

void xpby(std::span<const double> x, double b, std::span<double> y, Exec exec) {
  const Index n = static_cast<Index>(x.size());
  if (exec == Exec::serial) {
    for (Index i = 0; i < n; ++i) y[i] = x[i] + b * y[i];
    return;
  }
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) y[i] = x[i] + b * y[i];
}

void spmv(std::span<const std::size_t> offsets, std::span<const std::uint32_t> columns,
          std::span<const double> values, std::span<const double> x, std::span<double> y, Exec exec) {
  const Index rows = static_cast<Index>(offsets.size()) - 1;
  if (exec == Exec::serial) {
    for (Index r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) s += values[k] * x[columns[k]];
      y[r] = s;
    }
    return;
  }
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) s += values[k] * x[columns[k]];
    y[r] = s;
  }
}

}  // namespace implantheat::kernels
