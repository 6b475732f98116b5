#pragma once

// Data-parallel inner loops. Every kernel has a serial reference and an
// OpenMP variant selected by Exec; the tests check that both agree and
// bench/bench_kernels.cpp times them against each other.

#include <cstdint>
#include <span>

#include "implantheat/common.hpp"

namespace implantheat::kernels {

double dot(std::span<const double> x, std::span<const double> y, Exec exec = Exec::parallel);
double norm2(std::span<const double> x, Exec exec = Exec::parallel);

/// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y, Exec exec = Exec::parallel);

/// y = x + b * y
void xpby(std::span<const double> x, double b, std::span<double> y, Exec exec = Exec::parallel);

/// y = A x for a CSR matrix.
void spmv(std::span<const std::size_t> offsets, std::span<const std::uint32_t> columns,
          std::span<const double> values, std::span<const double> x, std::span<double> y,
          Exec exec = Exec::parallel);

/// Number of threads the parallel variants will use.
int thread_count();

}  // namespace implantheat::kernels
