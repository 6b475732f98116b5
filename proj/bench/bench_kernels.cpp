// Serial reference vs OpenMP kernels on phantom-sized data.

#include <benchmark/benchmark.h>

#include <random>

#include "implantheat/bioheat3d.hpp"
#include "implantheat/em_circuit.hpp"
#include "implantheat/kernels.hpp"
#include "implantheat/scenarios.hpp"

using namespace implantheat;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

std::vector<double> random_vector(std::size_t n) {
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// 2 mm voxels over the gel phantom's cropped box
const geometry::VoxelGrid& phantom_grid() {
  static const geometry::VoxelGrid grid({0, 0, 0}, {0.002, 0.002, 0.002}, {77, 77, 33}, 1);
  return grid;
}

const geometry::MaterialTable& gel_table() {
  static const geometry::MaterialTable table = [] {
    geometry::MaterialTable t;
    t.add(1, "gel", scenarios::material_preset("gel").material);
    return t;
  }();
  return table;
}

const thermal::FemSystem3D& phantom_system() {
  static const auto sys = thermal::assemble_3d(phantom_grid(), gel_table(), 0.0);
  return sys;
}

void BM_Dot(benchmark::State& state) {
  const auto x = random_vector(1 << 20), y = random_vector(1 << 20);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::dot(x, y, exec_of(state)));
  state.SetBytesProcessed(state.iterations() * 2 * static_cast<std::int64_t>(x.size() * sizeof(double)));
}
BENCHMARK(BM_Dot)->Arg(0)->Arg(1);

void BM_Axpy(benchmark::State& state) {
  const auto x = random_vector(1 << 20);
  auto y = random_vector(1 << 20);
  for (auto _ : state) {
    kernels::axpy(1e-9, x, y, exec_of(state));
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_Axpy)->Arg(0)->Arg(1);

void BM_Spmv3D(benchmark::State& state) {
  const auto& k = phantom_system().stiffness;
  const auto x = random_vector(k.rows());
  std::vector<double> y(k.rows());
  for (auto _ : state) {
    k.multiply(x, y, exec_of(state));
    benchmark::ClobberMemory();
  }
  state.counters["nnz"] = static_cast<double>(k.nnz());
}
BENCHMARK(BM_Spmv3D)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Assemble3D(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(thermal::assemble_3d(phantom_grid(), gel_table(), 0.0, exec_of(state)));
}
BENCHMARK(BM_Assemble3D)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ImplicitSolve3D(benchmark::State& state) {
  const thermal::ImplicitStepper3D stepper(phantom_system(), 10.0, 1e-7, exec_of(state));
  const auto rhs = random_vector(stepper.size());
  for (auto _ : state) benchmark::DoNotOptimize(stepper.solve(rhs));
}
BENCHMARK(BM_ImplicitSolve3D)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_InductanceAssembly(benchmark::State& state) {
  // 12 x 12 cells of the cranial mesh: about 800 branches
  const double pitch = 0.093 / 36;
  const auto segs = scenarios::tile_cranial_mesh(scenarios::truncated_square_cell(pitch), 12 * pitch);
  const auto net = geometry::build_network(segs, 0.3e-3, 1.82e6);
  em::InductanceOptions opt;
  opt.exec = exec_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(em::assemble_impedances(net, opt));
  state.counters["branches"] = static_cast<double>(net.branch_count());
}
BENCHMARK(BM_InductanceAssembly)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
