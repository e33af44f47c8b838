// Serial reference kernels against their OpenMP counterparts.
// Shapes follow training: a batch of 1000 rows times a layer's fan-in/out.

#include <benchmark/benchmark.h>

#include <vector>

#include "densereg/kernels.hpp"
#include "densereg/tensor.hpp"

namespace k = densereg::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  densereg::Rng rng(seed);
  return densereg::uniform(rng, n, -1.0, 1.0);
}

// Forward dense layer: activations [batch x fan_in] times weights [fan_in x fan_out].
template <auto Kernel>
void gemm_nn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_values(m * kk, 1), b = random_values(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

// Weight gradient: activations^T times upstream gradient.
template <auto Kernel>
void gemm_tn(benchmark::State& state) {
  const auto r = static_cast<std::size_t>(state.range(0));
  const auto m = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_values(r * m, 3), b = random_values(r * n, 4);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, r, m, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * r * m * n));
}

template <auto Kernel>
void column_sums(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const auto a = random_values(rows * cols, 5);
  std::vector<double> out(cols);
  for (auto _ : state) {
    Kernel(a, out, rows, cols);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * cols));
}

template <auto Kernel>
void column_mean_var(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const auto a = random_values(rows * cols, 6);
  std::vector<double> mean(cols), var(cols);
  for (auto _ : state) {
    Kernel(a, mean, var, rows, cols);
    benchmark::DoNotOptimize(var.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * cols));
}

template <auto Kernel>
void adam_update(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto theta = random_values(n, 7);
  const auto grad = random_values(n, 8);
  std::vector<double> m(n), v(n);
  const k::AdamCoefficients coeff{1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001};
  for (auto _ : state) {
    Kernel(theta, grad, m, v, coeff);
    benchmark::DoNotOptimize(theta.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({1000, 7, 7})->Args({1000, 56, 56})->Args({1000, 448, 448});
}

void column_shapes(benchmark::internal::Benchmark* b) { b->Args({1000, 28})->Args({1000, 448})->Args({20000, 112}); }

}  // namespace

BENCHMARK(gemm_nn<k::serial::gemm_nn>)->Apply(gemm_shapes)->Name("gemm_nn/serial");
BENCHMARK(gemm_nn<k::omp::gemm_nn>)->Apply(gemm_shapes)->Name("gemm_nn/omp")->UseRealTime();
BENCHMARK(gemm_tn<k::serial::gemm_tn>)->Apply(gemm_shapes)->Name("gemm_tn/serial");
BENCHMARK(gemm_tn<k::omp::gemm_tn>)->Apply(gemm_shapes)->Name("gemm_tn/omp")->UseRealTime();
BENCHMARK(column_sums<k::serial::column_sums>)->Apply(column_shapes)->Name("column_sums/serial");
BENCHMARK(column_sums<k::omp::column_sums>)->Apply(column_shapes)->Name("column_sums/omp")->UseRealTime();
BENCHMARK(column_mean_var<k::serial::column_mean_var>)->Apply(column_shapes)->Name("column_mean_var/serial");
BENCHMARK(column_mean_var<k::omp::column_mean_var>)->Apply(column_shapes)->Name("column_mean_var/omp")->UseRealTime();
BENCHMARK(adam_update<k::serial::adam_update>)->Arg(14'715)->Arg(3'247'035)->Name("adam_update/serial");
BENCHMARK(adam_update<k::omp::adam_update>)->Arg(14'715)->Arg(3'247'035)->Name("adam_update/omp")->UseRealTime();

BENCHMARK_MAIN();
