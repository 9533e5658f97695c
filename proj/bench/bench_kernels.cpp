// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against their OpenMP counterparts. Arguments are
// the square matrix size (gemm) or the number of query rows (nearest).
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "di2/kernels.hpp"

namespace {

std::vector<float> random_values(std::size_t n, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<float> dist;
    std::vector<float> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

template <auto Gemm>
void bm_gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
    std::vector<float> c(n * n);
    for (auto _ : state) {
        Gemm(n, n, n, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <auto Nearest>
void bm_nearest(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    constexpr std::size_t kCodes = 512, kDim = 32;
    const auto x = random_values(rows * kDim, 3), z = random_values(kCodes * kDim, 4);
    std::vector<std::size_t> index(rows);
    for (auto _ : state) {
        Nearest(rows, kCodes, kDim, x.data(), z.data(), index.data(), nullptr);
        benchmark::DoNotOptimize(index.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows));
}

namespace k = di2::kernels;

BENCHMARK(bm_gemm<k::serial::gemm_nn<float>>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::omp::gemm_nn<float>>)->Name("gemm_nn/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::serial::gemm_nt<float>>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::omp::gemm_nt<float>>)->Name("gemm_nt/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::serial::gemm_tn<float>>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::omp::gemm_tn<float>>)->Name("gemm_tn/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_nearest<k::serial::nearest<float>>)->Name("nearest/serial")->Arg(256)->Arg(4096);
BENCHMARK(bm_nearest<k::omp::nearest<float>>)->Name("nearest/omp")->Arg(256)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
