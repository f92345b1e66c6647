#include <benchmark/benchmark.h>

#include <random>

#include "horizon/laglad.hpp"

using namespace horizon;

static void BM_IntegralDot(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    auto grid = make_uniform_grid(1.0, n);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> gauss;
    LagladPath x(grid), y(grid);
    for (std::size_t u = 0; u < grid->size(); ++u) {
        x.set_flat(u, gauss(rng));
        y.set_flat(u, gauss(rng));
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(integral_dot(x, y, 0, n));
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_IntegralDot)->Arg(1 << 10)->Arg(1 << 14)->Arg(1 << 17);

static void BM_Decompose(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    auto grid = make_uniform_grid(1.0, n);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> gauss;
    LagladPath x(grid);
    double acc = 0.0;
    for (std::size_t u = 0; u < grid->size(); ++u) {
        acc += gauss(rng) * 0.01;
        x.set(u, acc, acc + (u % 17 == 0 ? 0.5 : 0.0), acc + (u % 29 == 0 ? 0.25 : 0.0));
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(decompose_laglad(x));
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Decompose)->Arg(1 << 12)->Arg(1 << 16);
