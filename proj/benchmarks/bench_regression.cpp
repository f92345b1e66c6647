#include <benchmark/benchmark.h>

#include <random>

#include "horizon/conditional_expectation.hpp"

using namespace horizon;

static void BM_RegressionCE(benchmark::State& state) {
    const std::size_t paths = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss;
    std::vector<double> sx(paths), sy(paths), v(paths);
    for (std::size_t p = 0; p < paths; ++p) {
        sx[p] = gauss(rng);
        sy[p] = gauss(rng);
        v[p] = sx[p] * sx[p] + 0.3 * sy[p] + gauss(rng);
    }
    RegressionCE ce(paths, [&](std::size_t p, std::size_t) {
        return std::vector<double>{sx[p], sy[p]};
    });
    for (auto _ : state)
        benchmark::DoNotOptimize(ce.condexp(0, v));
    state.SetItemsProcessed(state.iterations() * paths);
}
BENCHMARK(BM_RegressionCE)->Arg(1 << 12)->Arg(1 << 15)->Arg(1 << 17);
