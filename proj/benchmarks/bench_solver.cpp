#include <benchmark/benchmark.h>

#include <random>

#include "horizon/bsde_engine.hpp"

using namespace horizon;

static void BM_ContinuousSolver(benchmark::State& state) {
    const std::size_t paths = static_cast<std::size_t>(state.range(0));
    const std::size_t steps = 50;
    auto grid = make_uniform_grid(1.0, steps);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> gauss;
    MartingaleSpec mart;
    mart.components.emplace_back(grid, paths);
    for (std::size_t p = 0; p < paths; ++p) {
        double w = 0.0;
        for (std::size_t u = 1; u <= steps; ++u) {
            w += gauss(rng) * std::sqrt(grid->dt(u));
            mart.components[0].path(p).set_flat(u, w);
        }
    }
    DriverSpec driver;
    driver.d_r.push_back(PathEnsemble(grid, paths));
    for (std::size_t p = 0; p < paths; ++p)
        for (std::size_t u = 0; u <= steps; ++u)
            driver.d_r[0].path(p).set_flat(u, grid->time(u));
    GeneratorSpec gen;
    gen.f_r.push_back([](const StepContext&, double, double y, std::span<const double>, double) {
        return 0.2 * y;
    });
    gen.lip_fr = {0.2};
    std::vector<double> term(paths);
    for (std::size_t p = 0; p < paths; ++p)
        term[p] = mart.components[0].path(p).at(steps);
    auto terminal = TerminalSpec::common(steps, term);
    const auto& W = mart.components[0];
    auto ce = std::make_shared<RegressionCE>(paths, [&W](std::size_t p, std::size_t u) {
        return std::vector<double>{W.path(p).at(u)};
    });
    for (auto _ : state)
        benchmark::DoNotOptimize(solve_continuous_driver(gen, driver, mart, terminal, ce));
    state.SetItemsProcessed(state.iterations() * paths * steps);
}
BENCHMARK(BM_ContinuousSolver)->Arg(1 << 10)->Arg(1 << 13)->Unit(benchmark::kMillisecond);
