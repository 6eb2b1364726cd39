#include <benchmark/benchmark.h>

#include <cmath>
#include <string>
#include <vector>

#include "pvosc/modal.hpp"
#include "pvosc/scenario.hpp"
#include "pvosc/simengine.hpp"
#include "pvosc/system.hpp"

using namespace pvosc;

namespace {

const std::string kData = PVOSC_DATA_DIR;

std::vector<double> ringdown(std::size_t n) {
    std::vector<double> y(n);
    const double w1 = 2 * M_PI * 0.25, w2 = 2 * M_PI * 1.2;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = 0.05 * static_cast<double>(k);
        y[k] = std::exp(-0.2 * t) * std::cos(w1 * t) + 0.3 * std::exp(-0.378 * t) * std::cos(w2 * t + 0.7);
    }
    return y;
}

void BM_MatrixPencil(benchmark::State& st) {
    const auto y = ringdown(static_cast<std::size_t>(st.range(0)));
    modal::PencilConfig c;
    c.detrend = modal::Detrend::None;
    for (auto _ : st) benchmark::DoNotOptimize(modal::matrix_pencil(y, 0.05, c));
}
BENCHMARK(BM_MatrixPencil)->Arg(200)->Arg(400)->Arg(800)->Unit(benchmark::kMillisecond);

void BM_PowerFlow(benchmark::State& st) {
    const auto sys = load_case(kData + "/cases/two_area.json");
    for (auto _ : st) benchmark::DoNotOptimize(net::solve_power_flow(sys.net));
}
BENCHMARK(BM_PowerFlow)->Unit(benchmark::kMicrosecond);

void BM_SimulateTwoArea(benchmark::State& st) {
    const auto sys = load_case(kData + "/cases/two_area.json");
    sim::SimOptions o;
    o.t_end = static_cast<double>(st.range(0));
    const std::vector<sim::Event> ev{{1.0, sim::SelfClearingFault{7, 0.1, {0.0, -20.0}}}};
    for (auto _ : st) benchmark::DoNotOptimize(sim::simulate(sys, ev, o));
}
BENCHMARK(BM_SimulateTwoArea)->Arg(5)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_Linearize(benchmark::State& st) {
    const auto sys = load_case(kData + "/cases/two_area.json");
    for (auto _ : st) benchmark::DoNotOptimize(sim::oscillatory_modes(sim::linearize(sys)));
}
BENCHMARK(BM_Linearize)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
