// Serial reference vs OpenMP convolution kernels on generator-sized layers.

#include "dfb/kernels.hpp"
#include "dfb/rng.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using dfb::kernels::ConvGeometry;

ConvGeometry geometry(const benchmark::State& state)
{
    const auto c = static_cast<std::size_t>(state.range(0));
    return ConvGeometry{16, c, c, 32, 32, 4, 2, 1};
}

std::vector<double> filled(std::size_t n, std::uint64_t seed)
{
    dfb::Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <auto Kernel>
void forward(benchmark::State& state)
{
    const ConvGeometry g = geometry(state);
    const auto in = filled(g.input_size(), 1), w = filled(g.weight_size(), 2);
    std::vector<double> out(g.output_size());
    for (auto _ : state) {
        Kernel(g, in, w, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.output_size()));
}

template <auto Kernel>
void backward_input(benchmark::State& state)
{
    const ConvGeometry g = geometry(state);
    const auto dout = filled(g.output_size(), 3), w = filled(g.weight_size(), 4);
    std::vector<double> din(g.input_size());
    for (auto _ : state) {
        Kernel(g, dout, w, din);
        benchmark::DoNotOptimize(din.data());
    }
}

template <auto Kernel>
void backward_weight(benchmark::State& state)
{
    const ConvGeometry g = geometry(state);
    const auto in = filled(g.input_size(), 5), dout = filled(g.output_size(), 6);
    std::vector<double> dw(g.weight_size());
    for (auto _ : state) {
        Kernel(g, in, dout, dw);
        benchmark::DoNotOptimize(dw.data());
    }
}

namespace serial = dfb::kernels::serial;
namespace parallel = dfb::kernels::parallel;

BENCHMARK(forward<serial::conv2d_forward>)->Name("forward/serial")->Arg(8)->Arg(16);
BENCHMARK(forward<parallel::conv2d_forward>)->Name("forward/parallel")->Arg(8)->Arg(16);
BENCHMARK(backward_input<serial::conv2d_backward_input>)->Name("backward_input/serial")->Arg(8)->Arg(16);
BENCHMARK(backward_input<parallel::conv2d_backward_input>)->Name("backward_input/parallel")->Arg(8)->Arg(16);
BENCHMARK(backward_weight<serial::conv2d_backward_weight>)->Name("backward_weight/serial")->Arg(8)->Arg(16);
BENCHMARK(backward_weight<parallel::conv2d_backward_weight>)->Name("backward_weight/parallel")->Arg(8)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
