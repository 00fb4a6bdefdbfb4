// Serial reference vs OpenMP kernels on training-sized shapes.
// Run with DEEPCODER_THREADS=<n> to pick the worker count.

#include <benchmark/benchmark.h>

#include "deepcoder/kernels.hpp"
#include "deepcoder/rng.hpp"

namespace {

using namespace deepcoder;

Tensor filled(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (double& v : t.raw()) v = rng.normal();
    return t;
}

// Batch of 32 images through the first desk stage: 1 -> 16 filters, 3x3, 32x32.
struct ConvCase {
    Tensor x = filled({32, 1, 32, 32}, 1), w = filled({16, 1, 3, 3}, 2), b = filled({16}, 3);
    kernels::ConvGeometry g = kernels::ConvGeometry::make(x.shape(), w.shape(), 1, 1);
    Tensor gout = filled({32, 16, 32, 32}, 4);
};

template <bool Serial>
void BM_ConvForward(benchmark::State& state) {
    ConvCase c;
    for (auto _ : state) {
        Tensor y = Serial ? kernels::serial::conv2d_forward(c.x, c.w, c.b, c.g) : kernels::conv2d_forward(c.x, c.w, c.b, c.g);
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Serial>
void BM_ConvGradWeights(benchmark::State& state) {
    ConvCase c;
    Tensor gb({16});
    for (auto _ : state) {
        Tensor gw = Serial ? kernels::serial::conv2d_grad_weights(c.gout, c.x, c.g, gb)
                           : kernels::conv2d_grad_weights(c.gout, c.x, c.g, gb);
        benchmark::DoNotOptimize(gw.data());
    }
}

template <bool Serial>
void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = filled({n, n}, 5), b = filled({n, n}, 6);
    for (auto _ : state) {
        Tensor c = Serial ? kernels::serial::matmul(a, b) : kernels::matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
}

// N_L x N_L kernel matrix over 32-dimensional inputs.
template <bool Serial>
void BM_Rbf(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = filled({n, 32}, 7);
    const std::vector<double> inv(32, 1.0 / 32.0);
    for (auto _ : state) {
        Tensor k = Serial ? kernels::serial::rbf_matrix(a, a, 1.0, inv) : kernels::rbf_matrix(a, a, 1.0, inv);
        benchmark::DoNotOptimize(k.data());
    }
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvGradWeights<true>)->Name("conv_grad_weights/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvGradWeights<false>)->Name("conv_grad_weights/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul<true>)->Name("matmul/serial")->Arg(128)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul<false>)->Name("matmul/omp")->Arg(128)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Rbf<true>)->Name("rbf/serial")->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Rbf<false>)->Name("rbf/omp")->Arg(400)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
