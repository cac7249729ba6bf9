#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pdenet/kernels.hpp"

using namespace pdenet;

namespace {

struct Inputs {
    kernels::Shape shape;
    Filter q;
    std::vector<double> u;
    std::vector<double> g;
    std::vector<double> out;
    std::vector<double> dq;
};

Inputs make_inputs(int grid, int n, Boundary b)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    Inputs in{{grid, grid, b}, Filter(n), {}, {}, {}, {}};
    for (double& v : in.q.weights()) v = nd(rng);
    in.u.resize(static_cast<std::size_t>(grid) * grid);
    in.g.resize(in.u.size());
    in.out.resize(in.u.size());
    in.dq.resize(in.q.weights().size());
    for (double& v : in.u) v = nd(rng);
    for (double& v : in.g) v = nd(rng);
    return in;
}

void BM_Convolve(benchmark::State& st)
{
    auto in = make_inputs(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), Boundary::Periodic);
    for (auto _ : st) {
        kernels::convolve(in.u, in.shape, in.q, in.out);
        benchmark::DoNotOptimize(in.out.data());
    }
}

void BM_ConvolveReference(benchmark::State& st)
{
    auto in = make_inputs(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), Boundary::Periodic);
    for (auto _ : st) {
        kernels::convolve_reference(in.u, in.shape, in.q, in.out);
        benchmark::DoNotOptimize(in.out.data());
    }
}

void BM_Adjoint(benchmark::State& st)
{
    auto in = make_inputs(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), Boundary::Dirichlet);
    for (auto _ : st) {
        kernels::convolve_adjoint(in.g, in.shape, in.q, in.out);
        benchmark::DoNotOptimize(in.out.data());
    }
}

void BM_AdjointReference(benchmark::State& st)
{
    auto in = make_inputs(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), Boundary::Dirichlet);
    for (auto _ : st) {
        kernels::convolve_adjoint_reference(in.g, in.shape, in.q, in.out);
        benchmark::DoNotOptimize(in.out.data());
    }
}

void BM_FilterGradient(benchmark::State& st)
{
    auto in = make_inputs(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), Boundary::Periodic);
    for (auto _ : st) {
        kernels::filter_gradient(in.g, in.u, in.shape, in.q, 1.0, in.dq);
        benchmark::DoNotOptimize(in.dq.data());
    }
}

void BM_FilterGradientReference(benchmark::State& st)
{
    auto in = make_inputs(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), Boundary::Periodic);
    for (auto _ : st) {
        kernels::filter_gradient_reference(in.g, in.u, in.shape, in.q, 1.0, in.dq);
        benchmark::DoNotOptimize(in.dq.data());
    }
}

} // namespace

#define PDENET_SIZES ->Args({50, 5})->Args({50, 7})->Args({100, 7})

BENCHMARK(BM_Convolve) PDENET_SIZES;
BENCHMARK(BM_ConvolveReference) PDENET_SIZES;
BENCHMARK(BM_Adjoint) PDENET_SIZES;
BENCHMARK(BM_AdjointReference) PDENET_SIZES;
BENCHMARK(BM_FilterGradient) PDENET_SIZES;
BENCHMARK(BM_FilterGradientReference) PDENET_SIZES;

BENCHMARK_MAIN();
