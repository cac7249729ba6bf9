#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pdenet/training.hpp"

using namespace pdenet;

namespace {

std::vector<Pair> make_batch(const Grid2D& g, int count)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::vector<Pair> batch;
    for (int k = 0; k < count; ++k) {
        Field a(g);
        Field b(g);
        for (double& v : a.values()) v = nd(rng);
        for (double& v : b.values()) v = nd(rng);
        batch.push_back({a, b});
    }
    return batch;
}

// 28 pairs through the default linear block; range(0) = depth
void BM_loss_grad_linear(benchmark::State& state)
{
    const BlockConfig cfg = BlockConfig::linear_default();
    DeltaTBlock block(cfg);
    std::mt19937_64 rng(1);
    block.randomize(rng, 0.01, 0.0);
    const auto batch = make_batch(cfg.grid, 28);
    std::vector<double> grad(static_cast<std::size_t>(block.param_count()));
    const int depth = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(batch_loss_grad(block, batch, depth, grad));
    }
    state.SetItemsProcessed(state.iterations() * 28 * depth);
}
BENCHMARK(BM_loss_grad_linear)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_block_forward(benchmark::State& state)
{
    const BlockConfig cfg = BlockConfig::linear_default();
    DeltaTBlock block(cfg);
    const auto batch = make_batch(cfg.grid, 1);
    Field out(cfg.grid);
    for (auto _ : state) {
        block.forward(batch[0].input.values(), out.values(), nullptr);
        benchmark::DoNotOptimize(out.values().data());
    }
}
BENCHMARK(BM_block_forward)->Unit(benchmark::kMicrosecond);

} // namespace

BENCHMARK_MAIN();
