#include <random>

#include <benchmark/benchmark.h>

#include "gator/cost_model.hpp"
#include "gator/executor.hpp"
#include "gator/gating.hpp"
#include "gator/hypergraph.hpp"
#include "gator/network_ir.hpp"

namespace {

using namespace gator;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  for (double& v : t.data) v = n(rng);
  return t;
}

// args: channels, spatial size
void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const Tensor x = random_tensor({8, c, hw, hw}, 1);
  const Tensor w = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d(x, w, nullptr, 1, 1));
  state.SetItemsProcessed(state.iterations() * 8 * c * c * 9 * hw * hw);
}
BENCHMARK(BM_Conv3x3)->Args({16, 16})->Args({32, 8})->Args({64, 8});

void BM_ToyForward(benchmark::State& state) {
  const NetworkGraph g = builtin_graph("toy-resnet");
  const WeightStore w = init_weights(g, 1);
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 3, 16, 16}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(forward(g, w, x));
}
BENCHMARK(BM_ToyForward)->Arg(1)->Arg(32);

void BM_BuildHypergraph(benchmark::State& state) {
  const NetworkGraph g = builtin_graph("resnet50");
  for (auto _ : state) benchmark::DoNotOptimize(build_hypergraph(g));
}
BENCHMARK(BM_BuildHypergraph);

void BM_CostFactors(benchmark::State& state) {
  const NetworkGraph g = builtin_graph("resnet50");
  const DependencyHypergraph h = build_hypergraph(g);
  const auto kind = state.range(0) == 0 ? ObjectiveKind::kMemory : ObjectiveKind::kFlops;
  const CostModel cost(g, h, {kind, std::nullopt});
  const ChannelCounts counts = full_counts(h);
  for (auto _ : state) benchmark::DoNotOptimize(cost.factors(counts));
}
BENCHMARK(BM_CostFactors)->Arg(0)->Arg(1);

void BM_SampleGates(benchmark::State& state) {
  const NetworkGraph g = builtin_graph("resnet50");
  const DependencyHypergraph h = build_hypergraph(g);
  const GateState gates = init_gates(h, 0.005);
  std::mt19937_64 rng(4);
  const auto batch = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_gates(gates, rng, batch, Granularity::kPerSample));
  }
}
BENCHMARK(BM_SampleGates)->Arg(1)->Arg(64);

}  // namespace
BENCHMARK_MAIN();
