#include "gator/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "gator/error.hpp"
#include "gator/executor.hpp"
#include "gator/pruner.hpp"

namespace gator {

void ProfileConfig::validate() const {
  if (warmup < 2) throw InvalidInput("profile: warmup must be at least 2");
  if (repeats < 5) throw InvalidInput("profile: repeats must be at least 5");
  if (batch < 1) throw InvalidInput("profile: batch must be at least 1");
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidInput("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double time_forward(const NetworkGraph& g, const WeightStore& weights, const Tensor& batch,
                    std::size_t warmup, std::size_t repeats) {
  Executor exec(g);
  for (std::size_t i = 0; i < warmup; ++i) exec.forward(weights, batch);
  std::vector<double> times;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    exec.forward(weights, batch);
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(stop - start).count());
  }
  const double t = median(std::move(times));
  if (!(t > 0.0)) throw RuntimeFailure("profile: timer returned a non-positive duration");
  return t;
}

LatencyTable profile_latency(const NetworkGraph& graph, const ProfileConfig& config) {
  config.validate();
  const NetworkGraph g = (config.height && config.width)
                             ? with_input_size(graph, config.height, config.width)
                             : graph;
  const DependencyHypergraph h = build_hypergraph(g);
  const WeightStore weights = init_weights(g, config.seed);

  const LayerInfo& in = g.info(g.input_index());
  Tensor batch({config.batch, in.out_channels, in.out_h, in.out_w});
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : batch.data) v = normal(rng);

  LatencyTable table;
  table.network = g.name();
  table.t_orig = time_forward(g, weights, batch, config.warmup, config.repeats);
  for (std::size_t e : h.prunable_edges()) {
    PruningPlan plan = identity_plan(h);
    const std::size_t c = h.edge(e).channel_count;
    plan.survivors[e].resize((c + 1) / 2);
    const PrunedNetwork variant = apply_pruning(g, weights, h, plan);
    const double t = time_forward(variant.graph, variant.weights, batch, config.warmup,
                                  config.repeats);
    table.entries[e] = LatencyEntry{c, t};
  }
  return table;
}

}  // namespace gator
