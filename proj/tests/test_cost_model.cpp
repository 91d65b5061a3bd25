#include <doctest.h>

#include <random>

#include "gator/cost_model.hpp"
#include "gator/error.hpp"
#include "gator/pruner.hpp"
#include "oracle.hpp"
#include "pruning_helpers.hpp"
#include "test_graphs.hpp"

using namespace gator;

TEST_CASE("memory cost of a conv pair") {
  auto g = testing::chain({3, 10, 32});
  auto h = build_hypergraph(g);
  auto counts = full_counts(h);
  const std::size_t mid = h.edge_of("conv1", Side::kOut);
  CHECK(memory_cost(g, h, counts, mid) == 315.0);
  counts[h.edge_of("conv2", Side::kOut)] = 16;
  CHECK(memory_cost(g, h, counts, mid) == 171.0);
  CHECK_THROWS_AS(memory_cost(g, h, counts, 99), InvalidInput);
}

TEST_CASE("1x1 consumer with one output channel") {
  std::vector<LayerSpec> layers = testing::chain({3, 4, 1}).layers();
  for (auto& l : layers) {
    if (l.id == "conv2") l.kernel_h = l.kernel_w = 1, l.padding = 0;
  }
  // make conv1's output edge consist of conv2.in only (conv1 is frozen-side)
  auto g = NetworkGraph::build("pt", layers);
  auto h = build_hypergraph(g);
  auto counts = full_counts(h);
  // contribution of conv2.in alone: k=1, c_out(t)=1
  const std::size_t j = h.edge_of("conv2", Side::kIn);
  CHECK(memory_cost(g, h, counts, j) - 9.0 * 3.0 == 1.0);
}

TEST_CASE("flops cost scales by the downsample factor") {
  auto base = testing::chain({3, 10, 32}, 8);
  std::vector<LayerSpec> layers = base.layers();
  layers[base.index_of("conv2")].stride = 2;
  auto g = NetworkGraph::build("strided", layers);
  auto h = build_hypergraph(g);
  const std::size_t mid = h.edge_of("conv1", Side::kOut);
  CHECK(flops_cost(g, h, full_counts(h), mid) == 99.0);

  auto hb = build_hypergraph(base);
  CHECK(flops_cost(base, hb, full_counts(hb), mid) == memory_cost(base, hb, full_counts(hb), mid));
}

TEST_CASE("toy-resnet deep edges are cheaper per channel under flops") {
  auto g = builtin_graph("toy-resnet");
  auto h = build_hypergraph(g);
  auto counts = full_counts(h);
  const auto prunable = h.prunable_edges();
  const std::size_t first = prunable.front();
  const std::size_t deepest = h.edge_of("l3b2c1", Side::kOut);
  CHECK(memory_cost(g, h, counts, deepest) > memory_cost(g, h, counts, first));
  CHECK(flops_cost(g, h, counts, deepest) < flops_cost(g, h, counts, first));
}

TEST_CASE("removing one channel changes the counters by lambda") {
  for (const auto& g : {builtin_graph("toy-resnet"), testing::chain({3, 7, 5, 4})}) {
    auto h = build_hypergraph(g);
    const double pixels = static_cast<double>(g.layer(g.input_index()).height *
                                              g.layer(g.input_index()).width);
    for (std::size_t j : h.prunable_edges()) {
      const auto& e = h.edge(j);
      std::vector<ChannelVertex> all = e.out_vertices;
      all.insert(all.end(), e.in_vertices.begin(), e.in_vertices.end());
      auto smaller = testing::drop_channel(g, all);
      const auto counts = full_counts(h);
      CHECK(static_cast<double>(count_params(g) - count_params(smaller)) ==
            memory_cost(g, h, counts, j));
      const double macs = static_cast<double>(count_flops(g) - count_flops(smaller));
      CHECK(macs == doctest::Approx(flops_cost(g, h, counts, j) * pixels).epsilon(1e-12));
    }
  }
}

TEST_CASE("latency table arithmetic") {
  LatencyTable t;
  t.t_orig = 0.100;
  t.entries[1] = {64, 0.090};
  t.entries[2] = {64, 0.101};
  CHECK(latency_cost(t, 1) == doctest::Approx(0.0003125).epsilon(1e-12));
  CHECK(latency_cost(t, 2) == 0.0);
  CHECK_THROWS_AS(latency_cost(t, 3), InvalidInput);

  t.network = "toy";
  auto again = parse_latency_table(serialize_latency_table(t));
  CHECK(again == t);
  CHECK_THROWS_AS(parse_latency_table("t_orig 1\nedge 1 4 -2\n"), InvalidInput);
  CHECK_THROWS_AS(parse_latency_table("edge 1 4 2\n"), InvalidInput);
}

TEST_CASE("computational loss is normalized at t=0") {
  for (const auto& name : builtin_names()) {
    auto g = builtin_graph(name);
    auto h = build_hypergraph(g);
    for (auto kind : {ObjectiveKind::kMemory, ObjectiveKind::kFlops}) {
      CostModel model(g, h, {kind, std::nullopt});
      auto f = model.initial_factors();
      std::vector<double> open, closed(f.edges.size(), 0.0);
      for (std::size_t j : f.edges) open.push_back(static_cast<double>(h.edge(j).channel_count));
      CHECK(std::abs(computational_loss(open, f) - 1.0) <= 1e-9);
      CHECK(computational_loss(closed, f) == 0.0);
    }
  }
  auto g = builtin_graph("toy-resnet");
  auto h = build_hypergraph(g);
  LatencyTable table;
  table.t_orig = 1.0;
  for (std::size_t j : h.prunable_edges()) table.entries[j] = {h.edge(j).channel_count, 0.9};
  CostModel model(g, h, {ObjectiveKind::kLatency, table});
  auto f = model.initial_factors();
  std::vector<double> open;
  for (std::size_t j : f.edges) open.push_back(static_cast<double>(h.edge(j).channel_count));
  CHECK(std::abs(computational_loss(open, f) - 1.0) <= 1e-9);

  table.entries.erase(h.prunable_edges().front());
  CHECK_THROWS_AS(CostModel(g, h, {ObjectiveKind::kLatency, table}), InvalidInput);
  CHECK_THROWS_AS(computational_loss(std::vector<double>{1.0}, f), InvalidInput);
}

TEST_CASE("memory loss with half of one edge closed") {
  auto g = builtin_graph("toy-resnet");
  auto h = build_hypergraph(g);
  CostModel model(g, h, {ObjectiveKind::kMemory, std::nullopt});
  auto f = model.initial_factors();
  // Hand tally of the toy net: each edge's lambda is the sum over member
  // convs of k*k*width of the opposite side.
  const std::size_t stem = h.edge_of("c0", Side::kOut);
  // c0.out (9*3) + l1b1c1.in (9*8) + l1b1c2.out (9*8) + l1b2c1.in (9*8)
  // + l1b2c2.out (9*8) + l2b1c1.in (9*16) + l2b1d.in (1*16)
  const double lambda_stem = 27 + 72 + 72 + 72 + 72 + 144 + 16;
  const std::size_t k_stem = std::find(f.edges.begin(), f.edges.end(), stem) - f.edges.begin();
  CHECK(f.raw[k_stem] == lambda_stem);
  // denominator: weights of all convs counted once per side = 2 * conv weights
  // minus the frozen input side of c0 and the frozen fc output side
  const double conv_weights = static_cast<double>(count_params(g) - 32 * 10);
  const double d = 2 * conv_weights - 27 * 8 + 32 * 10;
  CHECK(f.denominator == d);
  std::vector<double> sums;
  double expected = 0.0;
  for (std::size_t k = 0; k < f.edges.size(); ++k) {
    double c = static_cast<double>(h.edge(f.edges[k]).channel_count);
    if (f.edges[k] == stem) c /= 2;
    sums.push_back(c);
    expected += c * f.raw[k];
  }
  CHECK(computational_loss(sums, f) == doctest::Approx(expected / d).epsilon(1e-14));
  CHECK(computational_loss(sums, f) == doctest::Approx(1.0 - 4 * lambda_stem / d).epsilon(1e-14));
}

TEST_CASE("closing gates never increases the loss") {
  auto g = builtin_graph("toy-resnet");
  auto h = build_hypergraph(g);
  CostModel model(g, h, {ObjectiveKind::kFlops, std::nullopt});
  auto f = model.initial_factors();
  std::mt19937_64 rng(1);
  std::vector<double> sums;
  for (std::size_t j : f.edges) sums.push_back(static_cast<double>(h.edge(j).channel_count));
  double prev = computational_loss(sums, f);
  for (int i = 0; i < 100; ++i) {
    std::size_t k = rng() % sums.size();
    if (sums[k] == 0) continue;
    sums[k] -= 1;
    const double now = computational_loss(sums, f);
    CHECK(now <= prev);
    prev = now;
  }
}

TEST_CASE("lambda predicts the counter change at random channel counts") {
  const auto g = builtin_graph("toy-resnet");
  const auto h = build_hypergraph(g);
  const auto w = init_weights(g, 1);
  const double pixels = 16.0 * 16.0;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto plan = testing::random_plan(h, rng);
    std::vector<std::size_t> shrinkable;
    for (std::size_t j : h.prunable_edges()) {
      if (plan.survivors[j].size() > h.edge(j).min_survivors()) shrinkable.push_back(j);
    }
    REQUIRE_FALSE(shrinkable.empty());
    const std::size_t j = shrinkable[rng() % shrinkable.size()];
    ChannelCounts counts(h.size());
    for (std::size_t e = 0; e < h.size(); ++e) counts[e] = plan.survivors[e].size();
    const auto before = oracle::count(apply_pruning(g, w, h, plan).graph);
    plan.survivors[j].pop_back();
    const auto after = oracle::count(apply_pruning(g, w, h, plan).graph);
    CHECK(static_cast<double>(before.params - after.params) == memory_cost(g, h, counts, j));
    CHECK(static_cast<double>(before.macs - after.macs) ==
          doctest::Approx(flops_cost(g, h, counts, j) * pixels).epsilon(1e-12));
  }
}
