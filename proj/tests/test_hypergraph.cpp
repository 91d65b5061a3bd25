#include <doctest.h>

#include <random>
#include <set>

#include "gator/error.hpp"
#include "gator/hypergraph.hpp"
#include "resnet50_mapping.hpp"
#include "test_graphs.hpp"

using namespace gator;

namespace {

std::set<std::string> names(const std::vector<ChannelVertex>& vs) {
  std::set<std::string> out;
  for (const auto& v : vs) out.insert(v.layer);
  return out;
}

}  // namespace

TEST_CASE("sequential chain") {
  auto g = testing::chain({3, 8, 16, 4});
  auto h = build_hypergraph(g);
  REQUIRE(h.size() == 4);
  CHECK(h.edge(0).frozen);
  CHECK(h.edge(3).frozen);
  CHECK_FALSE(h.edge(1).frozen);
  CHECK(names(h.edge(1).out_vertices) == std::set<std::string>{"conv1"});
  CHECK(names(h.edge(1).in_vertices) == std::set<std::string>{"conv2"});
  CHECK(names(h.edge(0).out_vertices) == std::set<std::string>{"input"});
  CHECK(prunable_edges(h) == std::vector<std::size_t>{1, 2});
  for (const auto& e : h.edges()) CHECK(e.trivial());
}

TEST_CASE("single conv has nothing to prune") {
  auto h = build_hypergraph(testing::chain({3, 5}));
  CHECK(h.size() == 2);
  CHECK(prunable_edges(h).empty());
  CHECK(h.edge(h.edge_of("input", Side::kOut)).frozen);
}

TEST_CASE("resnet50 matches the published mapping") {
  auto g = builtin_graph("resnet50");
  auto h = build_hypergraph(g);
  const auto prunable = prunable_edges(h);
  CHECK(prunable.size() == 37);
  CHECK(h.size() == 39);  // plus the frozen image-input and classifier-output edges
  std::size_t trivial = 0;
  std::vector<std::pair<std::set<std::string>, std::set<std::string>>> multi;
  for (std::size_t j : prunable) {
    const auto& e = h.edge(j);
    if (e.trivial()) {
      ++trivial;
    } else {
      multi.emplace_back(names(e.out_vertices), names(e.in_vertices));
    }
  }
  CHECK(trivial == 32);
  CHECK(multi == testing::resnet50_multi_edges());

  const std::size_t e = h.edge_of("l1b1c1", Side::kOut);
  CHECK(e == h.edge_of("l1b1c2", Side::kIn));
  CHECK(h.edge(e).trivial());
  const auto& stem = h.edge(h.edge_of("c0", Side::kOut));
  CHECK(names(stem.in_vertices) == std::set<std::string>{"l1b1d", "l1b1c1"});
  CHECK_THROWS_AS(h.edge_of("nope", Side::kIn), InvalidInput);
}

TEST_CASE("partition and determinism") {
  for (const auto& name : builtin_names()) {
    auto g = builtin_graph(name);
    auto h = build_hypergraph(g);
    std::size_t weighted = g.weighted_layers().size();
    CHECK(h.vertex_count() == 2 * weighted + 2);
    std::set<std::pair<std::string, int>> seen;
    for (const auto& e : h.edges()) {
      for (const auto* list : {&e.out_vertices, &e.in_vertices})
        for (const auto& v : *list) {
          CHECK(seen.insert({v.layer, static_cast<int>(v.side)}).second);
          CHECK(v.channel_count == e.channel_count);
          CHECK(h.edge_of(v) == e.id);
        }
    }
    CHECK(build_hypergraph(g) == h);
  }
}

TEST_CASE("can_empty marks residual branches only") {
  auto h = build_hypergraph(builtin_graph("toy-resnet"));
  CHECK(h.edge(h.edge_of("l1b1c1", Side::kOut)).can_empty);
  CHECK(h.edge(h.edge_of("l2b2c1", Side::kOut)).can_empty);
  CHECK_FALSE(h.edge(h.edge_of("c0", Side::kOut)).can_empty);
  CHECK_FALSE(h.edge(h.edge_of("l2b1d", Side::kOut)).can_empty);
  auto chain = build_hypergraph(testing::chain({3, 8, 8, 4}));
  CHECK_FALSE(chain.edge(1).can_empty);
}

TEST_CASE("removing a channel needs every member of the edge") {
  std::mt19937_64 rng(4);
  for (const auto& g : {builtin_graph("toy-resnet"), testing::chain({3, 6, 5, 4})}) {
    auto h = build_hypergraph(g);
    for (std::size_t j : prunable_edges(h)) {
      const auto& e = h.edge(j);
      std::vector<ChannelVertex> all = e.out_vertices;
      all.insert(all.end(), e.in_vertices.begin(), e.in_vertices.end());
      CHECK_NOTHROW(testing::drop_channel(g, all));
      // every strict subset obtained by leaving one member out
      for (std::size_t skip = 0; skip < all.size(); ++skip) {
        auto subset = all;
        subset.erase(subset.begin() + static_cast<long>(skip));
        CHECK_THROWS_AS(testing::drop_channel(g, subset), InvalidInput);
      }
      // and a random smaller subset
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(1 + rng() % (all.size() - 1));
      CHECK_THROWS_AS(testing::drop_channel(g, all), InvalidInput);
    }
  }
}
