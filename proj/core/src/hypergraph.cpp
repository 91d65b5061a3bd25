#include "gator/hypergraph.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <queue>

#include "gator/error.hpp"

namespace gator {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    std::size_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      std::size_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  void join(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

bool has_vertices(LayerKind kind) {
  return kind == LayerKind::kConv || kind == LayerKind::kFullyConnected;
}

// Is `output` still reachable from `input` when `removed` layers are cut?
bool connected_without(const NetworkGraph& graph,
                       const std::vector<bool>& removed) {
  std::vector<bool> seen(graph.size(), false);
  std::queue<std::size_t> todo;
  todo.push(graph.input_index());
  seen[graph.input_index()] = true;
  while (!todo.empty()) {
    std::size_t i = todo.front();
    todo.pop();
    if (i == graph.output_index()) return true;
    for (std::size_t c : graph.info(i).consumers) {
      if (!seen[c] && !removed[c]) {
        seen[c] = true;
        todo.push(c);
      }
    }
  }
  return false;
}

}  // namespace

std::string to_string(Side side) { return side == Side::kIn ? "in" : "out"; }

DependencyHypergraph build_hypergraph(const NetworkGraph& graph) {
  const std::size_t n = graph.size();
  // Node i: output channel set of layer i. Node n + i: input channel set of a
  // conv / fc / output layer i.
  DisjointSet sets(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& spec = graph.layer(i);
    const LayerInfo& info = graph.info(i);
    switch (spec.kind) {
      case LayerKind::kInput:
        break;
      case LayerKind::kConv:
      case LayerKind::kFullyConnected:
        // the layer breaks propagation: in and out stay separate
        sets.join(n + i, info.inputs[0]);
        break;
      case LayerKind::kOutput:
        sets.join(n + i, info.inputs[0]);
        sets.join(i, info.inputs[0]);
        break;
      default:
        for (std::size_t p : info.inputs) sets.join(i, p);
        break;
    }
  }

  std::map<std::size_t, std::vector<ChannelVertex>> groups;
  auto add_vertex = [&](std::size_t node, std::size_t layer, Side side,
                        std::size_t channels) {
    groups[sets.find(node)].push_back(
        ChannelVertex{graph.layer(layer).id, side, channels, layer});
  };
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& spec = graph.layer(i);
    const LayerInfo& info = graph.info(i);
    if (spec.kind == LayerKind::kInput) {
      add_vertex(i, i, Side::kOut, info.out_channels);
    } else if (spec.kind == LayerKind::kOutput) {
      add_vertex(n + i, i, Side::kIn, info.in_channels);
    } else if (has_vertices(spec.kind)) {
      if (sets.find(i) == sets.find(n + i)) {
        throw InvalidInput("layer '" + spec.id +
                           "': input and output channels fall into one "
                           "dependency edge");
      }
      add_vertex(n + i, i, Side::kIn, spec.in_channels);
      add_vertex(i, i, Side::kOut, spec.out_channels);
    }
  }

  // Canonical order: smallest member layer index, then out-side first.
  std::vector<std::pair<std::size_t, std::vector<ChannelVertex>*>> order;
  for (auto& [root, members] : groups) {
    std::sort(members.begin(), members.end(),
              [](const ChannelVertex& a, const ChannelVertex& b) {
                if (a.layer_index != b.layer_index) return a.layer_index < b.layer_index;
                return a.side == Side::kOut && b.side == Side::kIn;
              });
    const ChannelVertex& first = members.front();
    std::size_t key = 2 * first.layer_index + (first.side == Side::kIn ? 1 : 0);
    order.emplace_back(key, &members);
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  DependencyHypergraph h;
  std::map<std::size_t, std::size_t> root_to_edge;
  for (auto& [key, members] : order) {
    DependencyEdge edge;
    edge.id = h.edges_.size();
    edge.channel_count = members->front().channel_count;
    for (const ChannelVertex& v : *members) {
      if (v.channel_count != edge.channel_count) {
        throw InvalidInput("layer '" + v.layer + "': " + to_string(v.side) +
                           " channels (" + std::to_string(v.channel_count) +
                           ") conflict with dependency edge of " +
                           std::to_string(edge.channel_count) + " channels");
      }
      const LayerKind kind = graph.layer(v.layer_index).kind;
      if (kind == LayerKind::kInput || kind == LayerKind::kOutput) edge.frozen = true;
      (v.side == Side::kOut ? edge.out_vertices : edge.in_vertices).push_back(v);
    }
    std::size_t root = members->front().side == Side::kIn
                           ? sets.find(n + members->front().layer_index)
                           : sets.find(members->front().layer_index);
    root_to_edge[root] = edge.id;
    h.edges_.push_back(std::move(edge));
  }

  h.output_edge_.assign(n, kNone);
  h.input_edge_.assign(n, kNone);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = root_to_edge.find(sets.find(i));
    if (it != root_to_edge.end() && graph.layer(i).kind != LayerKind::kOutput) {
      h.output_edge_[i] = it->second;
    }
    const LayerKind kind = graph.layer(i).kind;
    if (has_vertices(kind) || kind == LayerKind::kOutput) {
      h.input_edge_[i] = root_to_edge.at(sets.find(n + i));
    }
  }
  // the output layer's own "output" is the classifier output channel set
  h.output_edge_[graph.output_index()] = h.input_edge_[graph.output_index()];

  for (DependencyEdge& edge : h.edges_) {
    if (edge.frozen) continue;
    std::vector<bool> removed(n, false);
    for (const auto& v : edge.out_vertices) removed[v.layer_index] = true;
    for (const auto& v : edge.in_vertices) removed[v.layer_index] = true;
    edge.can_empty = connected_without(graph, removed);
  }
  return h;
}

std::size_t DependencyHypergraph::vertex_count() const {
  std::size_t total = 0;
  for (const auto& e : edges_) total += e.out_vertices.size() + e.in_vertices.size();
  return total;
}

std::size_t DependencyHypergraph::edge_of(const std::string& layer,
                                          Side side) const {
  for (const auto& e : edges_) {
    const auto& list = side == Side::kOut ? e.out_vertices : e.in_vertices;
    for (const auto& v : list) {
      if (v.layer == layer) return e.id;
    }
  }
  throw InvalidInput("no " + to_string(side) + " vertex for layer '" + layer + "'");
}

std::size_t DependencyHypergraph::edge_of_input(std::size_t layer_index) const {
  std::size_t e = input_edge_.at(layer_index);
  if (e == kNone) {
    throw InvalidInput("layer #" + std::to_string(layer_index) +
                       " has no input vertex");
  }
  return e;
}

std::vector<std::size_t> DependencyHypergraph::prunable_edges() const {
  std::vector<std::size_t> out;
  for (const auto& e : edges_) {
    if (!e.frozen) out.push_back(e.id);
  }
  return out;
}

}  // namespace gator
