#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gator/network_ir.hpp"

namespace gator {

enum class Side { kIn, kOut };

// Input or output channel set of one conv / fully-connected layer. The
// network input image is an `out` vertex and the network output an `in`
// vertex; both pin their edge as frozen.
struct ChannelVertex {
  std::string layer;
  Side side = Side::kOut;
  std::size_t channel_count = 0;
  std::size_t layer_index = 0;

  bool operator==(const ChannelVertex&) const = default;
};

// A channel dependency group: every member must lose the same channel
// indices together for the network to stay shape-consistent.
struct DependencyEdge {
  std::size_t id = 0;
  std::vector<ChannelVertex> out_vertices;
  std::vector<ChannelVertex> in_vertices;
  std::size_t channel_count = 0;
  bool frozen = false;
  // Removing every channel leaves input and output connected (a residual
  // branch next to a highway), so the survival floor for this edge is 0.
  bool can_empty = false;

  std::size_t min_survivors() const { return can_empty ? 0 : 1; }
  bool trivial() const {
    return out_vertices.size() == 1 && in_vertices.size() == 1;
  }
  bool operator==(const DependencyEdge&) const = default;
};

class DependencyHypergraph {
 public:
  const std::vector<DependencyEdge>& edges() const { return edges_; }
  const DependencyEdge& edge(std::size_t id) const { return edges_.at(id); }
  std::size_t size() const { return edges_.size(); }
  std::size_t vertex_count() const;

  // Edge holding the given vertex. Throws InvalidInput for unknown vertices.
  std::size_t edge_of(const std::string& layer, Side side) const;
  std::size_t edge_of(const ChannelVertex& vertex) const {
    return edge_of(vertex.layer, vertex.side);
  }
  // Edge carrying the output channels of any layer (conv outputs as well as
  // the channel-preserving layers downstream of them).
  std::size_t edge_of_output(std::size_t layer_index) const {
    return output_edge_.at(layer_index);
  }
  // Edge carrying a conv / fc layer's input channels.
  std::size_t edge_of_input(std::size_t layer_index) const;

  // Non-frozen edges in canonical order.
  std::vector<std::size_t> prunable_edges() const;

  bool operator==(const DependencyHypergraph&) const = default;

 private:
  friend DependencyHypergraph build_hypergraph(const NetworkGraph& graph);

  std::vector<DependencyEdge> edges_;
  std::vector<std::size_t> output_edge_;  // per layer
  std::vector<std::size_t> input_edge_;   // per layer, conv/fc/output only
};

// Union-find closure of the channel dependency rules. Edges are ordered by
// the smallest topological index among their members.
DependencyHypergraph build_hypergraph(const NetworkGraph& graph);

inline std::vector<std::size_t> prunable_edges(const DependencyHypergraph& h) {
  return h.prunable_edges();
}

std::string to_string(Side side);

}  // namespace gator
