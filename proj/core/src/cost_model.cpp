#include "gator/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "gator/error.hpp"

namespace gator {

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kMemory: return "memory";
    case ObjectiveKind::kFlops: return "flops";
    case ObjectiveKind::kLatency: return "latency";
  }
  return "unknown";
}

ObjectiveKind parse_objective(std::string_view text) {
  if (text == "memory") return ObjectiveKind::kMemory;
  if (text == "flops") return ObjectiveKind::kFlops;
  if (text == "latency") return ObjectiveKind::kLatency;
  throw InvalidInput("unknown objective '" + std::string(text) +
                     "' (expected memory, flops or latency)");
}

// ---------------------------------------------------------------------------
// Latency table
// ---------------------------------------------------------------------------

double LatencyTable::lambda(std::size_t edge) const {
  auto it = entries.find(edge);
  if (it == entries.end()) {
    throw InvalidInput("latency table has no entry for edge " + std::to_string(edge));
  }
  const LatencyEntry& e = it->second;
  if (e.channels == 0) return 0.0;
  return std::max(0.0, t_orig - e.t_half) / (static_cast<double>(e.channels) / 2.0);
}

std::string serialize_latency_table(const LatencyTable& table) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "# gator latency table\n";
  out << "network " << (table.network.empty() ? "network" : table.network) << "\n";
  out << "t_orig " << table.t_orig << "\n";
  out << "# edge <id> <channels> <t_half_seconds> <lambda_seconds_per_channel>\n";
  for (const auto& [id, e] : table.entries) {
    out << "edge " << id << " " << e.channels << " " << e.t_half << " "
        << table.lambda(id) << "\n";
  }
  return out.str();
}

LatencyTable parse_latency_table(std::string_view text) {
  LatencyTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_orig = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string tag;
    fields >> tag;
    auto bad = [&] {
      return InvalidInput("latency table line " + std::to_string(line_no) +
                          ": malformed '" + line + "'");
    };
    if (tag == "network") {
      if (!(fields >> table.network)) throw bad();
    } else if (tag == "t_orig") {
      if (!(fields >> table.t_orig)) throw bad();
      have_orig = true;
    } else if (tag == "edge") {
      std::size_t id = 0;
      LatencyEntry e;
      if (!(fields >> id >> e.channels >> e.t_half)) throw bad();
      if (!(e.t_half > 0.0)) {
        throw InvalidInput("latency table line " + std::to_string(line_no) +
                           ": timings must be positive");
      }
      table.entries[id] = e;
    } else {
      throw bad();
    }
  }
  if (!have_orig || !(table.t_orig > 0.0)) {
    throw InvalidInput("latency table: missing or non-positive t_orig");
  }
  return table;
}

LatencyTable load_latency_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open latency table '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_latency_table(buffer.str());
}

// ---------------------------------------------------------------------------
// Cost factors
// ---------------------------------------------------------------------------

ChannelCounts full_counts(const DependencyHypergraph& h) {
  ChannelCounts counts;
  counts.reserve(h.size());
  for (const auto& e : h.edges()) counts.push_back(e.channel_count);
  return counts;
}

namespace {

const DependencyEdge& checked_edge(const DependencyHypergraph& h,
                                   const ChannelCounts& counts,
                                   std::size_t edge) {
  if (edge >= h.size()) throw InvalidInput("unknown edge " + std::to_string(edge));
  if (counts.size() != h.size()) {
    throw InvalidInput("channel counts cover " + std::to_string(counts.size()) +
                       " edges, hypergraph has " + std::to_string(h.size()));
  }
  return h.edge(edge);
}

template <typename Scale>
double weighted_cost(const NetworkGraph& g, const DependencyHypergraph& h,
                     const ChannelCounts& counts, std::size_t edge,
                     Scale scale) {
  const DependencyEdge& e = checked_edge(h, counts, edge);
  double total = 0.0;
  // consumers lose an input slice of k_w * k_h * c_out(t) weights
  for (const ChannelVertex& v : e.in_vertices) {
    const LayerSpec& spec = g.layer(v.layer_index);
    if (spec.kind != LayerKind::kConv && spec.kind != LayerKind::kFullyConnected) continue;
    const double other = static_cast<double>(counts[h.edge_of_output(v.layer_index)]);
    total += scale(v.layer_index) * static_cast<double>(spec.kernel_w * spec.kernel_h) * other;
  }
  // producers lose a filter of k_w * k_h * c_in(t) weights
  for (const ChannelVertex& v : e.out_vertices) {
    const LayerSpec& spec = g.layer(v.layer_index);
    if (spec.kind != LayerKind::kConv && spec.kind != LayerKind::kFullyConnected) continue;
    const double other = static_cast<double>(counts[h.edge_of_input(v.layer_index)]);
    total += scale(v.layer_index) * static_cast<double>(spec.kernel_w * spec.kernel_h) * other;
  }
  return total;
}

}  // namespace

double memory_cost(const NetworkGraph& g, const DependencyHypergraph& h,
                   const ChannelCounts& counts, std::size_t edge) {
  return weighted_cost(g, h, counts, edge, [](std::size_t) { return 1.0; });
}

double flops_cost(const NetworkGraph& g, const DependencyHypergraph& h,
                  const ChannelCounts& counts, std::size_t edge) {
  return weighted_cost(g, h, counts, edge,
                       [&g](std::size_t layer) { return g.info(layer).pixel_ratio; });
}

double latency_cost(const LatencyTable& table, std::size_t edge) {
  return table.lambda(edge);
}

CostModel::CostModel(const NetworkGraph& g, const DependencyHypergraph& h,
                     CostObjective objective)
    : g_(&g), h_(&h), objective_(std::move(objective)) {
  if (objective_.kind == ObjectiveKind::kLatency) {
    if (!objective_.latency) throw InvalidInput("latency objective needs a latency table");
    for (std::size_t j : h.prunable_edges()) {
      auto it = objective_.latency->entries.find(j);
      if (it == objective_.latency->entries.end()) {
        throw InvalidInput("latency table has no entry for prunable edge " + std::to_string(j));
      }
      if (it->second.channels != h.edge(j).channel_count) {
        throw InvalidInput("latency table edge " + std::to_string(j) + " has " +
                           std::to_string(it->second.channels) +
                           " channels, network edge has " +
                           std::to_string(h.edge(j).channel_count));
      }
    }
  }
  const ChannelCounts counts = full_counts(h);
  double d = 0.0;
  for (std::size_t j : h.prunable_edges()) {
    d += static_cast<double>(h.edge(j).channel_count) * edge_cost(counts, j);
  }
  if (!(d > 0.0)) {
    throw InvalidInput("computational cost of all prunable edges is zero; nothing to normalize");
  }
  denominator_ = d;
}

double CostModel::edge_cost(const ChannelCounts& counts, std::size_t edge) const {
  switch (objective_.kind) {
    case ObjectiveKind::kMemory: return memory_cost(*g_, *h_, counts, edge);
    case ObjectiveKind::kFlops: return flops_cost(*g_, *h_, counts, edge);
    case ObjectiveKind::kLatency: return latency_cost(*objective_.latency, edge);
  }
  return 0.0;
}

CostFactors CostModel::factors(const ChannelCounts& counts) const {
  CostFactors f;
  f.denominator = denominator_;
  f.edges = h_->prunable_edges();
  for (std::size_t j : f.edges) {
    const double lambda = edge_cost(counts, j);
    f.raw.push_back(lambda);
    f.normalized.push_back(lambda / denominator_);
  }
  return f;
}

double computational_loss(std::span<const double> gate_sums,
                          const CostFactors& factors) {
  if (gate_sums.size() != factors.edges.size()) {
    throw InvalidInput("computational loss: " + std::to_string(gate_sums.size()) +
                       " gate sums for " + std::to_string(factors.edges.size()) +
                       " prunable edges");
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < gate_sums.size(); ++k) {
    loss += gate_sums[k] * factors.normalized[k];
  }
  return loss;
}

}  // namespace gator
