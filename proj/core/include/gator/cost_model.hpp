#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gator/hypergraph.hpp"
#include "gator/network_ir.hpp"

namespace gator {

enum class ObjectiveKind { kMemory, kFlops, kLatency };

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind parse_objective(std::string_view text);  // throws InvalidInput

struct LatencyEntry {
  std::size_t channels = 0;  // c_j
  double t_half = 0.0;       // seconds, half of the edge's channels removed

  bool operator==(const LatencyEntry&) const = default;
};

// Measured per-edge latency sensitivities. lambda(j) is seconds saved per
// removed channel, clamped at zero when timing noise makes T_half > T_orig.
struct LatencyTable {
  std::string network;
  double t_orig = 0.0;
  std::map<std::size_t, LatencyEntry> entries;  // keyed by edge id

  double lambda(std::size_t edge) const;
  bool operator==(const LatencyTable&) const = default;
};

// Text format, one record per line:
//   # comment lines are ignored
//   network <name>
//   t_orig <seconds>
//   edge <id> <channels> <t_half_seconds> <lambda_seconds_per_channel>
// The trailing lambda column is informational; it is recomputed on load.
std::string serialize_latency_table(const LatencyTable& table);
LatencyTable parse_latency_table(std::string_view text);
LatencyTable load_latency_table(const std::string& path);

struct CostObjective {
  ObjectiveKind kind = ObjectiveKind::kFlops;
  std::optional<LatencyTable> latency;
};

// Surviving channel count for every edge of a hypergraph (frozen edges keep
// their full width).
using ChannelCounts = std::vector<std::size_t>;
ChannelCounts full_counts(const DependencyHypergraph& h);

// Per-channel cost of edge j at the given counts. Each member conv
// contributes k_w * k_h times the width of its *other* side; memory_cost
// counts weights and flops_cost scales each term by the member's output
// pixel ratio (MACs per input-image pixel).
double memory_cost(const NetworkGraph& g, const DependencyHypergraph& h,
                   const ChannelCounts& counts, std::size_t edge);
double flops_cost(const NetworkGraph& g, const DependencyHypergraph& h,
                  const ChannelCounts& counts, std::size_t edge);
double latency_cost(const LatencyTable& table, std::size_t edge);

struct CostFactors {
  std::vector<std::size_t> edges;   // prunable edge ids, canonical order
  std::vector<double> raw;          // lambda_j(t)
  std::vector<double> normalized;   // lambda_j(t) / denominator
  double denominator = 0.0;         // sum_j c_j * lambda_j(0), frozen
};

// Binds an objective to a network and freezes the normalizing denominator
// at the unpruned channel counts.
class CostModel {
 public:
  CostModel(const NetworkGraph& g, const DependencyHypergraph& h,
            CostObjective objective);

  double edge_cost(const ChannelCounts& counts, std::size_t edge) const;
  CostFactors factors(const ChannelCounts& counts) const;
  CostFactors initial_factors() const { return factors(full_counts(*h_)); }
  double denominator() const { return denominator_; }
  const CostObjective& objective() const { return objective_; }

 private:
  const NetworkGraph* g_;
  const DependencyHypergraph* h_;
  CostObjective objective_;
  double denominator_ = 0.0;
};

// sum_j c_j(t) * lambda_hat_j(t); gate_sums holds c_j(t) per factors.edges.
double computational_loss(std::span<const double> gate_sums,
                          const CostFactors& factors);

}  // namespace gator
