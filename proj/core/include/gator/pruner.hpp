#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gator/gating.hpp"
#include "gator/hypergraph.hpp"
#include "gator/network_ir.hpp"

namespace gator {

// Surviving channel indices (ascending) for every edge of a hypergraph;
// frozen edges keep all of theirs.
struct PruningPlan {
  std::vector<std::vector<std::size_t>> survivors;
  bool operator==(const PruningPlan&) const = default;
};

PruningPlan identity_plan(const DependencyHypergraph& h);
PruningPlan extract_plan(const GateState& gates, const DependencyHypergraph& h);

// Throws InvalidInput unless the plan fits the hypergraph: one entry per
// edge, ascending indices below c_j, full frozen edges, survival floors met.
void check_plan(const PruningPlan& plan, const DependencyHypergraph& h);

// JSON: {"network": name, "edges": [{"edge": id, "channels": c_j,
// "survivors": [...]}, ...]} with one entry per hypergraph edge in id order.
std::string serialize_plan(const PruningPlan& plan, const DependencyHypergraph& h,
                           const std::string& network);
PruningPlan parse_plan(std::string_view text, const DependencyHypergraph& h);

// Binary gate state equivalent to a plan (pruned = not surviving).
GateState plan_gates(const PruningPlan& plan, const DependencyHypergraph& h);

struct PrunedNetwork {
  NetworkGraph graph;
  WeightStore weights;
  // Per original edge: provenance[j][new index] = original channel index.
  std::vector<std::vector<std::size_t>> provenance;
  std::vector<std::string> removed_layers;  // filled by collapse_empty_blocks
};

// Slices every member conv / fc / batchnorm of each edge to its survivors.
PrunedNetwork apply_pruning(const NetworkGraph& g, const WeightStore& w,
                            const DependencyHypergraph& h, const PruningPlan& plan);

enum class CollapseMode {
  kStrict,  // a branch that is empty but not exactly zero is an error
  kReport,  // such branches are kept and listed
};

struct CollapseResult {
  PrunedNetwork network;
  std::vector<std::string> collapsed_adds;  // add layers that were bypassed
  // "<add id>: <reason>" for empty branches that still emit a constant
  std::vector<std::string> blocked;
};

// Removes add operands whose output is exactly zero for every input (all
// weights multiply empty channel sets, no bias, zero batchnorm shift). An
// add left with one operand is replaced by it; layers that no longer reach
// the output are deleted.
CollapseResult collapse_empty_blocks(const PrunedNetwork& net,
                                     CollapseMode mode = CollapseMode::kStrict);

struct EdgeSurvivors {
  std::size_t edge = 0;
  std::size_t kept = 0;
  std::size_t total = 0;
};

struct PruningReport {
  std::uint64_t flops_original = 0;
  std::uint64_t flops_pruned = 0;
  std::uint64_t params_original = 0;
  std::uint64_t params_pruned = 0;
  double flops_reduction = 0.0;   // percent
  double memory_reduction = 0.0;  // percent, conv + fc weights
  std::size_t layers_original = 0;
  std::size_t layers_pruned = 0;
  std::vector<EdgeSurvivors> edges;
};

// FLOPs and parameter numbers are counted on the emitted graph itself.
PruningReport report(const NetworkGraph& original, const PrunedNetwork& pruned,
                     std::size_t input_h, std::size_t input_w);
std::string report_json(const PruningReport& r);
std::string report_text(const PruningReport& r);

}  // namespace gator
