#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gator/container.hpp"
#include "gator/executor.hpp"
#include "gator/hypergraph.hpp"

namespace gator {

double sigmoid(double x);
double sigmoid_derivative(double x);  // sigma(x) * (1 - sigma(x))

// Gate logits of one prunable edge. P(channel open) = sigmoid(theta).
struct EdgeGates {
  std::size_t edge = 0;
  std::vector<double> theta;
  std::vector<std::uint8_t> pruned;  // permanent, never cleared
  std::size_t min_survivors = 1;

  std::size_t alive() const;
  bool operator==(const EdgeGates&) const = default;
};

struct GateState {
  std::vector<EdgeGates> edges;  // one per prunable edge, canonical order
  double temperature = 1.0;

  // Index into `edges` for a hypergraph edge id, or nullopt if frozen.
  std::optional<std::size_t> slot_of(std::size_t edge) const;
  std::size_t pruned_count() const;
  std::size_t channel_count() const;
  bool operator==(const GateState&) const = default;
};

enum class Granularity { kPerSample, kPerBatch };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view text);

// One binary mask per row (sample, or a single row for per-batch draws).
struct EdgeDraw {
  std::size_t rows = 0;
  std::size_t channels = 0;
  std::vector<double> noise;  // [rows][channels], 0 for pruned channels
  std::vector<double> mask;   // [rows][channels], in {0, 1}
  std::vector<std::uint8_t> pruned;

  double at_mask(std::size_t row, std::size_t c) const { return mask[row * channels + c]; }
  double at_noise(std::size_t row, std::size_t c) const { return noise[row * channels + c]; }
};

struct GateDraw {
  std::vector<EdgeDraw> edges;  // parallel to GateState::edges
};

// Closed-gate probability p_gate for every channel of every prunable edge:
// theta = ln((1 - p) / p). Requires 0 < p_gate < 0.5.
GateState init_gates(const DependencyHypergraph& h, double p_gate);

// Logistic(0, 1) noise by inverse CDF, x = ln(u / (1 - u)).
double sample_logistic(std::mt19937_64& rng);

GateDraw sample_gates(const GateState& state, std::mt19937_64& rng,
                      std::size_t batch, Granularity granularity);

// Deterministic draw: pruned channels closed, everything else open.
GateDraw open_draw(const GateState& state);

// Multiplies channel i of every sample by its mask value.
Tensor gate_forward(const Tensor& activations, const EdgeDraw& draw);

struct GateBackward {
  Tensor grad_activations;    // upstream * mask
  std::vector<double> grad_theta;  // per channel
};

// Straight-through gradient: the data path sees the hard mask, the logits
// see d sigma((theta + x) / tau) / d theta at the retained noise.
GateBackward gate_backward(const Tensor& upstream, const Tensor& activations,
                           const EdgeDraw& draw, std::span<const double> theta,
                           double temperature);

struct PrunedChannel {
  std::size_t edge = 0;
  std::size_t channel = 0;
  bool operator==(const PrunedChannel&) const = default;
};

// Marks every live channel with theta <= 0 as permanently pruned, keeping at
// least min_survivors per edge (highest theta wins, ties to lower index).
std::vector<PrunedChannel> prune_check(GateState& state);

// Where the per-edge masks are applied: conv / fc outputs, or the batchnorm
// that normalizes them, so that every consumer of a gated channel sees an
// exact zero. Entry i is the edge gating layer i's output, if any.
std::vector<std::optional<std::size_t>> gate_points(const NetworkGraph& g,
                                                    const DependencyHypergraph& h);

// ActivationGate that applies a GateDraw at the gate points and accumulates
// the task-loss gradient of every edge's logits.
class NetworkGates final : public ActivationGate {
 public:
  NetworkGates(const NetworkGraph& g, const DependencyHypergraph& h,
               const GateState& state, const GateDraw& draw);

  bool gates(std::size_t layer) const override;
  Tensor apply(std::size_t layer, const Tensor& activation) const override;
  Tensor backprop(std::size_t layer, const Tensor& upstream,
                  const Tensor& activation) override;

  // Summed over all gate points of each edge; parallel to GateState::edges.
  const std::vector<std::vector<double>>& theta_gradients() const { return grad_theta_; }

 private:
  std::vector<std::optional<std::size_t>> slot_at_layer_;
  const GateState* state_;
  const GateDraw* draw_;
  std::vector<std::vector<double>> grad_theta_;
};

// Checkpoint arrays: "edge.<id>.theta", "edge.<id>.pruned" (0/1), and
// "gates.temperature" [1]. Uses the weight container format.
ArrayMap gates_to_arrays(const GateState& state);
GateState gates_from_arrays(const ArrayMap& arrays, const DependencyHypergraph& h);

}  // namespace gator
