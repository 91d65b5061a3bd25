#include "gator/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gator/error.hpp"

namespace gator {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sigmoid_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

std::size_t EdgeGates::alive() const {
  return static_cast<std::size_t>(std::count(pruned.begin(), pruned.end(), 0));
}

std::optional<std::size_t> GateState::slot_of(std::size_t edge) const {
  for (std::size_t k = 0; k < edges.size(); ++k) {
    if (edges[k].edge == edge) return k;
  }
  return std::nullopt;
}

std::size_t GateState::pruned_count() const {
  std::size_t total = 0;
  for (const auto& e : edges) total += e.theta.size() - e.alive();
  return total;
}

std::size_t GateState::channel_count() const {
  std::size_t total = 0;
  for (const auto& e : edges) total += e.theta.size();
  return total;
}

std::string_view to_string(Granularity g) {
  return g == Granularity::kPerSample ? "per-sample" : "per-batch";
}

Granularity parse_granularity(std::string_view text) {
  if (text == "per-sample") return Granularity::kPerSample;
  if (text == "per-batch") return Granularity::kPerBatch;
  throw InvalidInput("unknown gate granularity '" + std::string(text) +
                     "' (expected per-sample or per-batch)");
}

GateState init_gates(const DependencyHypergraph& h, double p_gate) {
  if (!(p_gate > 0.0 && p_gate < 0.5)) {
    throw InvalidInput("initial gating probability must lie in (0, 0.5), got " +
                       std::to_string(p_gate));
  }
  const double theta = std::log((1.0 - p_gate) / p_gate);
  GateState state;
  for (std::size_t j : h.prunable_edges()) {
    const DependencyEdge& e = h.edge(j);
    EdgeGates gates;
    gates.edge = j;
    gates.theta.assign(e.channel_count, theta);
    gates.pruned.assign(e.channel_count, 0);
    gates.min_survivors = e.min_survivors();
    state.edges.push_back(std::move(gates));
  }
  return state;
}

double sample_logistic(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double u = 0.0;
  do {
    u = uniform(rng);
  } while (u <= 0.0 || u >= 1.0);
  return std::log(u / (1.0 - u));
}

GateDraw sample_gates(const GateState& state, std::mt19937_64& rng,
                      std::size_t batch, Granularity granularity) {
  const std::size_t rows = granularity == Granularity::kPerSample ? batch : 1;
  GateDraw draw;
  draw.edges.reserve(state.edges.size());
  for (const EdgeGates& e : state.edges) {
    EdgeDraw d;
    d.rows = rows;
    d.channels = e.theta.size();
    d.noise.assign(rows * d.channels, 0.0);
    d.mask.assign(rows * d.channels, 0.0);
    d.pruned = e.pruned;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d.channels; ++c) {
        if (e.pruned[c]) continue;
        const double x = sample_logistic(rng);
        d.noise[r * d.channels + c] = x;
        // sigma((theta + x) / tau) >= 0.5  <=>  theta + x >= 0
        d.mask[r * d.channels + c] = e.theta[c] + x >= 0.0 ? 1.0 : 0.0;
      }
    }
    draw.edges.push_back(std::move(d));
  }
  return draw;
}

GateDraw open_draw(const GateState& state) {
  GateDraw draw;
  for (const EdgeGates& e : state.edges) {
    EdgeDraw d;
    d.rows = 1;
    d.channels = e.theta.size();
    d.noise.assign(d.channels, 0.0);
    d.pruned = e.pruned;
    d.mask.resize(d.channels);
    for (std::size_t c = 0; c < d.channels; ++c) d.mask[c] = e.pruned[c] ? 0.0 : 1.0;
    draw.edges.push_back(std::move(d));
  }
  return draw;
}

namespace {

void check_shape(const Tensor& t, const EdgeDraw& draw, const char* what) {
  if (t.rank() != 4 || t.c() != draw.channels ||
      (draw.rows != 1 && draw.rows != t.n())) {
    throw InvalidInput(std::string(what) + " has shape " + shape_to_string(t.shape) +
                       ", gate draw is " + std::to_string(draw.rows) + "x" +
                       std::to_string(draw.channels));
  }
}

}  // namespace

Tensor gate_forward(const Tensor& activations, const EdgeDraw& draw) {
  check_shape(activations, draw, "gated activation");
  Tensor out = activations;
  const std::size_t n = out.n(), c = out.c(), hw = out.h() * out.w();
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t row = draw.rows == 1 ? 0 : b;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double m = draw.at_mask(row, ch);
      if (m == 1.0) continue;
      double* p = out.data.data() + (b * c + ch) * hw;
      for (std::size_t q = 0; q < hw; ++q) p[q] *= m;
    }
  }
  return out;
}

GateBackward gate_backward(const Tensor& upstream, const Tensor& activations,
                           const EdgeDraw& draw, std::span<const double> theta,
                           double temperature) {
  check_shape(upstream, draw, "gate upstream gradient");
  if (upstream.shape != activations.shape) {
    throw InvalidInput("gate upstream gradient " + shape_to_string(upstream.shape) +
                       " does not match activation " + shape_to_string(activations.shape));
  }
  if (theta.size() != draw.channels) {
    throw InvalidInput("gate logits cover " + std::to_string(theta.size()) +
                       " channels, draw has " + std::to_string(draw.channels));
  }
  GateBackward out{gate_forward(upstream, draw), std::vector<double>(draw.channels, 0.0)};
  const std::size_t n = upstream.n(), c = upstream.c(), hw = upstream.h() * upstream.w();
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t row = draw.rows == 1 ? 0 : b;
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (!draw.pruned.empty() && draw.pruned[ch]) continue;
      const std::size_t off = (b * c + ch) * hw;
      double signal = 0.0;
      for (std::size_t q = 0; q < hw; ++q) {
        signal += upstream.data[off + q] * activations.data[off + q];
      }
      const double z = (theta[ch] + draw.at_noise(row, ch)) / temperature;
      out.grad_theta[ch] += signal * sigmoid_derivative(z) / temperature;
    }
  }
  return out;
}

std::vector<PrunedChannel> prune_check(GateState& state) {
  std::vector<PrunedChannel> newly;
  for (EdgeGates& e : state.edges) {
    std::vector<std::size_t> candidates;
    for (std::size_t c = 0; c < e.theta.size(); ++c) {
      if (!e.pruned[c] && e.theta[c] <= 0.0) candidates.push_back(c);
    }
    if (candidates.empty()) continue;
    const std::size_t alive = e.alive();
    const std::size_t keep_free = alive - candidates.size();
    std::size_t must_keep =
        keep_free >= e.min_survivors ? 0 : e.min_survivors - keep_free;
    // survivors among the candidates: highest theta, then lowest index
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return e.theta[a] > e.theta[b]; });
    std::vector<std::size_t> doomed(candidates.begin() + static_cast<long>(must_keep),
                                    candidates.end());
    std::sort(doomed.begin(), doomed.end());
    for (std::size_t c : doomed) {
      e.pruned[c] = 1;
      newly.push_back({e.edge, c});
    }
  }
  return newly;
}

std::vector<std::optional<std::size_t>> gate_points(const NetworkGraph& g,
                                                    const DependencyHypergraph& h) {
  std::vector<std::optional<std::size_t>> points(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const LayerSpec& spec = g.layer(i);
    const bool producer = spec.kind == LayerKind::kConv ||
                          spec.kind == LayerKind::kFullyConnected;
    if (!producer && spec.kind != LayerKind::kBatchNorm) continue;
    const std::size_t edge = h.edge_of_output(i);
    if (h.edge(edge).frozen) continue;
    if (producer) {
      const auto& consumers = g.info(i).consumers;
      const bool normalized = !consumers.empty() &&
          std::all_of(consumers.begin(), consumers.end(), [&](std::size_t c) {
            return g.layer(c).kind == LayerKind::kBatchNorm;
          });
      if (normalized) continue;  // gated after its batchnorm instead
    }
    points[i] = edge;
  }
  return points;
}

NetworkGates::NetworkGates(const NetworkGraph& g, const DependencyHypergraph& h,
                           const GateState& state, const GateDraw& draw)
    : state_(&state), draw_(&draw) {
  if (draw.edges.size() != state.edges.size()) {
    throw InvalidInput("gate draw covers " + std::to_string(draw.edges.size()) +
                       " edges, gate state has " + std::to_string(state.edges.size()));
  }
  const auto points = gate_points(g, h);
  slot_at_layer_.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i]) continue;
    auto slot = state.slot_of(*points[i]);
    if (!slot) throw InvalidInput("gate state has no entry for edge " + std::to_string(*points[i]));
    slot_at_layer_[i] = slot;
  }
  grad_theta_.resize(state.edges.size());
  for (std::size_t k = 0; k < state.edges.size(); ++k) {
    grad_theta_[k].assign(state.edges[k].theta.size(), 0.0);
  }
}

bool NetworkGates::gates(std::size_t layer) const {
  return layer < slot_at_layer_.size() && slot_at_layer_[layer].has_value();
}

Tensor NetworkGates::apply(std::size_t layer, const Tensor& activation) const {
  return gate_forward(activation, draw_->edges[*slot_at_layer_[layer]]);
}

Tensor NetworkGates::backprop(std::size_t layer, const Tensor& upstream,
                              const Tensor& activation) {
  const std::size_t slot = *slot_at_layer_[layer];
  GateBackward gb = gate_backward(upstream, activation, draw_->edges[slot],
                                  state_->edges[slot].theta, state_->temperature);
  for (std::size_t c = 0; c < gb.grad_theta.size(); ++c) grad_theta_[slot][c] += gb.grad_theta[c];
  return std::move(gb.grad_activations);
}

ArrayMap gates_to_arrays(const GateState& state) {
  ArrayMap out;
  for (const EdgeGates& e : state.edges) {
    const std::string prefix = "edge." + std::to_string(e.edge) + ".";
    out.emplace(prefix + "theta", Tensor({e.theta.size()}, e.theta));
    const std::size_t c = e.pruned.size();
    out.emplace(prefix + "pruned", Tensor({c}, std::vector<double>(e.pruned.begin(), e.pruned.end())));
  }
  out.emplace("gates.temperature", Tensor({1}, {state.temperature}));
  return out;
}

GateState gates_from_arrays(const ArrayMap& arrays, const DependencyHypergraph& h) {
  GateState state;
  std::size_t consumed = 0;
  if (auto it = arrays.find("gates.temperature"); it != arrays.end() && it->second.size() == 1) {
    state.temperature = it->second.data[0];
    ++consumed;
  } else {
    throw InvalidInput("gate checkpoint: missing 'gates.temperature'");
  }
  for (std::size_t j : h.prunable_edges()) {
    const std::string prefix = "edge." + std::to_string(j) + ".";
    auto theta = arrays.find(prefix + "theta");
    auto pruned = arrays.find(prefix + "pruned");
    if (theta == arrays.end() || pruned == arrays.end()) {
      throw InvalidInput("gate checkpoint: missing arrays for edge " + std::to_string(j));
    }
    const std::size_t c = h.edge(j).channel_count;
    if (theta->second.shape != Shape{c} || pruned->second.shape != Shape{c}) {
      throw InvalidInput("gate checkpoint: edge " + std::to_string(j) + " has " +
                         std::to_string(theta->second.size()) + " channels, network edge has " +
                         std::to_string(c));
    }
    EdgeGates e;
    e.edge = j;
    e.theta = theta->second.data;
    for (double f : pruned->second.data) e.pruned.push_back(f != 0.0 ? 1 : 0);
    e.min_survivors = h.edge(j).min_survivors();
    state.edges.push_back(std::move(e));
    consumed += 2;
  }
  if (consumed != arrays.size()) {
    throw InvalidInput("gate checkpoint has arrays that do not match the network's prunable edges");
  }
  return state;
}

}  // namespace gator
