#include "gator/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gator/error.hpp"

namespace gator {

namespace {

using Survivors = std::vector<std::size_t>;

Tensor slice_vector(const Tensor& t, const Survivors& keep) {
  std::vector<double> out;
  out.reserve(keep.size());
  for (std::size_t k : keep) out.push_back(t.data.at(k));
  return Tensor({keep.size()}, std::move(out));
}

// weight [out, in, kh, kw] (kh = kw = 1 for fc: [out, in])
Tensor slice_weight(const Tensor& t, const Survivors& outs, const Survivors& ins) {
  const std::size_t in = t.shape.at(1);
  const std::size_t k = t.size() / (t.shape[0] * std::max<std::size_t>(in, 1));
  Shape shape = t.shape;
  shape[0] = outs.size();
  shape[1] = ins.size();
  std::vector<double> out;
  out.reserve(outs.size() * ins.size() * k);
  for (std::size_t o : outs) {
    for (std::size_t i : ins) {
      const double* src = t.data.data() + (o * in + i) * k;
      out.insert(out.end(), src, src + k);
    }
  }
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace

PruningPlan identity_plan(const DependencyHypergraph& h) {
  PruningPlan plan;
  for (const auto& e : h.edges()) {
    Survivors s(e.channel_count);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = i;
    plan.survivors.push_back(std::move(s));
  }
  return plan;
}

PruningPlan extract_plan(const GateState& gates, const DependencyHypergraph& h) {
  PruningPlan plan = identity_plan(h);
  for (const auto& eg : gates.edges) {
    if (eg.edge >= h.size() || eg.pruned.size() != h.edge(eg.edge).channel_count) {
      throw InvalidInput("gate state does not match the hypergraph at edge " +
                         std::to_string(eg.edge));
    }
    Survivors s;
    for (std::size_t i = 0; i < eg.pruned.size(); ++i) {
      if (!eg.pruned[i]) s.push_back(i);
    }
    plan.survivors[eg.edge] = std::move(s);
  }
  return plan;
}

void check_plan(const PruningPlan& plan, const DependencyHypergraph& h) {
  if (plan.survivors.size() != h.size()) {
    throw InvalidInput("plan has " + std::to_string(plan.survivors.size()) +
                       " edges, hypergraph has " + std::to_string(h.size()));
  }
  for (const auto& e : h.edges()) {
    const Survivors& s = plan.survivors[e.id];
    const std::string where = "plan edge " + std::to_string(e.id);
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (s[k] >= e.channel_count) {
        throw InvalidInput(where + ": channel " + std::to_string(s[k]) + " out of range");
      }
      if (k > 0 && s[k] <= s[k - 1]) {
        throw InvalidInput(where + ": survivors not strictly ascending");
      }
    }
    if (e.frozen && s.size() != e.channel_count) {
      throw InvalidInput(where + ": frozen edge must keep all channels");
    }
    if (s.size() < e.min_survivors()) {
      throw InvalidInput(where + ": below the survival floor of " +
                         std::to_string(e.min_survivors()));
    }
  }
}

std::string serialize_plan(const PruningPlan& plan, const DependencyHypergraph& h,
                           const std::string& network) {
  check_plan(plan, h);
  nlohmann::ordered_json j;
  j["network"] = network;
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (const auto& e : h.edges()) {
    edges.push_back({{"edge", e.id}, {"channels", e.channel_count},
                     {"survivors", plan.survivors[e.id]}});
  }
  j["edges"] = std::move(edges);
  return j.dump(1) + "\n";
}

PruningPlan parse_plan(std::string_view text, const DependencyHypergraph& h) {
  PruningPlan plan;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& edges = j.at("edges");
    if (edges.size() != h.size()) {
      throw InvalidInput("plan lists " + std::to_string(edges.size()) + " edges, network has " +
                         std::to_string(h.size()));
    }
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto& e = edges[k];
      if (e.at("edge").get<std::size_t>() != k ||
          e.at("channels").get<std::size_t>() != h.edge(k).channel_count) {
        throw InvalidInput("plan entry " + std::to_string(k) + " does not match edge " +
                           std::to_string(k) + " of the network");
      }
      plan.survivors.push_back(e.at("survivors").get<std::vector<std::size_t>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("plan: ") + e.what());
  }
  check_plan(plan, h);
  return plan;
}

GateState plan_gates(const PruningPlan& plan, const DependencyHypergraph& h) {
  check_plan(plan, h);
  GateState state = init_gates(h, 0.25);
  for (auto& eg : state.edges) {
    std::fill(eg.pruned.begin(), eg.pruned.end(), std::uint8_t{1});
    for (std::size_t k : plan.survivors[eg.edge]) eg.pruned[k] = 0;
  }
  return state;
}

PrunedNetwork apply_pruning(const NetworkGraph& g, const WeightStore& w,
                            const DependencyHypergraph& h, const PruningPlan& plan) {
  check_plan(plan, h);
  check_weights(g, w);
  PrunedNetwork net;
  std::vector<LayerSpec> layers = g.layers();
  for (std::size_t i = 0; i < g.size(); ++i) {
    LayerSpec& spec = layers[i];
    switch (spec.kind) {
      case LayerKind::kConv:
      case LayerKind::kFullyConnected: {
        const Survivors& outs = plan.survivors[h.edge_of_output(i)];
        const Survivors& ins = plan.survivors[h.edge_of_input(i)];
        spec.out_channels = outs.size();
        spec.in_channels = ins.size();
        net.weights[param_key(spec.id, "weight")] =
            slice_weight(w.at(param_key(spec.id, "weight")), outs, ins);
        if (spec.bias) {
          net.weights[param_key(spec.id, "bias")] =
              slice_vector(w.at(param_key(spec.id, "bias")), outs);
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const Survivors& keep = plan.survivors[h.edge_of_output(i)];
        spec.in_channels = spec.out_channels = keep.size();
        for (const char* p : {"gamma", "beta", "running_mean", "running_var"}) {
          net.weights[param_key(spec.id, p)] = slice_vector(w.at(param_key(spec.id, p)), keep);
        }
        break;
      }
      default:
        break;
    }
  }
  net.graph = NetworkGraph::build(g.name(), std::move(layers));
  net.provenance = plan.survivors;
  check_weights(net.graph, net.weights);
  return net;
}

namespace {

struct ConstantInfo {
  bool independent = false;  // output does not depend on the network input
  bool zero = false;         // output is exactly zero
};

bool all_zero(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](double v) { return v == 0.0; });
}

std::vector<ConstantInfo> constant_analysis(const NetworkGraph& g, const WeightStore& w) {
  std::vector<ConstantInfo> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const LayerSpec& spec = g.layer(i);
    const LayerInfo& info = g.info(i);
    ConstantInfo& c = out[i];
    auto in = [&](std::size_t k) { return out[info.inputs[k]]; };
    switch (spec.kind) {
      case LayerKind::kInput:
        break;
      case LayerKind::kOutput:
        c = in(0);
        break;
      case LayerKind::kConv:
      case LayerKind::kFullyConnected: {
        const bool no_input = info.in_channels == 0 || in(0).zero;
        const bool no_bias = !spec.bias || all_zero(w.at(param_key(spec.id, "bias")));
        c.independent = info.out_channels == 0 || info.in_channels == 0 || in(0).independent;
        c.zero = info.out_channels == 0 || (no_input && no_bias);
        break;
      }
      case LayerKind::kBatchNorm: {
        c.independent = info.out_channels == 0 || in(0).independent;
        c.zero = info.out_channels == 0;
        if (!c.zero && in(0).zero) {
          // Same expression as the eval-mode executor, on x = 0.
          const Tensor& gamma = w.at(param_key(spec.id, "gamma"));
          const Tensor& beta = w.at(param_key(spec.id, "beta"));
          const Tensor& mean = w.at(param_key(spec.id, "running_mean"));
          const Tensor& var = w.at(param_key(spec.id, "running_var"));
          c.zero = true;
          for (std::size_t ch = 0; ch < info.out_channels && c.zero; ++ch) {
            const double inv = 1.0 / std::sqrt(var.data[ch] + kBatchNormEpsilon);
            c.zero = gamma.data[ch] * ((0.0 - mean.data[ch]) * inv) + beta.data[ch] == 0.0;
          }
        }
        break;
      }
      case LayerKind::kAdd:
        c.independent = c.zero = true;
        for (std::size_t k = 0; k < info.inputs.size(); ++k) {
          c.independent = c.independent && in(k).independent;
          c.zero = c.zero && in(k).zero;
        }
        break;
      default:  // relu, pooling
        c = in(0);
        break;
    }
  }
  return out;
}

// First layer on the way back from `i` that turns a constant input into a
// non-zero constant.
std::string nonzero_origin(const NetworkGraph& g, const std::vector<ConstantInfo>& ci,
                           std::size_t i) {
  for (;;) {
    const LayerInfo& info = g.info(i);
    std::optional<std::size_t> next;
    for (std::size_t p : info.inputs) {
      if (ci[p].independent && !ci[p].zero) {
        next = p;
        break;
      }
    }
    if (!next) return g.layer(i).id;
    i = *next;
  }
}

}  // namespace

CollapseResult collapse_empty_blocks(const PrunedNetwork& net, CollapseMode mode) {
  const NetworkGraph& g = net.graph;
  const std::vector<ConstantInfo> ci = constant_analysis(g, net.weights);
  CollapseResult result;

  std::vector<LayerSpec> layers = g.layers();
  std::map<std::string, std::string> replace;  // bypassed add -> remaining operand
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.layer(i).kind != LayerKind::kAdd) continue;
    const LayerInfo& info = g.info(i);
    std::vector<std::string> keep;
    for (std::size_t p : info.inputs) {
      if (ci[p].zero) continue;
      if (ci[p].independent) {
        result.blocked.push_back(g.layer(i).id + ": operand " + g.layer(p).id +
                                 " has no input channels but emits a non-zero constant from " +
                                 nonzero_origin(g, ci, p));
      }
      keep.push_back(g.layer(p).id);
    }
    if (keep.size() == info.inputs.size()) continue;
    if (keep.empty()) keep.push_back(g.layer(info.inputs.front()).id);
    if (keep.size() == 1) {
      replace[g.layer(i).id] = keep.front();
    } else {
      layers[i].inputs = keep;
    }
    result.collapsed_adds.push_back(g.layer(i).id);
  }
  if (mode == CollapseMode::kStrict && !result.blocked.empty()) {
    std::string msg = "non-collapsible residual branch";
    for (const auto& b : result.blocked) msg += "; " + b;
    throw RuntimeFailure(msg);
  }

  // Chains of bypassed adds resolve to the first surviving layer.
  auto resolve = [&](std::string id) {
    for (auto it = replace.find(id); it != replace.end(); it = replace.find(id)) id = it->second;
    return id;
  };
  for (auto& spec : layers) {
    for (auto& in : spec.inputs) in = resolve(in);
  }

  // Keep what the output still depends on (and the input layer).
  std::set<std::string> live;
  std::map<std::string, const LayerSpec*> by_id;
  for (const auto& spec : layers) by_id[spec.id] = &spec;
  std::vector<std::string> stack{g.layer(g.output_index()).id, g.layer(g.input_index()).id};
  while (!stack.empty()) {
    std::string id = stack.back();
    stack.pop_back();
    if (!live.insert(id).second) continue;
    for (const auto& in : by_id.at(id)->inputs) stack.push_back(in);
  }

  std::vector<LayerSpec> kept;
  PrunedNetwork& out = result.network;
  out.provenance = net.provenance;
  out.removed_layers = net.removed_layers;
  for (auto& spec : layers) {
    if (!live.count(spec.id)) {
      out.removed_layers.push_back(spec.id);
      continue;
    }
    kept.push_back(spec);
  }
  out.graph = NetworkGraph::build(g.name(), std::move(kept));
  for (const auto& [key, shape] : expected_parameters(out.graph)) {
    out.weights[key] = net.weights.at(key);
  }
  return result;
}

PruningReport report(const NetworkGraph& original, const PrunedNetwork& pruned,
                     std::size_t input_h, std::size_t input_w) {
  PruningReport r;
  r.flops_original = count_flops(original, input_h, input_w);
  r.flops_pruned = count_flops(pruned.graph, input_h, input_w);
  r.params_original = count_params(original);
  r.params_pruned = count_params(pruned.graph);
  auto pct = [](std::uint64_t before, std::uint64_t after) {
    return before == 0 ? 0.0
                       : 100.0 * (1.0 - static_cast<double>(after) / static_cast<double>(before));
  };
  r.flops_reduction = pct(r.flops_original, r.flops_pruned);
  r.memory_reduction = pct(r.params_original, r.params_pruned);
  r.layers_original = original.size();
  r.layers_pruned = pruned.graph.size();
  const DependencyHypergraph h = build_hypergraph(original);
  if (pruned.provenance.size() == h.size()) {
    for (const auto& e : h.edges()) {
      if (e.frozen) continue;
      r.edges.push_back({e.id, pruned.provenance[e.id].size(), e.channel_count});
    }
  }
  return r;
}

std::string report_json(const PruningReport& r) {
  nlohmann::ordered_json j;
  j["flops_original"] = r.flops_original;
  j["flops_pruned"] = r.flops_pruned;
  j["flops_reduction_percent"] = r.flops_reduction;
  j["params_original"] = r.params_original;
  j["params_pruned"] = r.params_pruned;
  j["memory_reduction_percent"] = r.memory_reduction;
  j["layers_original"] = r.layers_original;
  j["layers_pruned"] = r.layers_pruned;
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (const auto& e : r.edges) {
    edges.push_back({{"edge", e.edge}, {"kept", e.kept}, {"total", e.total}});
  }
  j["edges"] = std::move(edges);
  return j.dump(2) + "\n";
}

std::string report_text(const PruningReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "FLOPs  " << r.flops_original << " -> " << r.flops_pruned << "  (" << r.flops_reduction
     << "% reduction)\n";
  os << "params " << r.params_original << " -> " << r.params_pruned << "  ("
     << r.memory_reduction << "% reduction)\n";
  os << "layers " << r.layers_original << " -> " << r.layers_pruned << "\n";
  if (!r.edges.empty()) {
    os << "edge  kept/total\n";
    for (const auto& e : r.edges) {
      os << "  " << e.edge << "  " << e.kept << "/" << e.total << "\n";
    }
    // Histogram of survivor fractions in tenths.
    std::vector<std::size_t> bins(11, 0);
    for (const auto& e : r.edges) {
      const double f = e.total ? static_cast<double>(e.kept) / static_cast<double>(e.total) : 1.0;
      ++bins[static_cast<std::size_t>(std::floor(f * 10.0 + 1e-12))];
    }
    os << "survivor fraction histogram\n";
    for (std::size_t b = 0; b < bins.size(); ++b) {
      os << "  " << (b == 10 ? std::string("[1.0]     ")
                             : "[0." + std::to_string(b) + ", " +
                                   (b == 9 ? std::string("1.0") : "0." + std::to_string(b + 1)) + ")")
         << "  " << bins[b] << "\n";
    }
  }
  return os.str();
}

}  // namespace gator
