#pragma once

#include <set>
#include <string>
#include <vector>

#include "gator/hypergraph.hpp"
#include "gator/network_ir.hpp"

namespace testing {

// input(widths[0], hw x hw) -> conv1 -> ... -> output, 3x3 "same" convs
// without batchnorm.
inline gator::NetworkGraph chain(const std::vector<std::size_t>& widths, std::size_t hw = 6) {
  using gator::LayerKind;
  using gator::LayerSpec;
  std::vector<LayerSpec> layers;
  LayerSpec in;
  in.id = "input";
  in.kind = LayerKind::kInput;
  in.out_channels = widths[0];
  in.height = in.width = hw;
  layers.push_back(in);
  std::string prev = "input";
  for (std::size_t i = 1; i < widths.size(); ++i) {
    LayerSpec c;
    c.id = "conv" + std::to_string(i);
    c.kind = LayerKind::kConv;
    c.inputs = {prev};
    c.in_channels = widths[i - 1];
    c.out_channels = widths[i];
    c.kernel_h = c.kernel_w = 3;
    c.padding = 1;
    c.bias = true;
    layers.push_back(c);
    prev = c.id;
  }
  LayerSpec out;
  out.id = "output";
  out.kind = LayerKind::kOutput;
  out.inputs = {prev};
  layers.push_back(out);
  return gator::NetworkGraph::build("chain", layers);
}

// Shrinks the given member vertices by one channel; batchnorms follow
// the conv that feeds them.
inline gator::NetworkGraph drop_channel(const gator::NetworkGraph& g,
                                       const std::vector<gator::ChannelVertex>& members) {
  std::vector<gator::LayerSpec> layers = g.layers();
  std::set<std::string> outs, ins;
  for (const auto& v : members) (v.side == gator::Side::kOut ? outs : ins).insert(v.layer);
  for (auto& l : layers) {
    if (outs.count(l.id)) --l.out_channels;
    if (ins.count(l.id)) --l.in_channels;
  }
  // batchnorms follow the conv feeding them
  for (auto& l : layers) {
    if (l.kind != gator::LayerKind::kBatchNorm) continue;
    const auto& src = layers[g.index_of(l.inputs[0])];
    if (outs.count(src.id)) l.in_channels = l.out_channels = src.out_channels;
  }
  return gator::NetworkGraph::build(g.name(), layers);
}

}  // namespace testing
