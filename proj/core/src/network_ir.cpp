#include "gator/network_ir.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <queue>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gator/error.hpp"
#include "gator/executor.hpp"

namespace gator {

namespace {

using Json = nlohmann::ordered_json;

struct KindName {
  LayerKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::kInput, "input"},
    {LayerKind::kOutput, "output"},
    {LayerKind::kConv, "conv"},
    {LayerKind::kFullyConnected, "fc"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kBatchNorm, "batchnorm"},
    {LayerKind::kAdd, "add"},
    {LayerKind::kGlobalAvgPool, "global_avg_pool"},
    {LayerKind::kMaxPool, "max_pool"},
};

[[noreturn]] void fail(const std::string& layer, const std::string& message) {
  throw InvalidInput("layer '" + layer + "': " + message);
}

std::size_t spatial_out(const LayerSpec& spec, std::size_t in,
                        std::size_t kernel) {
  if (in + 2 * spec.padding < kernel) {
    fail(spec.id, "kernel " + std::to_string(kernel) +
                      " larger than padded input " + std::to_string(in));
  }
  return (in + 2 * spec.padding - kernel) / spec.stride + 1;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<LayerKind> parse_layer_kind(std::string_view text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) return k;
  }
  if (text == "fully-connected" || text == "fully_connected") {
    return LayerKind::kFullyConnected;
  }
  if (text == "global-avg-pool") return LayerKind::kGlobalAvgPool;
  if (text == "max-pool") return LayerKind::kMaxPool;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

NetworkGraph NetworkGraph::build(std::string name,
                                 std::vector<LayerSpec> layers) {
  const std::size_t n = layers.size();
  std::map<std::string, std::size_t, std::less<>> declared;
  for (std::size_t i = 0; i < n; ++i) {
    if (layers[i].id.empty()) {
      throw InvalidInput("layer #" + std::to_string(i) + " has an empty id");
    }
    if (!declared.emplace(layers[i].id, i).second) {
      fail(layers[i].id, "duplicate layer id");
    }
  }

  // Edges in declaration indices; dangling references are reported here.
  std::vector<std::vector<std::size_t>> preds(n), succs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& ref : layers[i].inputs) {
      auto it = declared.find(ref);
      if (it == declared.end()) {
        fail(layers[i].id, "input references unknown layer '" + ref + "'");
      }
      preds[i].push_back(it->second);
      succs[it->second].push_back(i);
    }
  }

  // Kahn's algorithm, ties broken by declaration order.
  std::vector<std::size_t> indegree(n);
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>>
      ready;
  for (std::size_t i = 0; i < n; ++i) {
    indegree[i] = preds[i].size();
    if (indegree[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    std::size_t i = ready.top();
    ready.pop();
    order.push_back(i);
    for (std::size_t s : succs[i]) {
      if (--indegree[s] == 0) ready.push(s);
    }
  }
  if (order.size() != n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (indegree[i] > 0) fail(layers[i].id, "cycle detected");
    }
  }

  NetworkGraph g;
  g.name_ = std::move(name);
  g.layers_.reserve(n);
  std::vector<std::size_t> position(n);
  for (std::size_t k = 0; k < n; ++k) position[order[k]] = k;
  for (std::size_t k = 0; k < n; ++k) {
    g.layers_.push_back(std::move(layers[order[k]]));
    g.index_.emplace(g.layers_.back().id, k);
  }
  g.info_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t p : preds[order[k]]) {
      g.info_[k].inputs.push_back(position[p]);
      g.info_[position[p]].consumers.push_back(k);
    }
  }

  std::optional<std::size_t> input, output;
  for (std::size_t k = 0; k < n; ++k) {
    const LayerSpec& spec = g.layers_[k];
    LayerInfo& info = g.info_[k];
    const std::size_t arity = info.inputs.size();

    if (spec.kind == LayerKind::kInput) {
      if (input) fail(spec.id, "second input layer");
      input = k;
      if (arity != 0) fail(spec.id, "input layer cannot have inputs");
      if (spec.out_channels == 0 || spec.height == 0 || spec.width == 0) {
        fail(spec.id, "input needs channels, height and width >= 1");
      }
      info.in_channels = info.out_channels = spec.out_channels;
      info.in_h = info.out_h = spec.height;
      info.in_w = info.out_w = spec.width;
      continue;
    }

    if (spec.kind == LayerKind::kAdd) {
      if (arity < 2) fail(spec.id, "add needs at least two inputs");
    } else if (arity != 1) {
      fail(spec.id, std::string(to_string(spec.kind)) +
                        " needs exactly one input, got " +
                        std::to_string(arity));
    }

    const LayerInfo& src = g.info_[info.inputs[0]];
    const std::string& src_id = g.layers_[info.inputs[0]].id;
    info.in_channels = src.out_channels;
    info.in_h = src.out_h;
    info.in_w = src.out_w;
    info.downsample_exponent = src.downsample_exponent;
    info.out_channels = src.out_channels;
    info.out_h = src.out_h;
    info.out_w = src.out_w;

    auto check_stride = [&] {
      if (spec.stride != 1 && spec.stride != 2) {
        fail(spec.id, "stride must be 1 or 2");
      }
      if (spec.stride == 2) ++info.downsample_exponent;
    };

    switch (spec.kind) {
      case LayerKind::kConv:
        if (spec.kernel_h == 0 || spec.kernel_w == 0) {
          fail(spec.id, "kernel sizes must be >= 1");
        }
        check_stride();
        if (spec.in_channels != src.out_channels) {
          fail(spec.id, "channel mismatch: declares in_channels=" +
                            std::to_string(spec.in_channels) + " but '" +
                            src_id + "' produces " +
                            std::to_string(src.out_channels));
        }
        info.out_channels = spec.out_channels;
        info.out_h = spatial_out(spec, src.out_h, spec.kernel_h);
        info.out_w = spatial_out(spec, src.out_w, spec.kernel_w);
        break;
      case LayerKind::kFullyConnected:
        if (src.out_h != 1 || src.out_w != 1) {
          fail(spec.id, "fully-connected input from '" + src_id +
                            "' must be spatially 1x1");
        }
        if (spec.in_channels != src.out_channels) {
          fail(spec.id, "channel mismatch: declares in_features=" +
                            std::to_string(spec.in_channels) + " but '" +
                            src_id + "' produces " +
                            std::to_string(src.out_channels));
        }
        info.out_channels = spec.out_channels;
        break;
      case LayerKind::kBatchNorm:
        if (spec.in_channels != src.out_channels) {
          fail(spec.id, "channel mismatch: declares channels=" +
                            std::to_string(spec.in_channels) + " but '" +
                            src_id + "' produces " +
                            std::to_string(src.out_channels));
        }
        break;
      case LayerKind::kMaxPool:
        if (spec.kernel_h == 0 || spec.kernel_w == 0) {
          fail(spec.id, "kernel sizes must be >= 1");
        }
        check_stride();
        info.out_h = spatial_out(spec, src.out_h, spec.kernel_h);
        info.out_w = spatial_out(spec, src.out_w, spec.kernel_w);
        break;
      case LayerKind::kGlobalAvgPool:
        info.out_h = info.out_w = 1;
        break;
      case LayerKind::kAdd:
        for (std::size_t p : info.inputs) {
          const LayerInfo& other = g.info_[p];
          const std::string& other_id = g.layers_[p].id;
          if (other.out_channels != src.out_channels) {
            fail(spec.id, "channel mismatch between add inputs '" + src_id +
                              "' (" + std::to_string(src.out_channels) +
                              ") and '" + other_id + "' (" +
                              std::to_string(other.out_channels) + ")");
          }
          if (other.out_h != src.out_h || other.out_w != src.out_w ||
              other.downsample_exponent != src.downsample_exponent) {
            fail(spec.id, "spatial mismatch between add inputs '" + src_id +
                              "' and '" + other_id + "'");
          }
        }
        break;
      case LayerKind::kOutput:
        if (output) fail(spec.id, "second output layer");
        output = k;
        break;
      case LayerKind::kRelu:
      case LayerKind::kInput:
        break;
    }
  }
  if (!input) throw InvalidInput("network has no input layer");
  if (!output) throw InvalidInput("network has no output layer");
  g.input_ = *input;
  g.output_ = *output;

  const LayerInfo& in_info = g.info_[g.input_];
  const double in_pixels = static_cast<double>(in_info.out_h * in_info.out_w);
  for (std::size_t k = 0; k < n; ++k) {
    LayerInfo& info = g.info_[k];
    if (k != g.output_ && info.consumers.empty()) {
      fail(g.layers_[k].id, "output is never consumed");
    }
    info.downsample_factor = std::ldexp(1.0, -2 * info.downsample_exponent);
    info.pixel_ratio =
        static_cast<double>(info.out_h * info.out_w) / in_pixels;
  }
  return g;
}

std::optional<std::size_t> NetworkGraph::find(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t NetworkGraph::index_of(std::string_view id) const {
  auto found = find(id);
  if (!found) throw InvalidInput("unknown layer '" + std::string(id) + "'");
  return *found;
}

std::vector<std::size_t> NetworkGraph::weighted_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::kConv ||
        layers_[i].kind == LayerKind::kFullyConnected) {
      out.push_back(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// IR document
// ---------------------------------------------------------------------------

namespace {

std::size_t get_size(const Json& obj, const std::string& layer,
                     const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(layer, std::string("missing field '") + key + "'");
  if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
    fail(layer, std::string("field '") + key + "' must be a non-negative integer");
  }
  return it->get<std::size_t>();
}

std::size_t get_size_or(const Json& obj, const std::string& layer,
                        const char* key, std::size_t fallback) {
  return obj.contains(key) ? get_size(obj, layer, key) : fallback;
}

bool get_bool_or(const Json& obj, const std::string& layer, const char* key,
                 bool fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_boolean()) fail(layer, std::string("field '") + key + "' must be boolean");
  return it->get<bool>();
}

void read_kernel(const Json& obj, LayerSpec& spec) {
  if (obj.contains("kernel")) {
    spec.kernel_h = spec.kernel_w = get_size(obj, spec.id, "kernel");
  } else {
    spec.kernel_h = get_size(obj, spec.id, "kernel_h");
    spec.kernel_w = get_size(obj, spec.id, "kernel_w");
  }
}

LayerSpec parse_layer(const Json& obj, std::size_t position) {
  if (!obj.is_object()) {
    throw InvalidInput("layer #" + std::to_string(position) +
                       " is not an object");
  }
  LayerSpec spec;
  if (!obj.contains("id") || !obj["id"].is_string()) {
    throw InvalidInput("layer #" + std::to_string(position) +
                       " has no string 'id'");
  }
  spec.id = obj["id"].get<std::string>();
  if (!obj.contains("kind") || !obj["kind"].is_string()) {
    fail(spec.id, "missing field 'kind'");
  }
  auto kind = parse_layer_kind(obj["kind"].get<std::string>());
  if (!kind) fail(spec.id, "unknown layer kind '" + obj["kind"].get<std::string>() + "'");
  spec.kind = *kind;

  if (auto it = obj.find("inputs"); it != obj.end()) {
    if (!it->is_array()) fail(spec.id, "'inputs' must be a list");
    for (const auto& ref : *it) {
      if (!ref.is_string()) fail(spec.id, "'inputs' entries must be strings");
      spec.inputs.push_back(ref.get<std::string>());
    }
  }

  switch (spec.kind) {
    case LayerKind::kInput:
      spec.out_channels = get_size(obj, spec.id, "channels");
      spec.height = get_size(obj, spec.id, "height");
      spec.width = get_size(obj, spec.id, "width");
      break;
    case LayerKind::kConv:
      spec.in_channels = get_size(obj, spec.id, "in_channels");
      spec.out_channels = get_size(obj, spec.id, "out_channels");
      read_kernel(obj, spec);
      spec.stride = get_size_or(obj, spec.id, "stride", 1);
      if (obj.contains("padding")) {
        spec.padding = get_size(obj, spec.id, "padding");
      } else if (spec.stride == 1 && spec.kernel_h == spec.kernel_w &&
                 spec.kernel_h % 2 == 1) {
        spec.padding = (spec.kernel_h - 1) / 2;  // "same"
      } else {
        fail(spec.id, "missing field 'padding' (required unless stride 1 with an odd square kernel)");
      }
      spec.bias = get_bool_or(obj, spec.id, "bias", false);
      break;
    case LayerKind::kFullyConnected:
      spec.in_channels = get_size(obj, spec.id, "in_features");
      spec.out_channels = get_size(obj, spec.id, "out_features");
      spec.bias = get_bool_or(obj, spec.id, "bias", true);
      break;
    case LayerKind::kBatchNorm:
      spec.in_channels = spec.out_channels = get_size(obj, spec.id, "channels");
      break;
    case LayerKind::kMaxPool:
      read_kernel(obj, spec);
      spec.stride = get_size_or(obj, spec.id, "stride", 1);
      spec.padding = get_size_or(obj, spec.id, "padding", 0);
      break;
    case LayerKind::kOutput:
    case LayerKind::kRelu:
    case LayerKind::kAdd:
    case LayerKind::kGlobalAvgPool:
      break;
  }
  return spec;
}

Json layer_to_json(const LayerSpec& spec) {
  Json j;
  j["id"] = spec.id;
  j["kind"] = std::string(to_string(spec.kind));
  switch (spec.kind) {
    case LayerKind::kInput:
      j["channels"] = spec.out_channels;
      j["height"] = spec.height;
      j["width"] = spec.width;
      break;
    case LayerKind::kConv:
      j["in_channels"] = spec.in_channels;
      j["out_channels"] = spec.out_channels;
      j["kernel_h"] = spec.kernel_h;
      j["kernel_w"] = spec.kernel_w;
      j["stride"] = spec.stride;
      j["padding"] = spec.padding;
      j["bias"] = spec.bias;
      break;
    case LayerKind::kFullyConnected:
      j["in_features"] = spec.in_channels;
      j["out_features"] = spec.out_channels;
      j["bias"] = spec.bias;
      break;
    case LayerKind::kBatchNorm:
      j["channels"] = spec.in_channels;
      break;
    case LayerKind::kMaxPool:
      j["kernel_h"] = spec.kernel_h;
      j["kernel_w"] = spec.kernel_w;
      j["stride"] = spec.stride;
      j["padding"] = spec.padding;
      break;
    default:
      break;
  }
  if (spec.kind != LayerKind::kInput) j["inputs"] = spec.inputs;
  return j;
}

}  // namespace

NetworkGraph parse_network(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidInput(std::string("IR document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array()) {
    throw InvalidInput("IR document needs a top-level 'layers' list");
  }
  std::string name = doc.value("name", std::string("network"));
  std::vector<LayerSpec> layers;
  std::size_t position = 0;
  for (const auto& obj : doc["layers"]) layers.push_back(parse_layer(obj, position++));
  return NetworkGraph::build(std::move(name), std::move(layers));
}

NetworkGraph load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open IR file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_network(buffer.str());
}

std::string serialize_network(const NetworkGraph& graph) {
  Json doc;
  doc["name"] = graph.name();
  doc["layers"] = Json::array();
  for (const auto& spec : graph.layers()) doc["layers"].push_back(layer_to_json(spec));
  return doc.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// Bundled architectures
// ---------------------------------------------------------------------------

namespace {

class IrBuilder {
 public:
  explicit IrBuilder(std::string name) { doc_["name"] = std::move(name); }

  void input(std::size_t channels, std::size_t hw) {
    doc_["layers"].push_back(
        {{"id", "input"}, {"kind", "input"}, {"channels", channels},
         {"height", hw}, {"width", hw}});
    last_ = "input";
  }

  // conv + batchnorm (+ relu); returns the id of the last layer emitted
  std::string conv_bn(const std::string& id, const std::string& from,
                      std::size_t cin, std::size_t cout, std::size_t k,
                      std::size_t stride, bool relu) {
    doc_["layers"].push_back({{"id", id},
                              {"kind", "conv"},
                              {"in_channels", cin},
                              {"out_channels", cout},
                              {"kernel_h", k},
                              {"kernel_w", k},
                              {"stride", stride},
                              {"padding", (k - 1) / 2},
                              {"bias", false},
                              {"inputs", Json::array({from})}});
    doc_["layers"].push_back({{"id", id + "_bn"},
                              {"kind", "batchnorm"},
                              {"channels", cout},
                              {"inputs", Json::array({id})}});
    last_ = id + "_bn";
    if (relu) last_ = this->relu(id + "_relu", last_);
    return last_;
  }

  std::string relu(const std::string& id, const std::string& from) {
    doc_["layers"].push_back({{"id", id}, {"kind", "relu"}, {"inputs", Json::array({from})}});
    return last_ = id;
  }

  std::string add(const std::string& id, const std::string& a,
                  const std::string& b) {
    doc_["layers"].push_back({{"id", id}, {"kind", "add"}, {"inputs", Json::array({a, b})}});
    return last_ = id;
  }

  std::string max_pool(const std::string& id, const std::string& from) {
    doc_["layers"].push_back({{"id", id},
                              {"kind", "max_pool"},
                              {"kernel_h", 3},
                              {"kernel_w", 3},
                              {"stride", 2},
                              {"padding", 1},
                              {"inputs", Json::array({from})}});
    return last_ = id;
  }

  void head(std::size_t features, std::size_t classes) {
    doc_["layers"].push_back(
        {{"id", "gap"}, {"kind", "global_avg_pool"}, {"inputs", Json::array({last_})}});
    doc_["layers"].push_back({{"id", "fc"},
                              {"kind", "fc"},
                              {"in_features", features},
                              {"out_features", classes},
                              {"bias", true},
                              {"inputs", Json::array({"gap"})}});
    doc_["layers"].push_back(
        {{"id", "output"}, {"kind", "output"}, {"inputs", Json::array({"fc"})}});
  }

  std::string text() const { return doc_.dump(1) + "\n"; }

 private:
  Json doc_ = {{"name", ""}, {"layers", Json::array()}};
  std::string last_;
};

std::string block_prefix(int layer, int block) {
  return "l" + std::to_string(layer) + "b" + std::to_string(block);
}

std::string resnet50_text() {
  IrBuilder b("resnet50");
  b.input(3, 224);
  b.conv_bn("c0", "input", 3, 64, 7, 2, true);
  std::string x = b.max_pool("pool", "c0_relu");
  const std::size_t widths[] = {64, 128, 256, 512};
  const int blocks[] = {3, 4, 6, 3};
  std::size_t channels = 64;
  for (int l = 1; l <= 4; ++l) {
    const std::size_t w = widths[l - 1];
    for (int k = 1; k <= blocks[l - 1]; ++k) {
      const std::string p = block_prefix(l, k);
      const std::size_t stride = (k == 1 && l > 1) ? 2 : 1;
      std::string shortcut = x;
      if (k == 1) shortcut = b.conv_bn(p + "d", x, channels, 4 * w, 1, stride, false);
      b.conv_bn(p + "c1", x, channels, w, 1, 1, true);
      b.conv_bn(p + "c2", p + "c1_relu", w, w, 3, stride, true);
      std::string branch = b.conv_bn(p + "c3", p + "c2_relu", w, 4 * w, 1, 1, false);
      b.add(p + "_add", branch, shortcut);
      x = b.relu(p + "_relu", p + "_add");
      channels = 4 * w;
    }
  }
  b.head(2048, 1000);
  return b.text();
}

std::string toy_resnet_text() {
  IrBuilder b("toy-resnet");
  b.input(3, 16);
  std::string x = b.conv_bn("c0", "input", 3, 8, 3, 1, true);
  const std::size_t widths[] = {8, 16, 32};
  std::size_t channels = 8;
  for (int l = 1; l <= 3; ++l) {
    const std::size_t w = widths[l - 1];
    for (int k = 1; k <= 2; ++k) {
      const std::string p = block_prefix(l, k);
      const std::size_t stride = (k == 1 && l > 1) ? 2 : 1;
      std::string shortcut = x;
      if (k == 1 && l > 1) shortcut = b.conv_bn(p + "d", x, channels, w, 1, stride, false);
      b.conv_bn(p + "c1", x, channels, w, 3, stride, true);
      std::string branch = b.conv_bn(p + "c2", p + "c1_relu", w, w, 3, 1, false);
      b.add(p + "_add", branch, shortcut);
      x = b.relu(p + "_relu", p + "_add");
      channels = w;
    }
  }
  b.head(32, 10);
  return b.text();
}

}  // namespace

std::vector<std::string> builtin_names() { return {"resnet50", "toy-resnet"}; }

std::string builtin_description(std::string_view name) {
  if (name == "resnet50") return resnet50_text();
  if (name == "toy-resnet") return toy_resnet_text();
  throw InvalidInput("unknown builtin network '" + std::string(name) + "'");
}

NetworkGraph builtin_graph(std::string_view name) {
  return parse_network(builtin_description(name));
}

NetworkGraph with_input_size(const NetworkGraph& graph, std::size_t height,
                             std::size_t width) {
  std::vector<LayerSpec> layers = graph.layers();
  layers[graph.input_index()].height = height;
  layers[graph.input_index()].width = width;
  return NetworkGraph::build(graph.name(), std::move(layers));
}

// ---------------------------------------------------------------------------
// Counters
// ---------------------------------------------------------------------------

std::uint64_t count_flops(const NetworkGraph& graph) {
  std::uint64_t total = 0;
  for (std::size_t i : graph.weighted_layers()) {
    const LayerSpec& spec = graph.layer(i);
    const LayerInfo& info = graph.info(i);
    std::uint64_t macs = static_cast<std::uint64_t>(spec.kernel_h) * spec.kernel_w *
                         spec.in_channels * spec.out_channels;
    if (spec.kind == LayerKind::kConv) macs *= info.out_h * info.out_w;
    total += macs;
  }
  return total;
}

std::uint64_t count_flops(const NetworkGraph& graph, std::size_t input_h,
                          std::size_t input_w) {
  return count_flops(with_input_size(graph, input_h, input_w));
}

std::uint64_t count_params(const NetworkGraph& graph) {
  std::uint64_t total = 0;
  for (std::size_t i : graph.weighted_layers()) {
    const LayerSpec& spec = graph.layer(i);
    total += static_cast<std::uint64_t>(spec.kernel_h) * spec.kernel_w *
             spec.in_channels * spec.out_channels;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

std::string param_key(std::string_view layer, std::string_view param) {
  std::string key(layer);
  key += '.';
  key += param;
  return key;
}

std::map<std::string, Shape> expected_parameters(const NetworkGraph& graph) {
  std::map<std::string, Shape> out;
  for (const LayerSpec& spec : graph.layers()) {
    switch (spec.kind) {
      case LayerKind::kConv:
        out[param_key(spec.id, "weight")] = {spec.out_channels, spec.in_channels,
                                             spec.kernel_h, spec.kernel_w};
        if (spec.bias) out[param_key(spec.id, "bias")] = {spec.out_channels};
        break;
      case LayerKind::kFullyConnected:
        out[param_key(spec.id, "weight")] = {spec.out_channels, spec.in_channels};
        if (spec.bias) out[param_key(spec.id, "bias")] = {spec.out_channels};
        break;
      case LayerKind::kBatchNorm:
        for (const char* p : {"gamma", "beta", "running_mean", "running_var"}) {
          out[param_key(spec.id, p)] = {spec.in_channels};
        }
        break;
      default:
        break;
    }
  }
  return out;
}

void check_weights(const NetworkGraph& graph, const WeightStore& weights) {
  const auto expected = expected_parameters(graph);
  for (const auto& [key, shape] : expected) {
    auto it = weights.find(key);
    if (it == weights.end()) throw InvalidInput("missing weight array '" + key + "'");
    if (it->second.shape != shape) {
      throw InvalidInput("weight array '" + key + "' has shape " +
                         shape_to_string(it->second.shape) + ", expected " +
                         shape_to_string(shape));
    }
  }
  for (const auto& [key, tensor] : weights) {
    if (!expected.contains(key)) {
      throw InvalidInput("unexpected weight array '" + key + "'");
    }
  }
}

WeightStore init_weights(const NetworkGraph& graph, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightStore out;
  for (const auto& [key, shape] : expected_parameters(graph)) {
    out.emplace(key, Tensor(shape));
  }
  for (const LayerSpec& spec : graph.layers()) {
    if (spec.kind == LayerKind::kConv || spec.kind == LayerKind::kFullyConnected) {
      Tensor& w = out.at(param_key(spec.id, "weight"));
      const double fan_in =
          static_cast<double>(spec.in_channels * spec.kernel_h * spec.kernel_w);
      std::normal_distribution<double> dist(0.0, fan_in > 0 ? std::sqrt(2.0 / fan_in) : 0.0);
      for (double& v : w.data) v = dist(rng);
    } else if (spec.kind == LayerKind::kBatchNorm) {
      for (double& v : out.at(param_key(spec.id, "gamma")).data) v = 1.0;
      for (double& v : out.at(param_key(spec.id, "running_var")).data) v = 1.0;
    }
  }
  return out;
}

Tensor forward(const NetworkGraph& graph, WeightStore& weights,
               const Tensor& batch, Mode mode) {
  Executor exec(graph);
  return exec.forward(weights, batch, mode);
}

Tensor forward(const NetworkGraph& graph, const WeightStore& weights,
               const Tensor& batch) {
  Executor exec(graph);
  return exec.forward(weights, batch);
}

}  // namespace gator
