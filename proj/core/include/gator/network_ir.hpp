#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gator/tensor.hpp"

namespace gator {

enum class LayerKind {
  kInput,
  kOutput,
  kConv,
  kFullyConnected,
  kRelu,
  kBatchNorm,
  kAdd,
  kGlobalAvgPool,
  kMaxPool,
};

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view text);

// One node of the architecture description, as written in the IR document.
// Channel fields are reused across kinds: `fc` stores in/out features in
// in_channels/out_channels, `batchnorm` stores its channel count in both, and
// `input` stores the image channel count in out_channels.
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::kRelu;
  std::vector<std::string> inputs;

  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;

  // input layer only
  std::size_t height = 0;
  std::size_t width = 0;

  bool operator==(const LayerSpec&) const = default;
};

// Per-layer facts derived during validation.
struct LayerInfo {
  std::vector<std::size_t> inputs;     // indices of predecessors
  std::vector<std::size_t> consumers;  // indices of successors
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t out_h = 0, out_w = 0;
  // Number of stride-2 operations between the input image and this layer's
  // output (the layer's own stride included).
  int downsample_exponent = 0;
  // 4^-s; equals the output/input pixel ratio for strided spatial layers.
  double downsample_factor = 1.0;
  // Output pixels divided by input-image pixels. Equal to downsample_factor
  // while spatial sizes divide evenly; after global pooling it is 1/(H*W).
  double pixel_ratio = 1.0;
};

// Validated, topologically ordered architecture. Construction is the only
// way to get one, so every instance satisfies the IR invariants.
class NetworkGraph {
 public:
  // Validates and orders `layers`. Throws InvalidInput naming the offending
  // layer on cycles, unknown references, channel or spatial mismatches.
  static NetworkGraph build(std::string name, std::vector<LayerSpec> layers);

  const std::string& name() const { return name_; }
  std::size_t size() const { return layers_.size(); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t index) const { return layers_.at(index); }
  const LayerInfo& info(std::size_t index) const { return info_.at(index); }

  std::optional<std::size_t> find(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;  // throws InvalidInput

  std::size_t input_index() const { return input_; }
  std::size_t output_index() const { return output_; }

  // Indices of all conv and fully-connected layers in topological order.
  std::vector<std::size_t> weighted_layers() const;

  bool operator==(const NetworkGraph& other) const {
    return name_ == other.name_ && layers_ == other.layers_;
  }

 private:
  std::string name_;
  std::vector<LayerSpec> layers_;
  std::vector<LayerInfo> info_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::size_t input_ = 0;
  std::size_t output_ = 0;
};

// IR document (JSON text) <-> graph. The serializer is deterministic and
// emits layers in topological order with a fixed key order.
NetworkGraph parse_network(std::string_view text);
NetworkGraph load_network(const std::string& path);
std::string serialize_network(const NetworkGraph& graph);

// Bundled architectures: "resnet50" and "toy-resnet".
NetworkGraph builtin_graph(std::string_view name);
std::string builtin_description(std::string_view name);
std::vector<std::string> builtin_names();

// Same architecture with a different input resolution.
NetworkGraph with_input_size(const NetworkGraph& graph, std::size_t height,
                             std::size_t width);

// Multiply-accumulate count of one forward pass (convs + fully-connected).
std::uint64_t count_flops(const NetworkGraph& graph);
std::uint64_t count_flops(const NetworkGraph& graph, std::size_t input_h,
                          std::size_t input_w);
// Conv and fully-connected weights only; biases and batchnorm excluded.
std::uint64_t count_params(const NetworkGraph& graph);

// Named parameter arrays. Keys are "<layer>.<param>":
//   conv: weight [out,in,kh,kw], bias [out] (if enabled)
//   fc: weight [out,in], bias [out] (if enabled)
//   batchnorm: gamma, beta, running_mean, running_var [c]
using WeightStore = std::map<std::string, Tensor>;

std::string param_key(std::string_view layer, std::string_view param);

// All parameter keys the graph requires, with their shapes.
std::map<std::string, Shape> expected_parameters(const NetworkGraph& graph);

// Throws InvalidInput if any array is missing, extra or mis-shaped.
void check_weights(const NetworkGraph& graph, const WeightStore& weights);

// He-normal conv/fc weights, zero biases, identity batchnorm.
WeightStore init_weights(const NetworkGraph& graph, std::uint64_t seed);

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

enum class Mode { kTrain, kEval };

// Reference interpreter. Train mode uses batch statistics and updates the
// batchnorm running statistics in `weights`.
Tensor forward(const NetworkGraph& graph, WeightStore& weights,
               const Tensor& batch, Mode mode);
Tensor forward(const NetworkGraph& graph, const WeightStore& weights,
               const Tensor& batch);  // eval mode

}  // namespace gator
