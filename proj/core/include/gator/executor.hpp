#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "gator/network_ir.hpp"
#include "gator/tensor.hpp"

namespace gator {

// Hook that multiplies selected layer outputs by channel masks. The executor
// keeps the pre-mask activation so backprop() can route gradients both to
// the data path and to whatever parameters produced the mask.
class ActivationGate {
 public:
  virtual ~ActivationGate() = default;
  virtual bool gates(std::size_t layer) const = 0;
  virtual Tensor apply(std::size_t layer, const Tensor& activation) const = 0;
  // Returns d loss / d pre-mask activation given d loss / d masked output.
  virtual Tensor backprop(std::size_t layer, const Tensor& upstream,
                          const Tensor& activation) = 0;
};

struct ForwardOptions {
  Mode mode = Mode::kEval;
  // Train mode only: fold batch statistics into the running statistics.
  bool update_running_stats = true;
  ActivationGate* gate = nullptr;
};

// Layer-by-layer interpreter with a reverse pass. Activations of the last
// forward call are retained for backward() and rerun_from().
class Executor {
 public:
  explicit Executor(const NetworkGraph& graph) : graph_(&graph) {}

  Tensor forward(WeightStore& weights, const Tensor& batch,
                 const ForwardOptions& options);
  Tensor forward(WeightStore& weights, const Tensor& batch, Mode mode) {
    return forward(weights, batch, ForwardOptions{mode, true, nullptr});
  }
  Tensor forward(const WeightStore& weights, const Tensor& batch);  // eval

  // Recomputes layers [first, end) from cached activations, e.g. after
  // perturbing one parameter of layer `first`. Running statistics are not
  // updated.
  Tensor rerun_from(WeightStore& weights, std::size_t first,
                    const ForwardOptions& options);

  // Gradients of the loss w.r.t. every parameter (keys as in WeightStore,
  // running statistics excluded), given d loss / d output.
  WeightStore backward(const WeightStore& weights, const Tensor& grad_output);

  const Tensor& activation(std::size_t layer) const { return outputs_.at(layer); }

 private:
  void run_layer(WeightStore& weights, std::size_t i,
                 const ForwardOptions& options);

  struct BatchNormCache {
    std::vector<double> inv_std;
    Tensor normalized;
    bool batch_stats = false;
  };

  const NetworkGraph* graph_;
  ActivationGate* gate_ = nullptr;
  std::vector<Tensor> outputs_;   // post-gate
  std::vector<Tensor> pre_gate_;  // only for gated layers
  std::vector<BatchNormCache> bn_;
  std::vector<std::vector<std::size_t>> argmax_;  // max-pool routing
};

// Kernels shared with the pruning and profiling code.
namespace kernels {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              std::size_t stride, std::size_t padding);
// Accumulates into grad_weight / grad_bias; returns the input gradient.
Tensor conv2d_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, std::size_t stride,
                       std::size_t padding, Tensor& grad_weight,
                       Tensor* grad_bias);

}  // namespace kernels

}  // namespace gator
