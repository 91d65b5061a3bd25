#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "gator/cost_model.hpp"
#include "gator/hypergraph.hpp"
#include "gator/network_ir.hpp"

namespace gator {

struct ProfileConfig {
  std::size_t warmup = 2;
  std::size_t repeats = 5;
  std::size_t batch = 8;
  std::size_t height = 0;  // 0 = the IR's input size
  std::size_t width = 0;
  std::uint64_t seed = 1;

  void validate() const;  // warmup >= 2, repeats >= 5, batch >= 1
};

// Median of the values (mean of the middle pair for even counts).
double median(std::vector<double> values);

// Seconds for one eval-mode forward pass of `weights` on `batch`: `warmup`
// untimed runs, then the median of `repeats` timed ones.
double time_forward(const NetworkGraph& g, const WeightStore& weights, const Tensor& batch,
                    std::size_t warmup, std::size_t repeats);

// Original network and, per prunable edge, a variant that keeps the lowest
// ceil(c_j / 2) channel indices of that edge only. Weights are seeded He
// initializations; the input batch is seeded Gaussian noise.
LatencyTable profile_latency(const NetworkGraph& g, const ProfileConfig& config);

}  // namespace gator
