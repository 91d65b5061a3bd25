#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gator/cost_model.hpp"
#include "gator/dataset.hpp"
#include "gator/executor.hpp"
#include "gator/gating.hpp"
#include "gator/hypergraph.hpp"
#include "gator/network_ir.hpp"

namespace gator {

// Piecewise-constant learning rate: `rate` applies from `epoch` onwards.
struct RateStep {
  std::size_t epoch = 0;
  double rate = 0.0;
  bool operator==(const RateStep&) const = default;
};

double rate_at(const std::vector<RateStep>& schedule, std::size_t epoch);

struct TrainingConfig {
  std::vector<double> alpha_schedule{1.0};
  double gamma = 1.0;
  // When non-empty, `train` calibrates gamma over these first.
  std::vector<double> gamma_candidates;
  std::size_t calibration_epochs = 2;
  double self_prune_ceiling = 0.05;

  // Plain training before the first pruning iteration (0 = start from the
  // given weights).
  std::size_t pretrain_epochs = 0;
  std::vector<RateStep> pretrain_lr{{0, 0.05}};
  std::size_t gating_epochs = 30;
  std::vector<RateStep> gating_lr{{0, 0.01}, {20, 0.001}};
  std::size_t finetune_epochs = 20;
  std::vector<RateStep> finetune_lr{{0, 0.001}};

  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  ObjectiveKind objective = ObjectiveKind::kFlops;
  std::string latency_table;  // path, latency objective only
  double p_gate = 0.005;
  double temperature = 1.0;
  Granularity granularity = Granularity::kPerSample;
  bool reinit_gates = false;
  bool augment = true;
  std::uint64_t seed = 1;

  void validate() const;  // throws InvalidInput
  bool operator==(const TrainingConfig&) const = default;
};

// JSON object with one key per field; missing keys keep their defaults,
// unknown keys are rejected.
TrainingConfig parse_config(std::string_view text);
TrainingConfig load_config(const std::string& path);
std::string serialize_config(const TrainingConfig& config);

// Independent generator for one named purpose ("data", "augment", "gates")
// of one phase, so that resuming at any phase reproduces the same draws.
std::mt19937_64 make_stream(std::uint64_t seed, std::size_t iteration,
                            std::string_view phase, std::string_view name);

struct CrossEntropy {
  double loss = 0.0;      // mean over the batch
  Tensor grad;            // d loss / d logits
  std::size_t correct = 0;
};

CrossEntropy cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

// Network and cost model bound together.
struct PruningProblem {
  const NetworkGraph* graph = nullptr;
  const DependencyHypergraph* hypergraph = nullptr;
  const CostModel* cost = nullptr;
};

// Channels counted as present when recomputing lambda: not pruned and
// sigma(theta) >= 0.5. Frozen edges are always full.
ChannelCounts deterministic_counts(const DependencyHypergraph& h, const GateState& gates);
// Surviving (not permanently pruned) channels per edge.
ChannelCounts alive_counts(const DependencyHypergraph& h, const GateState& gates);

// MACs / weights of the network that remains after removing pruned channels.
std::uint64_t effective_flops(const NetworkGraph& g, const DependencyHypergraph& h,
                              const ChannelCounts& counts);
std::uint64_t effective_params(const NetworkGraph& g, const DependencyHypergraph& h,
                               const ChannelCounts& counts);

struct GradientSet {
  WeightStore weights;  // same keys as the trainable parameters
  // Per gate slot and channel; the full theta gradient is their sum.
  std::vector<std::vector<double>> theta_task;
  std::vector<std::vector<double>> theta_pruning;
};

struct StepLoss {
  double original = 0.0;       // cross-entropy
  double computational = 0.0;  // sum_j c_j(t) lambda_hat_j(t) of this draw
  double total = 0.0;          // original + alpha * computational
  std::size_t correct = 0;
};

struct BackwardResult {
  StepLoss loss;
  GradientSet grads;
};

// One gated forward/backward pass in train mode. c_j(t) is the number of
// open gates of edge j averaged over the draw's rows; the pruning gradient
// of channel i is alpha * lambda_hat_j * mean_r sigma'((theta_i + x_ri)/tau)/tau.
BackwardResult backward(const PruningProblem& p, Executor& exec, WeightStore& weights,
                        const GateState& gates, const GateDraw& draw, const Tensor& batch,
                        const std::vector<std::size_t>& labels, const CostFactors& factors,
                        double alpha, bool update_running_stats = true);

// eta_j = gamma * eta / lambda_hat_j. Throws InvalidInput for lambda_hat <= 0.
double edge_learning_rate(double eta, double gamma, double lambda_hat);

// Signed changes applied to the gate logits, split into the task-loss and
// pruning-loss parts. Edges with lambda_hat = 0 are left out and listed.
struct ThetaUpdate {
  std::vector<std::vector<double>> task;
  std::vector<std::vector<double>> pruning;
  std::vector<std::size_t> skipped_edges;
};

ThetaUpdate theta_update(const GateState& gates, const GradientSet& grads,
                         const CostFactors& factors, double eta, double gamma,
                         bool adjust = true);

// SGD with momentum and L2 weight decay for the network weights:
//   v <- momentum * v + (g + decay * w);  w <- w - eta * v
class MomentumSgd {
 public:
  MomentumSgd(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(WeightStore& weights, const WeightStore& grads, double eta);
  void reset() { velocity_.clear(); }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<double>> velocity_;
};

// Weights through the optimizer, gate logits with plain SGD at eta_j.
// Returns the edges whose logits were not updated.
std::vector<std::size_t> sgd_step(WeightStore& weights, GateState& gates,
                                  const GradientSet& grads, const CostFactors& factors,
                                  MomentumSgd& optimizer, double eta, double gamma);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Eval-mode forward with pruned channels held at zero.
Evaluation evaluate(const PruningProblem& p, const WeightStore& weights, const GateState& gates,
                    const Dataset& data, std::size_t batch_size);

enum class PhaseKind { kPretrain, kGating, kFinetune };
std::string_view to_string(PhaseKind kind);

struct LogRecord {
  std::size_t iteration = 0;
  PhaseKind phase = PhaseKind::kGating;
  std::size_t epoch = 0;
  double alpha = 0.0;
  double learning_rate = 0.0;
  double original_loss = 0.0;
  double computational_loss = 0.0;
  double total_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
  std::size_t pruned_total = 0;
  std::vector<std::size_t> pruned_per_edge;  // parallel to the prunable edges
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  std::size_t skipped_theta_updates = 0;

  bool operator==(const LogRecord&) const = default;
};

// Append-only run log, one JSON object per line.
struct PruningRunLog {
  std::vector<LogRecord> records;

  std::string to_jsonl() const;
  static PruningRunLog from_jsonl(std::string_view text);
  bool operator==(const PruningRunLog&) const = default;
};

std::string log_line(const LogRecord& record);

struct PhaseSettings {
  PhaseKind kind = PhaseKind::kGating;
  std::size_t iteration = 0;
  double alpha = 0.0;
  double gamma = 1.0;
  std::size_t epochs = 0;
  std::vector<RateStep> learning_rate;
};

// Receives each log record as soon as its epoch finishes.
using RecordSink = std::function<void(const LogRecord&)>;

// Runs one phase in place on (weights, gates) and appends a record per
// epoch to `log`. Gating: stochastic gates, cost loss, theta updates and
// prune_check every step. Finetune / pretrain: task loss only, surviving
// channels fully open, pruned ones zero, theta untouched.
void run_phase(const PruningProblem& p, const PhaseSettings& phase, WeightStore& weights,
               GateState& gates, const DataSplits& data, const TrainingConfig& config,
               PruningRunLog& log, const RecordSink& on_record = {});

// Called after each phase with a tag such as "iter1-gating".
using CheckpointSink =
    std::function<void(const std::string& tag, const WeightStore& weights, const GateState& gates)>;

struct PruningResult {
  WeightStore weights;  // finetuned weights of the last iteration
  GateState gates;
  PruningRunLog log;
};

// For each alpha: gating phase, then finetune on a copy; the next iteration
// continues from the gating-phase weights. `first_iteration` > 1 resumes
// with (weights, gates) taken from iteration first_iteration - 1's gating
// checkpoint. An empty schedule returns the inputs unchanged.
PruningResult run_iterative_pruning(const PruningProblem& p, WeightStore weights, GateState gates,
                                    const DataSplits& data, const TrainingConfig& config,
                                    const CheckpointSink& sink = {},
                                    std::size_t first_iteration = 1,
                                    const RecordSink& on_record = {});

struct CalibrationEntry {
  double gamma = 0.0;
  double self_pruned_fraction = 0.0;
};

struct CalibrationReport {
  std::vector<CalibrationEntry> entries;
  double chosen = 0.0;
};

// Largest gamma whose self-pruned fraction is within `ceiling`. Throws
// RuntimeFailure listing every fraction if there is none.
double choose_gamma(const std::vector<CalibrationEntry>& entries, double ceiling);

// Short alpha = 0 gating run per candidate from the same weights and fresh
// gates; picks the largest gamma whose self-pruned fraction stays within
// config.self_prune_ceiling. Throws RuntimeFailure if none does.
CalibrationReport calibrate_gamma(const PruningProblem& p, const WeightStore& weights,
                                  const DataSplits& data, const TrainingConfig& config,
                                  const std::vector<double>& candidates);

}  // namespace gator
