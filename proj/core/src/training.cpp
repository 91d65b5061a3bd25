#include "gator/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "gator/error.hpp"

namespace gator {

using Json = nlohmann::ordered_json;

double rate_at(const std::vector<RateStep>& schedule, std::size_t epoch) {
  double rate = schedule.empty() ? 0.0 : schedule.front().rate;
  for (const RateStep& s : schedule) {
    if (s.epoch <= epoch) rate = s.rate;
  }
  return rate;
}

// ---------------------------------------------------------------------------
// Config

void TrainingConfig::validate() const {
  auto fail = [](const std::string& msg) { throw InvalidInput("config: " + msg); };
  for (std::size_t i = 0; i < alpha_schedule.size(); ++i) {
    if (!(alpha_schedule[i] >= 0.0)) fail("alpha must be >= 0");
    if (i > 0 && alpha_schedule[i] < alpha_schedule[i - 1]) fail("alpha schedule must be non-decreasing");
  }
  if (!(gamma > 0.0)) fail("gamma must be > 0");
  for (double g : gamma_candidates) {
    if (!(g > 0.0)) fail("gamma candidates must be > 0");
  }
  if (!(self_prune_ceiling >= 0.0 && self_prune_ceiling <= 1.0)) fail("self_prune_ceiling must lie in [0, 1]");
  for (const auto* lr : {&pretrain_lr, &gating_lr, &finetune_lr}) {
    if (lr->empty()) fail("learning-rate schedules need at least one step");
    for (std::size_t i = 0; i < lr->size(); ++i) {
      if (!((*lr)[i].rate > 0.0)) fail("learning rates must be > 0");
      if (i > 0 && (*lr)[i].epoch <= (*lr)[i - 1].epoch) fail("learning-rate steps must have increasing epochs");
    }
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(p_gate > 0.0 && p_gate < 0.5)) fail("p_gate must lie in (0, 0.5)");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
  if (objective == ObjectiveKind::kLatency && latency_table.empty()) {
    fail("the latency objective needs latency_table");
  }
}

namespace {

Json rates_to_json(const std::vector<RateStep>& steps) {
  Json out = Json::array();
  for (const RateStep& s : steps) out.push_back(Json::array({s.epoch, s.rate}));
  return out;
}

std::vector<RateStep> rates_from_json(const Json& j, const std::string& key) {
  if (!j.is_array()) throw InvalidInput("config: '" + key + "' must be a list of [epoch, rate]");
  std::vector<RateStep> out;
  for (const Json& item : j) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_number_unsigned() || !item[1].is_number()) {
      throw InvalidInput("config: '" + key + "' entries must be [epoch, rate]");
    }
    out.push_back({item[0].get<std::size_t>(), item[1].get<double>()});
  }
  return out;
}

template <typename T>
T get_field(const Json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidInput("config: bad value for '" + key + "'");
  }
}

}  // namespace

std::string serialize_config(const TrainingConfig& c) {
  Json j;
  j["alpha_schedule"] = c.alpha_schedule;
  j["gamma"] = c.gamma;
  j["gamma_candidates"] = c.gamma_candidates;
  j["calibration_epochs"] = c.calibration_epochs;
  j["self_prune_ceiling"] = c.self_prune_ceiling;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["pretrain_lr"] = rates_to_json(c.pretrain_lr);
  j["gating_epochs"] = c.gating_epochs;
  j["gating_lr"] = rates_to_json(c.gating_lr);
  j["finetune_epochs"] = c.finetune_epochs;
  j["finetune_lr"] = rates_to_json(c.finetune_lr);
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["objective"] = std::string(to_string(c.objective));
  j["latency_table"] = c.latency_table;
  j["p_gate"] = c.p_gate;
  j["temperature"] = c.temperature;
  j["granularity"] = std::string(to_string(c.granularity));
  j["reinit_gates"] = c.reinit_gates;
  j["augment"] = c.augment;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

TrainingConfig parse_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw InvalidInput("config: top level must be an object");
  TrainingConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha_schedule") c.alpha_schedule = get_field<std::vector<double>>(v, key);
    else if (key == "gamma") c.gamma = get_field<double>(v, key);
    else if (key == "gamma_candidates") c.gamma_candidates = get_field<std::vector<double>>(v, key);
    else if (key == "calibration_epochs") c.calibration_epochs = get_field<std::size_t>(v, key);
    else if (key == "self_prune_ceiling") c.self_prune_ceiling = get_field<double>(v, key);
    else if (key == "pretrain_epochs") c.pretrain_epochs = get_field<std::size_t>(v, key);
    else if (key == "pretrain_lr") c.pretrain_lr = rates_from_json(v, key);
    else if (key == "gating_epochs") c.gating_epochs = get_field<std::size_t>(v, key);
    else if (key == "gating_lr") c.gating_lr = rates_from_json(v, key);
    else if (key == "finetune_epochs") c.finetune_epochs = get_field<std::size_t>(v, key);
    else if (key == "finetune_lr") c.finetune_lr = rates_from_json(v, key);
    else if (key == "momentum") c.momentum = get_field<double>(v, key);
    else if (key == "weight_decay") c.weight_decay = get_field<double>(v, key);
    else if (key == "batch_size") c.batch_size = get_field<std::size_t>(v, key);
    else if (key == "objective") c.objective = parse_objective(get_field<std::string>(v, key));
    else if (key == "latency_table") c.latency_table = get_field<std::string>(v, key);
    else if (key == "p_gate") c.p_gate = get_field<double>(v, key);
    else if (key == "temperature") c.temperature = get_field<double>(v, key);
    else if (key == "granularity") c.granularity = parse_granularity(get_field<std::string>(v, key));
    else if (key == "reinit_gates") c.reinit_gates = get_field<bool>(v, key);
    else if (key == "augment") c.augment = get_field<bool>(v, key);
    else if (key == "seed") c.seed = get_field<std::uint64_t>(v, key);
    else throw InvalidInput("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainingConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

// ---------------------------------------------------------------------------

std::mt19937_64 make_stream(std::uint64_t seed, std::size_t iteration, std::string_view phase,
                            std::string_view name) {
  // FNV-1a keeps the name hashing independent of the standard library
  auto fnv = [](std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char ch : s) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
    return h;
  };
  const std::uint64_t parts[] = {seed, iteration, fnv(phase), fnv(name)};
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

CrossEntropy cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t n = logits.n(), k = logits.c();
  if (labels.size() != n || logits.h() != 1 || logits.w() != 1) {
    throw InvalidInput("cross entropy: logits " + shape_to_string(logits.shape) + " vs " +
                       std::to_string(labels.size()) + " labels");
  }
  CrossEntropy out;
  out.grad = Tensor(logits.shape);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] >= k) throw InvalidInput("cross entropy: label out of range");
    const double* z = logits.data.data() + b * k;
    const double top = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(z[c] - top);
    const double log_sum = top + std::log(sum);
    out.loss += (log_sum - z[labels[b]]) * inv_n;
    std::size_t best = 0;
    for (std::size_t c = 0; c < k; ++c) {
      out.grad.data[b * k + c] = std::exp(z[c] - log_sum) * inv_n;
      if (z[c] > z[best]) best = c;
    }
    out.grad.data[b * k + labels[b]] -= inv_n;
    out.correct += best == labels[b];
  }
  return out;
}

ChannelCounts deterministic_counts(const DependencyHypergraph& h, const GateState& gates) {
  ChannelCounts counts = full_counts(h);
  for (const EdgeGates& e : gates.edges) {
    std::size_t n = 0;
    for (std::size_t c = 0; c < e.theta.size(); ++c) n += !e.pruned[c] && e.theta[c] >= 0.0;
    counts.at(e.edge) = n;
  }
  return counts;
}

ChannelCounts alive_counts(const DependencyHypergraph& h, const GateState& gates) {
  ChannelCounts counts = full_counts(h);
  for (const EdgeGates& e : gates.edges) counts.at(e.edge) = e.alive();
  return counts;
}

namespace {

template <bool kMacs>
std::uint64_t effective_total(const NetworkGraph& g, const DependencyHypergraph& h,
                              const ChannelCounts& counts) {
  std::uint64_t total = 0;
  for (std::size_t i : g.weighted_layers()) {
    const LayerSpec& s = g.layer(i);
    std::uint64_t term = static_cast<std::uint64_t>(s.kernel_h * s.kernel_w) *
                         counts.at(h.edge_of_input(i)) * counts.at(h.edge_of_output(i));
    if constexpr (kMacs) term *= g.info(i).out_h * g.info(i).out_w;
    total += term;
  }
  return total;
}

void check_finite(const NetworkGraph& g, const Executor& exec, double loss) {
  if (std::isfinite(loss)) return;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (double v : exec.activation(i).data) {
      if (!std::isfinite(v)) {
        throw RuntimeFailure("non-finite loss: first non-finite activation at layer '" +
                             g.layer(i).id + "'");
      }
    }
  }
  throw RuntimeFailure("non-finite loss (activations finite; check weights and labels)");
}

}  // namespace

std::uint64_t effective_flops(const NetworkGraph& g, const DependencyHypergraph& h,
                              const ChannelCounts& counts) {
  return effective_total<true>(g, h, counts);
}

std::uint64_t effective_params(const NetworkGraph& g, const DependencyHypergraph& h,
                               const ChannelCounts& counts) {
  return effective_total<false>(g, h, counts);
}

BackwardResult backward(const PruningProblem& p, Executor& exec, WeightStore& weights,
                        const GateState& gates, const GateDraw& draw, const Tensor& batch,
                        const std::vector<std::size_t>& labels, const CostFactors& factors,
                        double alpha, bool update_running_stats) {
  if (factors.edges.size() != gates.edges.size()) {
    throw InvalidInput("cost factors cover " + std::to_string(factors.edges.size()) +
                       " edges, gate state " + std::to_string(gates.edges.size()));
  }
  NetworkGates hook(*p.graph, *p.hypergraph, gates, draw);
  Tensor logits = exec.forward(weights, batch, ForwardOptions{Mode::kTrain, update_running_stats, &hook});
  CrossEntropy ce = cross_entropy(logits, labels);
  check_finite(*p.graph, exec, ce.loss);

  BackwardResult out;
  out.grads.weights = exec.backward(weights, ce.grad);
  out.grads.theta_task = hook.theta_gradients();

  // c_j(t) and its surrogate gradient
  std::vector<double> gate_sums(gates.edges.size(), 0.0);
  out.grads.theta_pruning.resize(gates.edges.size());
  const double tau = gates.temperature;
  for (std::size_t k = 0; k < gates.edges.size(); ++k) {
    const EdgeGates& e = gates.edges[k];
    const EdgeDraw& d = draw.edges[k];
    auto& grad = out.grads.theta_pruning[k];
    grad.assign(e.theta.size(), 0.0);
    const double rows = static_cast<double>(d.rows);
    for (std::size_t c = 0; c < e.theta.size(); ++c) {
      if (e.pruned[c]) continue;
      double open = 0.0, slope = 0.0;
      for (std::size_t r = 0; r < d.rows; ++r) {
        open += d.at_mask(r, c);
        slope += sigmoid_derivative((e.theta[c] + d.at_noise(r, c)) / tau) / tau;
      }
      gate_sums[k] += open / rows;
      grad[c] = alpha * factors.normalized[k] * slope / rows;
    }
  }
  out.loss.original = ce.loss;
  out.loss.computational = computational_loss(gate_sums, factors);
  out.loss.total = ce.loss + alpha * out.loss.computational;
  out.loss.correct = ce.correct;
  return out;
}

double edge_learning_rate(double eta, double gamma, double lambda_hat) {
  if (!(lambda_hat > 0.0)) {
    throw InvalidInput("edge learning rate undefined for a zero cost factor");
  }
  return gamma * eta / lambda_hat;
}

ThetaUpdate theta_update(const GateState& gates, const GradientSet& grads,
                         const CostFactors& factors, double eta, double gamma, bool adjust) {
  ThetaUpdate u;
  u.task.resize(gates.edges.size());
  u.pruning.resize(gates.edges.size());
  for (std::size_t k = 0; k < gates.edges.size(); ++k) {
    const EdgeGates& e = gates.edges[k];
    u.task[k].assign(e.theta.size(), 0.0);
    u.pruning[k].assign(e.theta.size(), 0.0);
    double rate = eta;
    if (adjust) {
      if (!(factors.normalized[k] > 0.0)) {
        u.skipped_edges.push_back(e.edge);
        continue;
      }
      rate = edge_learning_rate(eta, gamma, factors.normalized[k]);
    }
    for (std::size_t c = 0; c < e.theta.size(); ++c) {
      if (e.pruned[c]) continue;
      u.task[k][c] = -rate * grads.theta_task[k][c];
      u.pruning[k][c] = -rate * grads.theta_pruning[k][c];
    }
  }
  return u;
}

void MomentumSgd::step(WeightStore& weights, const WeightStore& grads, double eta) {
  for (const auto& [key, g] : grads) {
    Tensor& w = weights.at(key);
    auto& v = velocity_[key];
    if (v.size() != w.size()) v.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g.data[i] + weight_decay_ * w.data[i];
      w.data[i] -= eta * v[i];
    }
  }
}

std::vector<std::size_t> sgd_step(WeightStore& weights, GateState& gates,
                                  const GradientSet& grads, const CostFactors& factors,
                                  MomentumSgd& optimizer, double eta, double gamma) {
  optimizer.step(weights, grads.weights, eta);
  ThetaUpdate u = theta_update(gates, grads, factors, eta, gamma);
  for (std::size_t k = 0; k < gates.edges.size(); ++k) {
    EdgeGates& e = gates.edges[k];
    for (std::size_t c = 0; c < e.theta.size(); ++c) {
      if (!e.pruned[c]) e.theta[c] += u.task[k][c] + u.pruning[k][c];
    }
  }
  return u.skipped_edges;
}

Evaluation evaluate(const PruningProblem& p, const WeightStore& weights, const GateState& gates,
                    const Dataset& data, std::size_t batch_size) {
  Evaluation out;
  if (data.size() == 0) throw InvalidInput("evaluation split is empty");
  Executor exec(*p.graph);
  const GateDraw draw = open_draw(gates);
  NetworkGates hook(*p.graph, *p.hypergraph, gates, draw);
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t k = i; k < std::min(data.size(), i + batch_size); ++k) idx.push_back(k);
    // eval mode reads the store only
    Tensor logits = exec.forward(const_cast<WeightStore&>(weights), gather_batch(data, idx, nullptr),
                                 ForwardOptions{Mode::kEval, false, &hook});
    CrossEntropy ce = cross_entropy(logits, gather_labels(data, idx));
    correct += ce.correct;
    loss += ce.loss * static_cast<double>(idx.size());
  }
  out.loss = loss / static_cast<double>(data.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

std::string_view to_string(PhaseKind kind) {
  switch (kind) {
    case PhaseKind::kPretrain: return "pretrain";
    case PhaseKind::kGating: return "gating";
    case PhaseKind::kFinetune: return "finetune";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Log

std::string log_line(const LogRecord& r) {
  Json j;
  j["iteration"] = r.iteration;
  j["phase"] = std::string(to_string(r.phase));
  j["epoch"] = r.epoch;
  j["alpha"] = r.alpha;
  j["learning_rate"] = r.learning_rate;
  j["original_loss"] = r.original_loss;
  j["computational_loss"] = r.computational_loss;
  j["total_loss"] = r.total_loss;
  j["train_accuracy"] = r.train_accuracy;
  j["eval_loss"] = r.eval_loss;
  j["eval_accuracy"] = r.eval_accuracy;
  j["pruned_total"] = r.pruned_total;
  j["pruned_per_edge"] = r.pruned_per_edge;
  j["flops"] = r.flops;
  j["params"] = r.params;
  j["skipped_theta_updates"] = r.skipped_theta_updates;
  return j.dump();
}

std::string PruningRunLog::to_jsonl() const {
  std::string out;
  for (const LogRecord& r : records) out += log_line(r) + "\n";
  return out;
}

PruningRunLog PruningRunLog::from_jsonl(std::string_view text) {
  PruningRunLog log;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      Json j = Json::parse(line);
      LogRecord r;
      r.iteration = j.at("iteration").get<std::size_t>();
      const std::string phase = j.at("phase").get<std::string>();
      if (phase == "pretrain") r.phase = PhaseKind::kPretrain;
      else if (phase == "gating") r.phase = PhaseKind::kGating;
      else if (phase == "finetune") r.phase = PhaseKind::kFinetune;
      else throw InvalidInput("unknown phase '" + phase + "'");
      r.epoch = j.at("epoch").get<std::size_t>();
      r.alpha = j.at("alpha").get<double>();
      r.learning_rate = j.at("learning_rate").get<double>();
      r.original_loss = j.at("original_loss").get<double>();
      r.computational_loss = j.at("computational_loss").get<double>();
      r.total_loss = j.at("total_loss").get<double>();
      r.train_accuracy = j.at("train_accuracy").get<double>();
      r.eval_loss = j.at("eval_loss").get<double>();
      r.eval_accuracy = j.at("eval_accuracy").get<double>();
      r.pruned_total = j.at("pruned_total").get<std::size_t>();
      r.pruned_per_edge = j.at("pruned_per_edge").get<std::vector<std::size_t>>();
      r.flops = j.at("flops").get<std::uint64_t>();
      r.params = j.at("params").get<std::uint64_t>();
      r.skipped_theta_updates = j.at("skipped_theta_updates").get<std::size_t>();
      log.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput("run log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Phases

void run_phase(const PruningProblem& p, const PhaseSettings& phase, WeightStore& weights,
               GateState& gates, const DataSplits& data, const TrainingConfig& config,
               PruningRunLog& log, const RecordSink& on_record) {
  if (data.train.size() == 0) throw InvalidInput("training split is empty");
  const bool gating = phase.kind == PhaseKind::kGating;
  const std::string_view name = to_string(phase.kind);
  std::mt19937_64 order = make_stream(config.seed, phase.iteration, name, "data");
  std::mt19937_64 augment = make_stream(config.seed, phase.iteration, name, "augment");
  std::mt19937_64 noise = make_stream(config.seed, phase.iteration, name, "gates");
  MomentumSgd optimizer(config.momentum, config.weight_decay);
  Executor exec(*p.graph);

  for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
    const double eta = rate_at(phase.learning_rate, epoch);
    LogRecord rec;
    rec.iteration = phase.iteration;
    rec.phase = phase.kind;
    rec.epoch = epoch;
    rec.alpha = gating ? phase.alpha : 0.0;
    rec.learning_rate = eta;
    std::size_t seen = 0, correct = 0, steps = 0;
    for (const auto& idx : epoch_batches(data.train.size(), config.batch_size, order)) {
      const Tensor x = gather_batch(data.train, idx, config.augment ? &augment : nullptr);
      const auto y = gather_labels(data.train, idx);
      const CostFactors factors = p.cost->factors(deterministic_counts(*p.hypergraph, gates));
      const GateDraw draw = gating ? sample_gates(gates, noise, idx.size(), config.granularity)
                                   : open_draw(gates);
      BackwardResult r = backward(p, exec, weights, gates, draw, x, y, factors, rec.alpha);
      if (gating) {
        rec.skipped_theta_updates +=
            sgd_step(weights, gates, r.grads, factors, optimizer, eta, phase.gamma).size();
        prune_check(gates);
      } else {
        optimizer.step(weights, r.grads.weights, eta);
      }
      rec.original_loss += r.loss.original;
      rec.computational_loss += r.loss.computational;
      rec.total_loss += r.loss.total;
      correct += r.loss.correct;
      seen += idx.size();
      ++steps;
    }
    rec.original_loss /= static_cast<double>(steps);
    rec.computational_loss /= static_cast<double>(steps);
    rec.total_loss /= static_cast<double>(steps);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    const Evaluation ev = evaluate(p, weights, gates, data.eval, std::max<std::size_t>(config.batch_size, 64));
    rec.eval_loss = ev.loss;
    rec.eval_accuracy = ev.accuracy;
    for (const EdgeGates& e : gates.edges) {
      rec.pruned_per_edge.push_back(e.theta.size() - e.alive());
      rec.pruned_total += rec.pruned_per_edge.back();
    }
    const ChannelCounts alive = alive_counts(*p.hypergraph, gates);
    rec.flops = effective_flops(*p.graph, *p.hypergraph, alive);
    rec.params = effective_params(*p.graph, *p.hypergraph, alive);
    if (on_record) on_record(rec);
    log.records.push_back(std::move(rec));
  }
}

PruningResult run_iterative_pruning(const PruningProblem& p, WeightStore weights, GateState gates,
                                    const DataSplits& data, const TrainingConfig& config,
                                    const CheckpointSink& sink, std::size_t first_iteration,
                                    const RecordSink& on_record) {
  config.validate();
  PruningResult result;
  if (first_iteration < 1) first_iteration = 1;
  WeightStore finetuned = weights;
  for (std::size_t it = first_iteration; it <= config.alpha_schedule.size(); ++it) {
    const double alpha = config.alpha_schedule[it - 1];
    if (config.reinit_gates && it > 1) {
      const double theta = std::log((1.0 - config.p_gate) / config.p_gate);
      for (EdgeGates& e : gates.edges)
        for (std::size_t c = 0; c < e.theta.size(); ++c)
          if (!e.pruned[c]) e.theta[c] = theta;
    }
    run_phase(p, {PhaseKind::kGating, it, alpha, config.gamma, config.gating_epochs, config.gating_lr},
              weights, gates, data, config, result.log, on_record);
    if (sink) sink("iter" + std::to_string(it) + "-gating", weights, gates);
    finetuned = weights;
    GateState frozen = gates;
    run_phase(p, {PhaseKind::kFinetune, it, alpha, config.gamma, config.finetune_epochs,
                  config.finetune_lr},
              finetuned, frozen, data, config, result.log, on_record);
    if (sink) sink("iter" + std::to_string(it) + "-finetune", finetuned, frozen);
  }
  result.weights = config.alpha_schedule.size() >= first_iteration ? std::move(finetuned)
                                                                    : std::move(weights);
  result.gates = std::move(gates);
  return result;
}

double choose_gamma(const std::vector<CalibrationEntry>& entries, double ceiling) {
  std::optional<double> best;
  for (const auto& e : entries) {
    if (e.self_pruned_fraction <= ceiling && (!best || e.gamma > *best)) best = e.gamma;
  }
  if (!best) {
    std::ostringstream msg;
    msg << "gamma calibration: every candidate self-prunes more than " << ceiling * 100
        << "% of channels:";
    for (const auto& e : entries) msg << " " << e.gamma << " -> " << e.self_pruned_fraction * 100 << "%";
    throw RuntimeFailure(msg.str());
  }
  return *best;
}

CalibrationReport calibrate_gamma(const PruningProblem& p, const WeightStore& weights,
                                  const DataSplits& data, const TrainingConfig& config,
                                  const std::vector<double>& candidates) {
  if (candidates.empty()) throw InvalidInput("gamma calibration needs at least one candidate");
  for (double g : candidates) {
    if (!(g > 0.0)) throw InvalidInput("gamma candidates must be > 0");
  }
  CalibrationReport report;
  for (double gamma : candidates) {
    WeightStore w = weights;
    GateState gates = init_gates(*p.hypergraph, config.p_gate);
    gates.temperature = config.temperature;
    PruningRunLog scratch;
    // iteration 0 keeps calibration draws apart from the pruning iterations
    run_phase(p, {PhaseKind::kGating, 0, 0.0, gamma, config.calibration_epochs, config.gating_lr}, w,
              gates, data, config, scratch);
    const double fraction =
        static_cast<double>(gates.pruned_count()) / static_cast<double>(gates.channel_count());
    report.entries.push_back({gamma, fraction});
  }
  report.chosen = choose_gamma(report.entries, config.self_prune_ceiling);
  return report;
}

}  // namespace gator
