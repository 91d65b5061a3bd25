// Acceptance run: one PASS/FAIL line per criterion. Criteria 9-12 drive the
// gator executable and re-measure its outputs independently.
//
//   gator_acceptance [--only N[,N...]] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gator/container.hpp"
#include "gator/cost_model.hpp"
#include "gator/dataset.hpp"
#include "gator/executor.hpp"
#include "gator/gating.hpp"
#include "gator/hypergraph.hpp"
#include "gator/network_ir.hpp"
#include "gator/pruner.hpp"
#include "gator/training.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"
#include "pruning_helpers.hpp"
#include "resnet50_mapping.hpp"

namespace fs = std::filesystem;
using namespace gator;

namespace {

// Tolerances and workload sizes.
constexpr double kMappingSeconds = 1.0;
constexpr double kNormalizationTol = 1e-9;
constexpr std::size_t kGateSamples = 100000;
constexpr double kGateSeconds = 5.0;
constexpr double kGradientTol = 1e-4;
constexpr double kGradientSeconds = 120.0;
constexpr double kCancellationTol = 1e-12;
constexpr double kEquivalenceTol = 1e-5;
constexpr double kCollapseTol = 1e-6;
constexpr double kBaselineAccuracy = 0.90;
constexpr double kMinFlopsReduction = 0.25;
constexpr double kMaxAccuracyDrop = 0.03;
constexpr double kEndToEndSeconds = 15 * 60.0;
constexpr double kSelfPruneCeiling = 0.05;

const char* const kData = "synthetic:classes=10,n=4096,hw=16";
const char* const kSmallData = "synthetic:classes=10,n=512,hw=16,eval=256";

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path g_work;

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + GATOR_CLI + "\" " + args + " > \"" + log.string() +
                          "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Share of eval samples whose argmax logit equals the label.
double accuracy(const NetworkGraph& g, const WeightStore& w, const Dataset& d) {
  Executor exec(g);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < d.size(); start += 128) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(d.size(), start + 128); ++i) idx.push_back(i);
    const Tensor logits = exec.forward(w, gather_batch(d, idx, nullptr));
    const std::size_t k = logits.c();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* row = logits.data.data() + r * k;
      correct += static_cast<std::size_t>(std::max_element(row, row + k) - row) == d.labels[idx[r]];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  const NetworkGraph g = builtin_graph("resnet50");
  const DependencyHypergraph h = build_hypergraph(g);
  const double secs = seconds_since(t0);
  const auto prunable = h.prunable_edges();
  std::size_t trivial = 0;
  std::vector<std::pair<testing::NameSet, testing::NameSet>> multi;
  for (std::size_t j : prunable) {
    const auto& e = h.edge(j);
    if (e.trivial()) {
      ++trivial;
      continue;
    }
    testing::NameSet outs, ins;
    for (const auto& v : e.out_vertices) outs.insert(v.layer);
    for (const auto& v : e.in_vertices) ins.insert(v.layer);
    multi.emplace_back(outs, ins);
  }
  const bool ok = prunable.size() == 37 && trivial == 32 &&
                  multi == testing::resnet50_multi_edges() && secs < kMappingSeconds;
  return {ok, std::to_string(prunable.size()) + " edges (+" +
                  std::to_string(h.size() - prunable.size()) + " frozen), " +
                  std::to_string(trivial) + " trivial, " + std::to_string(multi.size()) +
                  " multi-conv " + (multi == testing::resnet50_multi_edges() ? "matching" : "NOT matching") +
                  ", " + fmt("%.3f s", secs)};
}

Outcome criterion2() {
  double worst = 0.0;
  for (const char* name : {"toy-resnet", "resnet50"}) {
    const NetworkGraph g = builtin_graph(name);
    const DependencyHypergraph h = build_hypergraph(g);
    const GateState open = init_gates(h, 0.005);
    const GateDraw draw = open_draw(open);
    for (auto kind : {ObjectiveKind::kMemory, ObjectiveKind::kFlops}) {
      const CostModel cost(g, h, {kind, std::nullopt});
      const CostFactors f = cost.initial_factors();
      std::vector<double> sums;
      for (const auto& d : draw.edges) {
        double s = 0.0;
        for (double m : d.mask) s += m;
        sums.push_back(s);
      }
      worst = std::max(worst, std::abs(computational_loss(sums, f) - 1.0));
      if (std::string(name) == "toy-resnet") {
        // through the gated train step as well
        const PruningProblem p{&g, &h, &cost};
        Executor exec(g);
        WeightStore w = init_weights(g, 1);
        std::mt19937_64 rng(1);
        const Tensor x = testing::random_batch(g, 2, rng);
        const auto r = backward(p, exec, w, open, draw, x, {0, 1}, f, 1.0, false);
        worst = std::max(worst, std::abs(r.loss.computational - 1.0));
      }
    }
  }
  return {worst <= kNormalizationTol, "max |L_comp(0) - 1| = " + fmt("%.3g", worst)};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  std::mt19937_64 rng(2024);
  for (double theta : {-2.0, 0.0, 0.5, 2.0, 5.2933}) {
    GateState s;
    s.edges.push_back(EdgeGates{1, {theta}, {0}, 1});
    const GateDraw d = sample_gates(s, rng, kGateSamples, Granularity::kPerSample);
    double open = 0.0;
    for (double m : d.edges[0].mask) open += m;
    const double p = sigmoid(theta), n = static_cast<double>(kGateSamples);
    const double rate = open / n;
    const double bound = 3.0 * std::sqrt(p * (1.0 - p) / n);
    ok = ok && std::abs(rate - p) <= bound;
    detail += fmt("%g:", theta) + fmt("%.4f", rate) + (std::abs(rate - p) <= bound ? " " : "! ");
  }
  const double secs = seconds_since(t0);
  return {ok && secs < kGateSeconds, detail + fmt("(%.2f s)", secs)};
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  const NetworkGraph g = with_input_size(builtin_graph("toy-resnet"), 4, 4);
  const DependencyHypergraph h = build_hypergraph(g);
  const CostModel cost(g, h, {ObjectiveKind::kFlops, std::nullopt});
  const PruningProblem p{&g, &h, &cost};
  std::mt19937_64 rng(4);
  WeightStore w = init_weights(g, 4);
  testing::randomize_batchnorm(g, w, rng);
  const GateState gates = init_gates(h, 0.3);
  const GateDraw draw = sample_gates(gates, rng, 4, Granularity::kPerSample);
  const Tensor x = testing::random_batch(g, 4, rng);
  const std::vector<std::size_t> y{1, 4, 7, 9};
  const CostFactors f = cost.initial_factors();

  Executor exec(g);
  WeightStore scratch = w;
  const auto r = backward(p, exec, scratch, gates, draw, x, y, f, 1.0, false);
  auto all = [](const std::string&, std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  };
  const auto wr = testing::check_weight_gradients(g, h, w, gates, draw, x, y, r.loss.computational,
                                                  r.grads.weights, all);

  GateDraw open = draw;
  for (auto& e : open.edges) std::fill(e.mask.begin(), e.mask.end(), 1.0);
  scratch = w;
  const auto ro = backward(p, exec, scratch, gates, open, x, y, f, 1.0, false);
  const auto tr = testing::check_theta_gradients(g, h, w, gates, open, x, y, ro.grads.theta_task);

  const double secs = seconds_since(t0);
  const bool ok = wr.worst <= kGradientTol && tr.worst <= kGradientTol && secs < kGradientSeconds;
  return {ok, std::to_string(wr.checked) + " weights (worst " + fmt("%.2e", wr.worst) + " at " +
                  wr.worst_key + "), " + std::to_string(tr.checked) + " gate logits (worst " +
                  fmt("%.2e", tr.worst) + "), " + fmt("%.1f s", secs)};
}

Outcome criterion5() {
  const NetworkGraph g = with_input_size(builtin_graph("toy-resnet"), 4, 4);
  const DependencyHypergraph h = build_hypergraph(g);
  const CostModel cost(g, h, {ObjectiveKind::kFlops, std::nullopt});
  const PruningProblem p{&g, &h, &cost};
  const WeightStore w0 = init_weights(g, 5);
  const CostFactors f = cost.initial_factors();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  const double eta = 0.01, gamma = 2e-3, alpha = 1.5;
  double worst = 0.0, ratio = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    GateState gates = init_gates(h, 0.005);
    std::size_t a = rng() % gates.edges.size(), b = rng() % gates.edges.size();
    while (b == a) b = rng() % gates.edges.size();
    const double theta = u(rng), x = u(rng);
    gates.edges[a].theta[0] = gates.edges[b].theta[0] = theta;
    GateDraw draw = sample_gates(gates, rng, 1, Granularity::kPerBatch);
    for (std::size_t k : {a, b}) {
      draw.edges[k].noise[0] = x;
      draw.edges[k].mask[0] = theta + x >= 0.0 ? 1.0 : 0.0;
    }
    Executor exec(g);
    WeightStore w = w0;
    const Tensor batch = testing::random_batch(g, 1, rng);
    const auto r = backward(p, exec, w, gates, draw, batch, {3}, f, alpha, false);
    const auto up = theta_update(gates, r.grads, f, eta, gamma);
    const double expected = -gamma * eta * alpha * sigmoid_derivative(theta + x);
    const double da = up.pruning[a][0], db = up.pruning[b][0];
    worst = std::max({worst, std::abs(da - db) / std::abs(expected),
                      std::abs(da - expected) / std::abs(expected)});
    ratio = std::max(ratio, std::max(f.normalized[a], f.normalized[b]) /
                                std::min(f.normalized[a], f.normalized[b]));
  }
  return {worst <= kCancellationTol,
          "max relative difference " + fmt("%.2e", worst) + " (lambda-hat ratios up to " +
              fmt("%.1f", ratio) + ")"};
}

Outcome criterion6() {
  double worst = 0.0;
  std::size_t plans = 0;
  auto run = [&](const NetworkGraph& g, std::size_t count, std::uint64_t seed, double weight_scale) {
    const DependencyHypergraph h = build_hypergraph(g);
    std::mt19937_64 rng(seed);
    WeightStore w = init_weights(g, seed);
    for (auto& [key, t] : w) {
      if (key.ends_with(".weight")) {
        for (double& v : t.data) v *= weight_scale;
      }
    }
    testing::randomize_batchnorm(g, w, rng);
    for (std::size_t k = 0; k < count; ++k) {
      const PruningPlan plan = testing::random_plan(h, rng);
      const PrunedNetwork net = apply_pruning(g, w, h, plan);
      for (std::size_t done = 0; done < 100; done += 20) {
        const Tensor x = testing::random_batch(g, 20, rng);
        worst = std::max(worst, max_abs_diff(forward(net.graph, net.weights, x),
                                             testing::gated_forward(g, h, w, plan, x)));
      }
      ++plans;
    }
  };
  run(builtin_graph("toy-resnet"), 50, 6, 1.0);
  run(with_input_size(builtin_graph("resnet50"), 32, 32), 5, 7, 0.5);
  return {worst <= kEquivalenceTol, std::to_string(plans) + " plans x 100 inputs, max |diff| " +
                                        fmt("%.3g", worst)};
}

Outcome criterion7() {
  const NetworkGraph g = builtin_graph("toy-resnet");
  const DependencyHypergraph h = build_hypergraph(g);
  const WeightStore w = init_weights(g, 7);
  const double pixels = 16.0 * 16.0;
  std::mt19937_64 rng(77);
  std::size_t mismatches = 0;
  for (int k = 0; k < 50; ++k) {
    const PruningPlan plan = testing::random_plan(h, rng);
    // Cost-model prediction: remove the plan's channels one at a time and
    // subtract the per-channel factor at the current counts.
    ChannelCounts counts = full_counts(h);
    double params = static_cast<double>(count_params(g));
    double flops = static_cast<double>(count_flops(g));
    for (std::size_t j : h.prunable_edges()) {
      while (counts[j] > plan.survivors[j].size()) {
        params -= memory_cost(g, h, counts, j);
        flops -= flops_cost(g, h, counts, j) * pixels;
        --counts[j];
      }
    }
    const oracle::Counts truth = oracle::count(apply_pruning(g, w, h, plan).graph);
    const bool ok = params == static_cast<double>(truth.params) &&
                    flops == static_cast<double>(truth.macs) &&
                    effective_params(g, h, counts) == truth.params &&
                    effective_flops(g, h, counts) == truth.macs;
    mismatches += !ok;
  }
  return {mismatches == 0, "50 plans, " + std::to_string(mismatches) + " mismatches"};
}

Outcome criterion8() {
  const NetworkGraph g = builtin_graph("toy-resnet");
  const DependencyHypergraph h = build_hypergraph(g);
  std::mt19937_64 rng(8);
  WeightStore w = init_weights(g, 8);
  testing::randomize_batchnorm(g, w, rng);
  // The emptied branch's last batchnorm maps zero input to zero.
  {
    const auto& gamma = w.at("l2b2c2_bn.gamma").data;
    const auto& mean = w.at("l2b2c2_bn.running_mean").data;
    const auto& var = w.at("l2b2c2_bn.running_var").data;
    auto& beta = w.at("l2b2c2_bn.beta").data;
    for (std::size_t c = 0; c < beta.size(); ++c) {
      beta[c] = -(gamma[c] * ((0.0 - mean[c]) * (1.0 / std::sqrt(var[c] + kBatchNormEpsilon))));
    }
  }
  GateState gates = init_gates(h, 0.005);
  auto& branch = gates.edges[*gates.slot_of(h.edge_of("l2b2c1", Side::kOut))];
  std::fill(branch.pruned.begin(), branch.pruned.end(), std::uint8_t{1});
  const PruningPlan plan = extract_plan(gates, h);
  const CollapseResult c = collapse_empty_blocks(apply_pruning(g, w, h, plan));
  double worst = 0.0;
  for (int k = 0; k < 5; ++k) {
    const Tensor x = testing::random_batch(g, 20, rng);
    worst = std::max(worst, max_abs_diff(forward(c.network.graph, c.network.weights, x),
                                         testing::gated_forward(g, h, w, plan, x)));
  }
  const bool ok = c.network.graph.size() < g.size() && worst <= kCollapseTol;
  return {ok, std::to_string(g.size()) + " -> " + std::to_string(c.network.graph.size()) +
                  " layers, max |diff| " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// End-to-end runs through the CLI.

struct EndToEnd {
  bool ran = false;
  int status = -1;
  double seconds = 0.0;
  double baseline = 0.0;
  double pruned_accuracy = 0.0;
  double flops_reduction = 0.0;
  double gamma = 0.0;
  std::vector<std::pair<double, double>> calibration;
  std::string error;
};

EndToEnd g_e2e;

void write_config(const fs::path& path, const nlohmann::json& j) {
  std::ofstream(path) << j.dump(1) << "\n";
}

nlohmann::json base_config() {
  return {{"alpha_schedule", {1.0}},
          {"gamma_candidates", {3.0, 10.0, 30.0, 100.0}},
          {"calibration_epochs", 4},
          {"self_prune_ceiling", kSelfPruneCeiling},
          {"pretrain_epochs", 3},
          {"pretrain_lr", {{0, 0.05}}},
          {"gating_epochs", 4},
          {"gating_lr", {{0, 0.01}}},
          {"finetune_epochs", 2},
          {"finetune_lr", {{0, 0.01}}},
          {"batch_size", 64},
          {"objective", "flops"},
          {"seed", 1}};
}

// FLOPs reduction measured on the emitted network.
double emitted_flops_reduction(const fs::path& dir, const NetworkGraph& g) {
  const DependencyHypergraph h = build_hypergraph(g);
  const GateState gates = gates_from_arrays(load_arrays((dir / "final.gates").string()), h);
  const WeightStore w = load_arrays((dir / "final.weights").string());
  const PrunedNetwork net = apply_pruning(g, w, h, extract_plan(gates, h));
  return 1.0 - static_cast<double>(count_flops(net.graph)) / static_cast<double>(count_flops(g));
}

void run_end_to_end() {
  if (g_e2e.ran) return;
  g_e2e.ran = true;
  const fs::path dir = g_work / "e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_config(g_work / "e2e.json", base_config());
  const auto t0 = Clock::now();
  g_e2e.status = run_cli("train --ir builtin:toy-resnet --data " + std::string(kData) +
                             " --config \"" + (g_work / "e2e.json").string() + "\" --out \"" +
                             dir.string() + "\"",
                         g_work / "e2e.log");
  // Emission and the independent measurements count towards the runtime.
  if (g_e2e.status != 0) {
    g_e2e.error = "train exited with " + std::to_string(g_e2e.status) + ", see " +
                  (g_work / "e2e.log").string();
    return;
  }
  const int pruned = run_cli("prune --ir \"" + (dir / "network.json").string() + "\" --weights \"" +
                                 (dir / "final.weights").string() + "\" --gates \"" +
                                 (dir / "final.gates").string() + "\" --out \"" +
                                 (dir / "emitted").string() + "\"",
                             g_work / "e2e-prune.log");
  if (pruned != 0) {
    g_e2e.status = pruned;
    g_e2e.error = "prune exited with " + std::to_string(pruned);
    return;
  }
  const DataSplits data = load_dataset(kData);
  const NetworkGraph g = load_network((dir / "network.json").string());
  g_e2e.baseline = accuracy(g, load_arrays((dir / "pretrain.weights").string()), data.eval);
  const NetworkGraph emitted = load_network((dir / "emitted" / "network.json").string());
  g_e2e.pruned_accuracy =
      accuracy(emitted, load_arrays((dir / "emitted" / "network.weights").string()), data.eval);
  g_e2e.flops_reduction =
      1.0 - static_cast<double>(count_flops(emitted)) / static_cast<double>(count_flops(g));
  const auto cal = nlohmann::json::parse(read_file(dir / "calibration.json"));
  g_e2e.gamma = cal.at("chosen").get<double>();
  for (const auto& e : cal.at("entries")) {
    g_e2e.calibration.emplace_back(e.at("gamma").get<double>(),
                                   e.at("self_pruned_fraction").get<double>());
  }
  g_e2e.seconds = seconds_since(t0);
}

Outcome criterion9() {
  run_end_to_end();
  if (g_e2e.status != 0) return {false, g_e2e.error};
  const double drop = g_e2e.baseline - g_e2e.pruned_accuracy;
  const bool ok = g_e2e.baseline >= kBaselineAccuracy &&
                  g_e2e.flops_reduction >= kMinFlopsReduction && drop <= kMaxAccuracyDrop &&
                  g_e2e.seconds <= kEndToEndSeconds;
  return {ok, "baseline " + fmt("%.2f%%", 100 * g_e2e.baseline) + ", pruned " +
                  fmt("%.2f%%", 100 * g_e2e.pruned_accuracy) + " (drop " +
                  fmt("%.2f pp", 100 * drop) + "), FLOPs -" +
                  fmt("%.2f%%", 100 * g_e2e.flops_reduction) + ", gamma " +
                  fmt("%g", g_e2e.gamma) + ", " + fmt("%.0f s", g_e2e.seconds)};
}

Outcome criterion10() {
  run_end_to_end();
  if (g_e2e.status != 0) return {false, "needs the end-to-end run: " + g_e2e.error};
  const fs::path e2e = g_work / "e2e";
  const NetworkGraph g = load_network((e2e / "network.json").string());
  std::string detail;
  std::vector<double> medians;
  for (double alpha : {0.25, 1.0, 4.0}) {
    std::vector<double> reductions;
    for (int seed : {1, 2, 3}) {
      // Finetuning does not change the architecture, so only gating runs.
      auto c = base_config();
      c["alpha_schedule"] = {alpha};
      c["gamma"] = g_e2e.gamma;
      c["gamma_candidates"] = nlohmann::json::array();
      c["pretrain_epochs"] = 0;
      c["finetune_epochs"] = 0;
      c["seed"] = seed;
      const std::string tag = "alpha" + fmt("%g", alpha) + "-seed" + std::to_string(seed);
      const fs::path dir = g_work / tag;
      fs::remove_all(dir);
      write_config(g_work / (tag + ".json"), c);
      const int status = run_cli("train --quiet --ir builtin:toy-resnet --data " + std::string(kData) +
                                     " --config \"" + (g_work / (tag + ".json")).string() +
                                     "\" --weights \"" + (e2e / "pretrain.weights").string() +
                                     "\" --out \"" + dir.string() + "\"",
                                 g_work / (tag + ".log"));
      if (status != 0) return {false, tag + ": train exited with " + std::to_string(status)};
      reductions.push_back(emitted_flops_reduction(dir, g));
    }
    std::sort(reductions.begin(), reductions.end());
    medians.push_back(reductions[1]);
    detail += "alpha " + fmt("%g", alpha) + ": " + fmt("%.1f", 100 * reductions[0]) + "/" +
              fmt("%.1f", 100 * reductions[1]) + "/" + fmt("%.1f%%", 100 * reductions[2]) + "  ";
  }
  const bool ok = medians[0] <= medians[1] && medians[1] <= medians[2];
  return {ok, detail + "(min/median/max)"};
}

Outcome criterion11() {
  run_end_to_end();
  if (g_e2e.status != 0) return {false, "needs the end-to-end run: " + g_e2e.error};
  double chosen_fraction = 1.0;
  bool increasing = true;
  std::string detail;
  for (std::size_t k = 0; k < g_e2e.calibration.size(); ++k) {
    const auto [gamma, frac] = g_e2e.calibration[k];
    if (gamma == g_e2e.gamma) chosen_fraction = frac;
    if (k > 0) increasing = increasing && frac >= g_e2e.calibration[k - 1].second;
    detail += fmt("%g", gamma) + ":" + fmt("%.2f%% ", 100 * frac);
  }
  // Strictly more self-pruning at the largest candidate than at the smallest.
  const bool grows = g_e2e.calibration.back().second > g_e2e.calibration.front().second;
  const bool ok = chosen_fraction <= kSelfPruneCeiling && increasing && grows;
  return {ok, "chosen " + fmt("%g", g_e2e.gamma) + "; " + detail};
}

Outcome criterion12() {
  auto c = base_config();
  c["pretrain_epochs"] = 1;
  c["gamma_candidates"] = {10.0, 30.0};
  c["calibration_epochs"] = 1;
  c["alpha_schedule"] = {0.5, 1.0};
  c["gating_epochs"] = 1;
  c["finetune_epochs"] = 1;
  c["seed"] = 12;
  write_config(g_work / "det.json", c);
  std::vector<fs::path> dirs{g_work / "det-a", g_work / "det-b"};
  for (const auto& d : dirs) {
    fs::remove_all(d);
    const int status = run_cli("train --quiet --ir builtin:toy-resnet --data " +
                                   std::string(kSmallData) + " --config \"" +
                                   (g_work / "det.json").string() + "\" --out \"" + d.string() + "\"",
                               g_work / (d.filename().string() + ".log"));
    if (status != 0) return {false, "train exited with " + std::to_string(status)};
  }
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(dirs[0])) names_a.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(dirs[1])) names_b.insert(e.path().filename().string());
  std::size_t differing = 0, checkpoints = 0;
  for (const auto& n : names_a) {
    differing += !names_b.count(n) || read_file(dirs[0] / n) != read_file(dirs[1] / n);
    checkpoints += n.ends_with(".weights") || n.ends_with(".gates");
  }
  const bool ok = names_a == names_b && differing == 0 && names_a.count("log.jsonl") && checkpoints > 0;
  return {ok, std::to_string(names_a.size()) + " files (" + std::to_string(checkpoints) +
                  " checkpoints), " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  g_work = fs::current_path() / "acceptance-work";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
    } else if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only N[,N...]] [--work DIR]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(g_work);

  const std::vector<std::function<Outcome()>> criteria{
      criterion1, criterion2, criterion3, criterion4,  criterion5,  criterion6,
      criterion7, criterion8, criterion9, criterion10, criterion11, criterion12};
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int n = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[k]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
