// gator: command-line front end for analysis, profiling, training and
// emission of pruned networks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gator/container.hpp"
#include "gator/cost_model.hpp"
#include "gator/dataset.hpp"
#include "gator/error.hpp"
#include "gator/executor.hpp"
#include "gator/gating.hpp"
#include "gator/hypergraph.hpp"
#include "gator/network_ir.hpp"
#include "gator/profiler.hpp"
#include "gator/pruner.hpp"
#include "gator/training.hpp"

namespace fs = std::filesystem;
using namespace gator;

namespace {

NetworkGraph load_ir(const std::string& spec) {
  if (spec.starts_with("builtin:")) return builtin_graph(spec.substr(8));
  return load_network(spec);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw RuntimeFailure("write failed for '" + path.string() + "'");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create '" + dir.string() + "': " + ec.message());
}

CostObjective make_objective(ObjectiveKind kind, const std::string& latency_table) {
  CostObjective o{kind, std::nullopt};
  if (kind == ObjectiveKind::kLatency) {
    if (latency_table.empty()) {
      throw InvalidInput("objective latency needs a latency table (--latency-table)");
    }
    o.latency = load_latency_table(latency_table);
  }
  return o;
}

std::string join_members(const std::vector<ChannelVertex>& vs) {
  std::string s;
  for (const auto& v : vs) s += (s.empty() ? "" : ",") + v.layer;
  return s.empty() ? "-" : s;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string ir;
  std::string latency_table;
  std::string out;
};

int analyze(const AnalyzeArgs& a) {
  const NetworkGraph g = load_ir(a.ir);
  const DependencyHypergraph h = build_hypergraph(g);
  const CostModel mem(g, h, {ObjectiveKind::kMemory, std::nullopt});
  const CostModel flops(g, h, {ObjectiveKind::kFlops, std::nullopt});
  std::optional<CostModel> lat;
  if (!a.latency_table.empty()) lat.emplace(g, h, make_objective(ObjectiveKind::kLatency, a.latency_table));
  const ChannelCounts counts = full_counts(h);

  std::size_t convs = 0, fcs = 0, trivial = 0;
  for (const auto& l : g.layers()) {
    convs += l.kind == LayerKind::kConv;
    fcs += l.kind == LayerKind::kFullyConnected;
  }
  const auto prunable = h.prunable_edges();
  for (std::size_t e : prunable) trivial += h.edge(e).trivial();
  std::cout << "network " << g.name() << ": " << g.size() << " layers, " << convs << " conv, "
            << fcs << " fc\n"
            << "FLOPs " << count_flops(g) << ", weights " << count_params(g) << "\n"
            << h.size() << " dependency edges: " << prunable.size() << " prunable ("
            << trivial << " trivial), " << h.size() - prunable.size() << " frozen\n\n";

  const CostFactors fm = mem.initial_factors(), ff = flops.initial_factors();
  std::optional<CostFactors> fl;
  if (lat) fl = lat->initial_factors();
  auto slot = [&](std::size_t e) -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < fm.edges.size(); ++k)
      if (fm.edges[k] == e) return k;
    return std::nullopt;
  };

  std::cout << std::left << std::setw(5) << "edge" << std::setw(9) << "channels"
            << std::setw(10) << "flags" << std::setw(13) << "lambda_mem" << std::setw(13)
            << "lambda_flops";
  if (fl) std::cout << std::setw(13) << "lambda_lat";
  std::cout << "members (out | in)\n";
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& e : h.edges()) {
    std::string flags = e.frozen ? "frozen" : (e.can_empty ? "branch" : "-");
    std::ostringstream lm, lf, ll;
    nlohmann::ordered_json row{{"edge", e.id},
                               {"channels", e.channel_count},
                               {"frozen", e.frozen},
                               {"can_empty", e.can_empty}};
    std::vector<std::string> outs, ins;
    for (const auto& v : e.out_vertices) outs.push_back(v.layer);
    for (const auto& v : e.in_vertices) ins.push_back(v.layer);
    row["out"] = outs;
    row["in"] = ins;
    if (auto k = slot(e.id)) {
      lm << fm.raw[*k];
      lf << ff.raw[*k];
      row["lambda_memory"] = fm.raw[*k];
      row["lambda_hat_memory"] = fm.normalized[*k];
      row["lambda_flops"] = ff.raw[*k];
      row["lambda_hat_flops"] = ff.normalized[*k];
      if (fl) {
        ll << fl->raw[*k];
        row["lambda_latency"] = fl->raw[*k];
        row["lambda_hat_latency"] = fl->normalized[*k];
      }
    } else {
      lm << "-";
      lf << "-";
      ll << "-";
    }
    std::cout << std::setw(5) << e.id << std::setw(9) << e.channel_count << std::setw(10)
              << flags << std::setw(13) << lm.str() << std::setw(13) << lf.str();
    if (fl) std::cout << std::setw(13) << ll.str();
    std::cout << join_members(e.out_vertices) << " | " << join_members(e.in_vertices) << "\n";
    rows.push_back(std::move(row));
  }
  (void)counts;
  if (!a.out.empty()) {
    nlohmann::ordered_json j;
    j["network"] = g.name();
    j["flops"] = count_flops(g);
    j["weights"] = count_params(g);
    j["denominator_memory"] = mem.denominator();
    j["denominator_flops"] = flops.denominator();
    if (lat) j["denominator_latency"] = lat->denominator();
    j["edges"] = std::move(rows);
    write_file(a.out, j.dump(1) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ProfileArgs {
  std::string ir;
  std::string out;
  ProfileConfig config;
  std::size_t hw = 0;
};

int profile(ProfileArgs a) {
  const NetworkGraph g = load_ir(a.ir);
  a.config.height = a.config.width = a.hw;
  const LatencyTable t = profile_latency(g, a.config);
  const std::string text = serialize_latency_table(t);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file(a.out, text);
    std::cerr << "wrote " << t.entries.size() << " edges to " << a.out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string ir;
  std::string data;
  std::string config;
  std::string weights;
  std::string gates;
  std::string out;
  std::string objective;
  std::string latency_table;
  std::optional<std::uint64_t> seed;
  std::size_t start_iteration = 1;
  bool quiet = false;
};

void print_record(const LogRecord& r) {
  std::fprintf(stderr,
               "iter %zu %-8s epoch %3zu  loss %.4f (task %.4f, cost %.4f)  train %.2f%%  "
               "eval %.2f%%  pruned %zu  FLOPs %llu\n",
               r.iteration, std::string(to_string(r.phase)).c_str(), r.epoch, r.total_loss,
               r.original_loss, r.computational_loss, 100.0 * r.train_accuracy,
               100.0 * r.eval_accuracy, r.pruned_total,
               static_cast<unsigned long long>(r.flops));
}

int train(const TrainArgs& a) {
  TrainingConfig config = a.config.empty() ? TrainingConfig{} : load_config(a.config);
  if (!a.objective.empty()) config.objective = parse_objective(a.objective);
  if (a.seed) config.seed = *a.seed;
  if (!a.latency_table.empty()) config.latency_table = a.latency_table;
  config.validate();
  if (a.start_iteration < 1) throw InvalidInput("--start-iteration must be at least 1");
  if (a.start_iteration > 1 && (a.weights.empty() || a.gates.empty())) {
    throw InvalidInput("resuming needs --weights and --gates from the previous gating checkpoint");
  }

  const DataSplits data = load_dataset(a.data);
  NetworkGraph g = load_ir(a.ir);
  const LayerInfo& in = g.info(g.input_index());
  if (data.train.channels() != in.out_channels) {
    throw InvalidInput("dataset has " + std::to_string(data.train.channels()) +
                       " channels, network input expects " + std::to_string(in.out_channels));
  }
  if (data.train.images.h() != in.out_h || data.train.images.w() != in.out_w) {
    g = with_input_size(g, data.train.images.h(), data.train.images.w());
  }
  const LayerSpec& last = g.layer(g.info(g.output_index()).inputs.at(0));
  if (data.train.classes > g.info(g.index_of(last.id)).out_channels) {
    throw InvalidInput("dataset has " + std::to_string(data.train.classes) +
                       " classes, network outputs " +
                       std::to_string(g.info(g.index_of(last.id)).out_channels));
  }
  const DependencyHypergraph h = build_hypergraph(g);
  const CostModel cost(g, h, make_objective(config.objective, config.latency_table));
  const PruningProblem p{&g, &h, &cost};

  WeightStore weights;
  if (a.weights.empty()) {
    weights = init_weights(g, config.seed);
  } else {
    weights = load_arrays(a.weights);
    check_weights(g, weights);
  }

  const fs::path out(a.out);
  make_dir(out);
  std::ofstream log_file(out / "log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log_file) throw RuntimeFailure("cannot write " + (out / "log.jsonl").string());
  auto on_record = [&](const LogRecord& r) {
    log_file << log_line(r) << std::flush;
    if (!a.quiet) print_record(r);
  };

  GateState gates;
  if (a.start_iteration == 1) {
    gates = init_gates(h, config.p_gate);
    gates.temperature = config.temperature;
    if (config.pretrain_epochs > 0) {
      PruningRunLog pre;
      GateState open = gates;
      run_phase(p, {PhaseKind::kPretrain, 0, 0.0, config.gamma, config.pretrain_epochs,
                    config.pretrain_lr},
                weights, open, data, config, pre, on_record);
      save_arrays((out / "pretrain.weights").string(), weights);
    }
    if (!config.gamma_candidates.empty()) {
      const CalibrationReport cal = calibrate_gamma(p, weights, data, config, config.gamma_candidates);
      nlohmann::ordered_json j;
      j["ceiling"] = config.self_prune_ceiling;
      j["epochs"] = config.calibration_epochs;
      nlohmann::ordered_json entries = nlohmann::ordered_json::array();
      for (const auto& e : cal.entries) {
        entries.push_back({{"gamma", e.gamma}, {"self_pruned_fraction", e.self_pruned_fraction}});
        if (!a.quiet) {
          std::fprintf(stderr, "calibration: gamma %g self-prunes %.2f%%\n", e.gamma,
                       100.0 * e.self_pruned_fraction);
        }
      }
      j["entries"] = std::move(entries);
      j["chosen"] = cal.chosen;
      write_file(out / "calibration.json", j.dump(1) + "\n");
      config.gamma = cal.chosen;
      config.gamma_candidates.clear();
    }
  } else {
    gates = gates_from_arrays(load_arrays(a.gates), h);
  }
  // The effective configuration: resuming with it reproduces this run.
  config.pretrain_epochs = 0;
  write_file(out / "config.json", serialize_config(config));

  auto sink = [&](const std::string& tag, const WeightStore& w, const GateState& s) {
    save_arrays((out / (tag + ".weights")).string(), w);
    save_arrays((out / (tag + ".gates")).string(), gates_to_arrays(s));
  };
  const PruningResult result =
      run_iterative_pruning(p, weights, gates, data, config, sink, a.start_iteration, on_record);
  save_arrays((out / "final.weights").string(), result.weights);
  save_arrays((out / "final.gates").string(), gates_to_arrays(result.gates));
  write_file(out / "plan.json", serialize_plan(extract_plan(result.gates, h), h, g.name()));
  write_file(out / "network.json", serialize_network(g));

  const std::uint64_t before = count_flops(g);
  const std::uint64_t after = effective_flops(g, h, alive_counts(h, result.gates));
  const Evaluation ev = evaluate(p, result.weights, result.gates, data.eval, 64);
  std::printf("pruned %zu of %zu channels; FLOPs %llu -> %llu (%.2f%% reduction); eval accuracy %.2f%%\n",
              result.gates.pruned_count(), result.gates.channel_count(),
              static_cast<unsigned long long>(before), static_cast<unsigned long long>(after),
              100.0 * (1.0 - static_cast<double>(after) / static_cast<double>(before)),
              100.0 * ev.accuracy);
  return 0;
}

// ---------------------------------------------------------------------------

struct PruneArgs {
  std::string ir;
  std::string weights;
  std::string gates;
  std::string out;
  std::size_t samples = 100;
  std::size_t batch = 10;
  std::uint64_t seed = 1;
  bool strict = false;
  bool no_collapse = false;
};

int prune(const PruneArgs& a) {
  const NetworkGraph g = load_ir(a.ir);
  const DependencyHypergraph h = build_hypergraph(g);
  const WeightStore w = load_arrays(a.weights);
  check_weights(g, w);
  const GateState gates = gates_from_arrays(load_arrays(a.gates), h);
  const PruningPlan plan = extract_plan(gates, h);

  PrunedNetwork net = apply_pruning(g, w, h, plan);
  if (!a.no_collapse) {
    CollapseResult c = collapse_empty_blocks(net, a.strict ? CollapseMode::kStrict : CollapseMode::kReport);
    for (const auto& id : c.collapsed_adds) std::cerr << "collapsed residual block at " << id << "\n";
    for (const auto& b : c.blocked) std::cerr << "kept non-collapsible branch: " << b << "\n";
    net = std::move(c.network);
  }

  // Emitted network against the gated original on seeded inputs.
  const GateDraw draw = open_draw(gates);
  NetworkGates hook(g, h, gates, draw);
  Executor gated(g), emitted(net.graph);
  WeightStore scratch = w;
  std::mt19937_64 rng(a.seed);
  std::normal_distribution<double> normal;
  const LayerInfo& in = g.info(g.input_index());
  double worst = 0.0;
  for (std::size_t done = 0; done < a.samples;) {
    const std::size_t n = std::min(a.batch, a.samples - done);
    Tensor x({n, in.out_channels, in.out_h, in.out_w});
    for (double& v : x.data) v = normal(rng);
    const Tensor ref = gated.forward(scratch, x, ForwardOptions{Mode::kEval, false, &hook});
    worst = std::max(worst, max_abs_diff(emitted.forward(net.weights, x), ref));
    done += n;
  }
  if (!(worst <= 1e-5)) {
    std::ostringstream msg;
    msg << "equivalence check failed: emitted and gated outputs differ by " << worst
        << " (limit 1e-5); nothing written";
    throw RuntimeFailure(msg.str());
  }

  const fs::path out(a.out);
  make_dir(out);
  write_file(out / "network.json", serialize_network(net.graph));
  save_arrays((out / "network.weights").string(), net.weights);
  write_file(out / "plan.json", serialize_plan(plan, h, g.name()));
  const PruningReport r = report(g, net, in.out_h, in.out_w);
  write_file(out / "report.json", report_json(r));
  std::cout << report_text(r) << "equivalence: max abs difference " << worst << " over "
            << a.samples << " inputs\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string ir;
  std::string pruned;
  std::string plan;
  std::size_t hw = 0;
  bool json = false;
};

int report_cmd(const ReportArgs& a) {
  const NetworkGraph g = load_ir(a.ir);
  PrunedNetwork net;
  net.graph = load_ir(a.pruned);
  if (!a.plan.empty()) net.provenance = parse_plan(read_file(a.plan), build_hypergraph(g)).survivors;
  const LayerInfo& in = g.info(g.input_index());
  const std::size_t hh = a.hw ? a.hw : in.out_h, ww = a.hw ? a.hw : in.out_w;
  const PruningReport r = report(g, net, hh, ww);
  std::cout << (a.json ? report_json(r) : report_text(r));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel pruning with learned stochastic gates"};
  app.require_subcommand(1);

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "Print the dependency hypergraph and cost factors");
  an->add_option("--ir", aa.ir, "IR file or builtin:<name>")->required();
  an->add_option("--latency-table", aa.latency_table, "Also show latency factors");
  an->add_option("--out", aa.out, "Write the table as JSON");

  ProfileArgs pa;
  auto* pr = app.add_subcommand("profile-latency", "Measure per-edge latency sensitivities");
  pr->add_option("--ir", pa.ir, "IR file or builtin:<name>")->required();
  pr->add_option("--out", pa.out, "Latency table file (default: stdout)");
  pr->add_option("--warmup", pa.config.warmup, "Untimed runs (>= 2)")->capture_default_str();
  pr->add_option("--repeats", pa.config.repeats, "Timed runs, median taken (>= 5)")->capture_default_str();
  pr->add_option("--batch", pa.config.batch, "Batch size")->capture_default_str();
  pr->add_option("--hw", pa.hw, "Input height and width (default: the IR's)");
  pr->add_option("--seed", pa.config.seed, "Seed for weights and inputs")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Pretrain, calibrate and run iterative pruning");
  tr->add_option("--ir", ta.ir, "IR file or builtin:<name>")->required();
  tr->add_option("--data", ta.data, "Dataset spec (synthetic:... or idx:...)")->required();
  tr->add_option("--config", ta.config, "Training config (JSON)");
  tr->add_option("--weights", ta.weights, "Initial weights (default: seeded init)");
  tr->add_option("--gates", ta.gates, "Gate checkpoint to resume from");
  tr->add_option("--start-iteration", ta.start_iteration, "First pruning iteration to run");
  tr->add_option("--objective", ta.objective, "memory, flops or latency");
  tr->add_option("--latency-table", ta.latency_table, "Latency table for the latency objective");
  tr->add_option("--seed", ta.seed, "Override the config seed");
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_flag("--quiet", ta.quiet, "No per-epoch progress");

  PruneArgs pu;
  auto* pn = app.add_subcommand("prune", "Emit the pruned network from a gate checkpoint");
  pn->add_option("--ir", pu.ir, "IR file or builtin:<name>")->required();
  pn->add_option("--weights", pu.weights, "Weights")->required();
  pn->add_option("--gates", pu.gates, "Gate checkpoint")->required();
  pn->add_option("--out", pu.out, "Output directory")->required();
  pn->add_option("--samples", pu.samples, "Inputs for the equivalence check")->capture_default_str();
  pn->add_option("--batch", pu.batch, "Batch size for the equivalence check")->capture_default_str();
  pn->add_option("--seed", pu.seed, "Seed for the check inputs")->capture_default_str();
  pn->add_flag("--strict-collapse", pu.strict, "Fail on emptied branches that are not exactly zero");
  pn->add_flag("--no-collapse", pu.no_collapse, "Keep emptied residual branches");

  ReportArgs ra;
  auto* rp = app.add_subcommand("report", "FLOPs and memory reduction of an emitted network");
  rp->add_option("--ir", ra.ir, "Original IR file or builtin:<name>")->required();
  rp->add_option("--pruned", ra.pruned, "Emitted IR file")->required();
  rp->add_option("--plan", ra.plan, "Plan file, for the per-edge survivor table");
  rp->add_option("--hw", ra.hw, "Input height and width (default: the IR's)");
  rp->add_flag("--json", ra.json, "JSON output");

  std::string builtin, builtin_out;
  auto* ex = app.add_subcommand("export-builtin", "Write a bundled architecture as an IR file");
  ex->add_option("name", builtin, "resnet50 or toy-resnet")->required();
  ex->add_option("--out", builtin_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (an->parsed()) return analyze(aa);
    if (pr->parsed()) return profile(pa);
    if (tr->parsed()) return train(ta);
    if (pn->parsed()) return prune(pu);
    if (rp->parsed()) return report_cmd(ra);
    if (ex->parsed()) {
      const std::string text = builtin_description(builtin);
      if (builtin_out.empty()) std::cout << text;
      else write_file(builtin_out, text);
      return 0;
    }
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
