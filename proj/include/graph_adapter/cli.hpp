#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage, 2 data error,
// 3 numeric error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "graph_adapter/adapter.hpp"
#include "graph_adapter/embedstore.hpp"
#include "graph_adapter/error.hpp"
#include "graph_adapter/evalharness.hpp"
#include "graph_adapter/graphkit.hpp"
#include "graph_adapter/trainer.hpp"
#include "graph_adapter/weights_file.hpp"

namespace graph_adapter::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

namespace detail {

// Rebuilds the graph a weight file was trained against.
inline PartitionedGraph rebuild_graph(const WeightFile& wf, const EmbeddingBundle& bundle) {
  if (bundle.dim != wf.dim)
    throw DimensionError("bundle dimension " + std::to_string(bundle.dim) +
                         " does not match weights dimension " + std::to_string(wf.dim));
  const FewShotSplit split = sample_few_shot(bundle, wf.train_config.shots, wf.train_config.seed);
  return build_partitioned_graph(bundle, split, wf.state.config.max_graph_nodes,
                                 wf.train_config.seed);
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph adapter: dual knowledge-graph adapters over cached embeddings",
               "graph_adapter"};
  app.require_subcommand(1);

  // train
  struct {
    std::string bundle, out = ".", variant = "T";
    std::uint32_t shots = 16, epochs = 100, max_nodes = 256, batch = 0;
    std::uint64_t seed = 1;
    double alpha = 0.6, beta = 0.7, lr = 1e-3, warmup_lr = 1e-5;
    bool learnable = false;
  } tr;
  auto* train_cmd = app.add_subcommand("train", "Train an adapter on a few-shot split");
  train_cmd->add_option("--bundle", tr.bundle, "CEB1 bundle")->required();
  train_cmd->add_option("--shots", tr.shots, "Shots per class")->required()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.seed, "Seed for sampling, init and shuffling")->required();
  train_cmd->add_option("--alpha", tr.alpha, "Residual weight of the original feature")
      ->check(CLI::Range(0.0, 1.0))->capture_default_str();
  train_cmd->add_option("--beta", tr.beta, "Weight of the same-modality branch")
      ->check(CLI::Range(0.0, 1.0))->capture_default_str();
  train_cmd->add_option("--variant", tr.variant, "T, I or TI")
      ->check(CLI::IsMember({"T", "I", "TI"}))->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--lr", tr.lr)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--warmup-lr", tr.warmup_lr)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--max-graph-nodes", tr.max_nodes)
      ->check(CLI::Range(2u, 1u << 30))->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch, "0 picks full batch up to 256")->capture_default_str();
  train_cmd->add_flag("--learnable", tr.learnable, "Learn alpha and beta");
  train_cmd->add_option("--out", tr.out, "Output directory")->capture_default_str();

  // eval
  struct {
    std::string weights, bundle, out;
    std::vector<std::string> targets;
    std::optional<double> alpha_override;
  } ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained weights, optionally cross-domain");
  eval_cmd->add_option("--weights", ev.weights, "GAW1 weight file")->required();
  eval_cmd->add_option("--bundle", ev.bundle, "Bundle the weights were trained on")->required();
  eval_cmd->add_option("--targets", ev.targets, "Target bundles for transfer");
  eval_cmd->add_option("--alpha-override", ev.alpha_override, "Evaluate with a fixed alpha")
      ->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--out", ev.out, "Also write the result JSON here");

  // sweep
  struct {
    std::string bundle, out, summary;
    std::vector<std::string> variants{"T"};
    std::vector<double> alphas{0.6}, betas{0.7};
    std::vector<std::uint32_t> shots{16};
    std::vector<std::uint64_t> seeds{1};
    std::uint32_t epochs = 100, max_nodes = 256;
    double lr = 1e-3, warmup_lr = 1e-5;
  } sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train over a grid of coefficients and seeds");
  sweep_cmd->add_option("--bundle", sw.bundle)->required();
  sweep_cmd->add_option("--alphas", sw.alphas)->delimiter(',')->check(CLI::Range(0.0, 1.0));
  sweep_cmd->add_option("--betas", sw.betas)->delimiter(',')->check(CLI::Range(0.0, 1.0));
  sweep_cmd->add_option("--seeds", sw.seeds)->delimiter(',');
  sweep_cmd->add_option("--shots", sw.shots)->delimiter(',')->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--variants", sw.variants)->delimiter(',')->check(CLI::IsMember({"T", "I", "TI"}));
  sweep_cmd->add_option("--epochs", sw.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  sweep_cmd->add_option("--lr", sw.lr)->check(CLI::PositiveNumber)->capture_default_str();
  sweep_cmd->add_option("--warmup-lr", sw.warmup_lr)->check(CLI::PositiveNumber)->capture_default_str();
  sweep_cmd->add_option("--max-graph-nodes", sw.max_nodes)->check(CLI::Range(2u, 1u << 30));
  sweep_cmd->add_option("--out", sw.out, "Per-run CSV")->required();
  sweep_cmd->add_option("--summary", sw.summary, "Per-cell mean/std CSV (default: <out>.summary.csv)");

  // make-synth
  SyntheticSpec sy;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("make-synth", "Write a synthetic CEB1 bundle");
  synth_cmd->add_option("--classes", sy.num_classes)->check(CLI::Range(2u, 1u << 20))->capture_default_str();
  synth_cmd->add_option("--dim", sy.dim)->check(CLI::Range(4u, 1u << 16))->capture_default_str();
  synth_cmd->add_option("--train-per-class", sy.per_class_train)->capture_default_str();
  synth_cmd->add_option("--test-per-class", sy.per_class_test)->capture_default_str();
  synth_cmd->add_option("--anchor-noise", sy.anchor_noise)->check(CLI::NonNegativeNumber)->capture_default_str();
  synth_cmd->add_option("--cluster-noise", sy.cluster_noise)->check(CLI::NonNegativeNumber)->capture_default_str();
  synth_cmd->add_option("--seed", sy.seed)->capture_default_str();
  synth_cmd->add_option("--out", synth_out)->required();

  // inspect-nodes
  struct {
    std::string weights, bundle, out;
    std::optional<double> alpha_override;
  } in;
  auto* inspect_cmd = app.add_subcommand("inspect-nodes", "Export class-node drift for plotting");
  inspect_cmd->add_option("--weights", in.weights)->required();
  inspect_cmd->add_option("--bundle", in.bundle)->required();
  inspect_cmd->add_option("--out", in.out, "Drift CSV; summary goes to <out>.summary.json")->required();
  inspect_cmd->add_option("--alpha-override", in.alpha_override)->check(CLI::Range(0.0, 1.0));

  std::vector<const char*> argv{"graph_adapter"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kUsage;
  }

  try {
    if (train_cmd->parsed()) {
      const EmbeddingBundle bundle = load_bundle(tr.bundle);
      const FewShotSplit split = sample_few_shot(bundle, tr.shots, tr.seed);
      for (const auto& w : split.warnings) err << "warning: " << w << '\n';
      TrainConfig cfg;
      cfg.epochs = tr.epochs;
      cfg.base_lr = tr.lr;
      cfg.warmup_lr = tr.warmup_lr;
      cfg.batch_size = tr.batch;
      cfg.seed = tr.seed;
      cfg.shots = tr.shots;
      cfg.adapter.alpha = tr.alpha;
      cfg.adapter.beta = tr.beta;
      cfg.adapter.variant = parse_variant(tr.variant);
      cfg.adapter.max_graph_nodes = tr.max_nodes;
      cfg.adapter.learnable_coefficients = tr.learnable;
      const TrainResult res = train(bundle, split, cfg);

      const std::filesystem::path dir(tr.out);
      std::filesystem::create_directories(dir);
      save_weights(make_weight_file(res, bundle), (dir / "weights.gaw").string());
      detail::write_json(to_json(res.report), (dir / "report.json").string());
      write_classifier_csv(adapt_classifier(res.state, res.graph), bundle.class_names,
                           (dir / "classifier.csv").string());
      out << "test top-1 " << res.report.test_top1 << " (zero-shot " << res.report.zero_shot_top1
          << "), final loss " << res.report.final_loss() << ", " << res.report.parameters
          << " parameters\n";
      return kOk;
    }

    if (eval_cmd->parsed()) {
      const WeightFile wf = load_weights(ev.weights);
      const EmbeddingBundle bundle = load_bundle(ev.bundle);
      std::vector<EmbeddingBundle> targets;
      for (const auto& t : ev.targets) targets.push_back(load_bundle(t));
      const PartitionedGraph graph = detail::rebuild_graph(wf, bundle);
      const AdapterState state = ev.alpha_override ? wf.state.with_alpha(*ev.alpha_override) : wf.state;
      const EvalResult r = evaluate_transfer(state, graph, bundle, targets,
                                             ev.alpha_override ? "alpha_override" : "trained");
      const auto j = to_json(r);
      if (!ev.out.empty()) detail::write_json(j, ev.out);
      out << j.dump(2) << '\n';
      return kOk;
    }

    if (sweep_cmd->parsed()) {
      const EmbeddingBundle bundle = load_bundle(sw.bundle);
      SweepGrid grid;
      grid.variants.clear();
      for (const auto& v : sw.variants) grid.variants.push_back(parse_variant(v));
      grid.alphas = sw.alphas;
      grid.betas = sw.betas;
      grid.shots = sw.shots;
      grid.seeds = sw.seeds;
      grid.base.epochs = sw.epochs;
      grid.base.base_lr = sw.lr;
      grid.base.warmup_lr = sw.warmup_lr;
      grid.base.adapter.max_graph_nodes = sw.max_nodes;
      const SweepTable table = sweep(bundle, grid);
      write_sweep_csv(table, sw.out);
      write_sweep_summary_csv(table, sw.summary.empty() ? sw.out + ".summary.csv" : sw.summary);
      for (const auto& r : table.rows)
        if (!r.error.empty())
          err << "cell " << to_string(r.variant) << " alpha=" << r.alpha << " beta=" << r.beta
              << " shots=" << r.shots << " seed=" << r.seed << " failed: " << r.error << '\n';
      for (const auto& c : table.cells)
        out << to_string(c.variant) << " alpha=" << c.alpha << " beta=" << c.beta
            << " shots=" << c.shots << ": " << c.mean_top1 << " +- " << c.std_top1 << " (n="
            << c.runs << ")\n";
      return kOk;
    }

    if (synth_cmd->parsed()) {
      save_bundle(make_synthetic_bundle(sy), synth_out);
      return kOk;
    }

    if (inspect_cmd->parsed()) {
      const WeightFile wf = load_weights(in.weights);
      const EmbeddingBundle bundle = load_bundle(in.bundle);
      const PartitionedGraph graph = detail::rebuild_graph(wf, bundle);
      const AdapterState state = in.alpha_override ? wf.state.with_alpha(*in.alpha_override) : wf.state;
      const AdaptedClassifier adapted = adapt_classifier(state, graph);
      const DriftSummary s =
          export_node_drift(graph.text_nodes, adapted.features, bundle.class_names, in.out);
      out << to_json(s).dump(2) << '\n';
      return kOk;
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace graph_adapter::cli
