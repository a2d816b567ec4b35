#pragma once

// Cross-entropy training of the adapter's GCN weights with Adam, a
// warmup first epoch and cosine decay afterwards; plus the sweep driver.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "graph_adapter/adapter.hpp"
#include "graph_adapter/classifier.hpp"
#include "graph_adapter/embedstore.hpp"
#include "graph_adapter/error.hpp"
#include "graph_adapter/graphkit.hpp"

namespace graph_adapter {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::uint32_t epochs = 100;
  double base_lr = 1e-3;
  double warmup_lr = 1e-5;
  std::uint32_t batch_size = 0;  // 0: full batch up to 256 samples, else 256
  std::uint64_t seed = 1;
  std::uint32_t shots = 16;
  AdapterConfig adapter;
  AdamHyper adam;

  void validate() const {
    if (epochs < 1) throw DataError("epochs must be at least 1");
    if (!(base_lr > 0.0) || !(warmup_lr > 0.0)) throw DataError("learning rates must be positive");
    adapter.validate();
  }

  std::size_t effective_batch_size(std::size_t samples) const {
    if (batch_size > 0) return std::min<std::size_t>(batch_size, samples);
    return samples <= 256 ? samples : 256;
  }
};

// Epoch 0 runs at the warmup rate; epochs 1..E-1 follow a half cosine from
// base_lr at epoch 1 down to exactly 0 at the last epoch.
inline double cosine_lr(std::uint32_t epoch, const TrainConfig& config) {
  if (epoch == 0) return config.warmup_lr;
  if (config.epochs <= 2) return config.base_lr;
  const double phase = static_cast<double>(epoch - 1) / static_cast<double>(config.epochs - 2);
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

struct CrossEntropy {
  double loss = 0.0;
  Eigen::MatrixXd d_logits;
};

// Mean negative log-softmax at the true label; gradient (softmax - onehot)/B.
inline CrossEntropy cross_entropy(const Eigen::MatrixXd& logits,
                                  std::span<const std::uint32_t> labels) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()))
    throw DimensionError("logit rows and label count differ");
  const Eigen::Index b = logits.rows();
  CrossEntropy out;
  out.d_logits.resize(b, logits.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    if (y >= logits.cols()) throw DataError("label out of range");
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    const double z = e.sum();
    out.loss += std::log(z) - (logits(i, y) - m);
    out.d_logits.row(i) = e / z;
    out.d_logits(i, y) -= 1.0;
  }
  out.loss /= static_cast<double>(b);
  out.d_logits /= static_cast<double>(b);
  return out;
}

struct AdamMoments {
  Eigen::MatrixXd first;
  Eigen::MatrixXd second;

  static AdamMoments zeros(Eigen::Index rows, Eigen::Index cols) {
    return {Eigen::MatrixXd::Zero(rows, cols), Eigen::MatrixXd::Zero(rows, cols)};
  }
};

// Bias-corrected Adam; t is the 1-based step count.
inline void adam_step(Eigen::MatrixXd& weights, const Eigen::MatrixXd& grads,
                      AdamMoments& moments, double lr, std::uint64_t t,
                      const AdamHyper& hyper = {}) {
  if (t < 1) throw DataError("Adam step count starts at 1");
  if (grads.rows() != weights.rows() || grads.cols() != weights.cols() ||
      moments.first.rows() != weights.rows() || moments.first.cols() != weights.cols())
    throw DimensionError("Adam shapes disagree");
  if (!grads.allFinite()) throw NumericError("non-finite gradient in Adam step");
  moments.first = hyper.beta1 * moments.first + (1.0 - hyper.beta1) * grads;
  moments.second = hyper.beta2 * moments.second + (1.0 - hyper.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  weights.array() -= lr * (moments.first.array() / c1) /
                     ((moments.second.array() / c2).sqrt() + hyper.epsilon);
}

struct LossAndGradients {
  double loss = 0.0;
  Eigen::MatrixXd logits;
  AdapterGradients grads;
};

// Full forward and backward pass for one batch of (unit-norm) images.
inline LossAndGradients loss_and_gradients(const AdapterState& state,
                                           const PartitionedGraph& graph,
                                           const Eigen::MatrixXd& images,
                                           std::span<const std::uint32_t> labels,
                                           double logit_scale, bool with_grads = true) {
  const Variant v = state.config.variant;
  std::optional<AdaptedBatch> classes;
  std::optional<AdaptedBatch> adapted_images;
  if (adapts_text(v)) classes = adapt_text_batch(state, graph);
  if (adapts_image(v)) adapted_images = adapt_image_batch(state, graph, images);
  const Eigen::MatrixXd& cls = classes ? classes->unit : graph.text_nodes;
  const Eigen::MatrixXd& img = adapted_images ? adapted_images->unit : images;

  LossAndGradients out;
  out.logits = classify_logits(cls, img, logit_scale);
  CrossEntropy ce = cross_entropy(out.logits, labels);
  out.loss = ce.loss;
  if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");
  if (!with_grads) return out;

  out.grads = AdapterGradients::zeros_like(state);
  const bool learnable = state.config.learnable_coefficients;
  if (classes) {
    const Eigen::MatrixXd d_cls = logit_scale * ce.d_logits.transpose() * img;
    backprop_batch(*classes, d_cls, learnable, out.grads);
  }
  if (adapted_images) {
    const Eigen::MatrixXd d_img = logit_scale * ce.d_logits * cls;
    backprop_batch(*adapted_images, d_img, learnable, out.grads);
  }
  return out;
}

struct EpochRecord {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_top1 = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double test_top1 = 0.0;
  double zero_shot_top1 = 0.0;
  double wall_ms = 0.0;
  std::size_t parameters = 0;
  TrainConfig config;
  std::uint64_t seed = 0;
  std::string dataset;

  double final_loss() const { return epochs.empty() ? 0.0 : epochs.back().loss; }
};

struct TrainResult {
  AdapterState state;
  PartitionedGraph graph;
  TrainReport report;
};

// Accuracy of a trained (or untrained) adapter on a bundle's test split.
inline double evaluate_test_top1(const AdapterState& state, const PartitionedGraph& graph,
                                 const EmbeddingBundle& bundle) {
  const AdaptedClassifier cls = adapt_classifier(state, graph);
  const Eigen::MatrixXd images = prepare_images(state, graph, test_matrix(bundle));
  return top1_accuracy(cls.features, images, bundle.test_labels, bundle.logit_scale);
}

inline TrainResult train(const EmbeddingBundle& bundle, const FewShotSplit& split,
                         const TrainConfig& config) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();

  TrainResult result;
  result.graph =
      build_partitioned_graph(bundle, split, config.adapter.max_graph_nodes, config.seed);
  result.state = make_adapter_state(config.adapter, bundle.dim, config.seed);
  AdapterState& state = result.state;
  const PartitionedGraph& graph = result.graph;

  const std::vector<std::uint32_t> rows = split.all_indices();
  if (rows.empty()) throw DataError("few-shot split is empty");
  Eigen::MatrixXd train_x(static_cast<Eigen::Index>(rows.size()), bundle.dim);
  std::vector<std::uint32_t> train_y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto f = bundle.train_row(rows[i]);
    for (std::uint32_t j = 0; j < bundle.dim; ++j)
      train_x(static_cast<Eigen::Index>(i), j) = f[j];
    train_y[i] = bundle.train_labels[rows[i]];
  }

  std::array<std::optional<AdamMoments>, 4> moments;
  for (std::size_t i = 0; i < 4; ++i)
    if (state.layers[i])
      moments[i] = AdamMoments::zeros(state.layers[i]->dim(), state.layers[i]->dim());
  AdamMoments alpha_m = AdamMoments::zeros(1, 1);
  AdamMoments beta_m = AdamMoments::zeros(1, 1);

  const std::size_t batch = config.effective_batch_size(rows.size());
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffle_rng = detail::make_rng(config.seed, detail::stream::shuffle);
  std::uint64_t step = 0;

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      Eigen::MatrixXd x(static_cast<Eigen::Index>(n), bundle.dim);
      std::vector<std::uint32_t> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x.row(static_cast<Eigen::Index>(i)) = train_x.row(static_cast<Eigen::Index>(order[start + i]));
        y[i] = train_y[order[start + i]];
      }
      LossAndGradients lg = loss_and_gradients(state, graph, x, y, bundle.logit_scale);
      loss_sum += lg.loss * static_cast<double>(n);
      const auto pred = argmax_rows(lg.logits);
      for (std::size_t i = 0; i < n; ++i) correct += pred[i] == y[i];

      ++step;
      for (std::size_t i = 0; i < 4; ++i)
        if (state.layers[i])
          adam_step(state.layers[i]->weight, lg.grads.weight[i], *moments[i], lr, step, config.adam);
      if (state.config.learnable_coefficients) {
        Eigen::MatrixXd a(1, 1), b(1, 1), ga(1, 1), gb(1, 1);
        a(0, 0) = state.alpha_logit;
        b(0, 0) = state.beta_logit;
        ga(0, 0) = lg.grads.alpha_logit;
        gb(0, 0) = lg.grads.beta_logit;
        adam_step(a, ga, alpha_m, lr, step, config.adam);
        adam_step(b, gb, beta_m, lr, step, config.adam);
        state.alpha_logit = a(0, 0);
        state.beta_logit = b(0, 0);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(order.size());
    rec.train_top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(order.size());
    if (!std::isfinite(rec.loss)) throw NumericError("epoch loss is not finite");
    result.report.epochs.push_back(rec);
  }

  TrainReport& report = result.report;
  report.test_top1 = evaluate_test_top1(state, graph, bundle);
  report.zero_shot_top1 =
      top1_accuracy(graph.text_nodes, test_matrix(bundle), bundle.test_labels, bundle.logit_scale);
  report.parameters = count_parameters(state);
  report.config = config;
  report.seed = config.seed;
  report.dataset = bundle.dataset;
  report.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return result;
}

inline nlohmann::json adapter_config_json(const AdapterConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"variant", to_string(c.variant)},
          {"max_graph_nodes", c.max_graph_nodes},
          {"learnable_coefficients", c.learnable_coefficients},
          {"activation", to_string(c.activation)}};
}

inline AdapterConfig adapter_config_from_json(const nlohmann::json& j) {
  AdapterConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.max_graph_nodes = j.at("max_graph_nodes").get<std::uint32_t>();
  c.learnable_coefficients = j.at("learnable_coefficients").get<bool>();
  const auto act = j.at("activation").get<std::string>();
  if (act == "tanh") c.activation = Activation::tanh;
  else if (act == "identity") c.activation = Activation::identity;
  else throw DataError("unknown activation '" + act + "'");
  c.validate();
  return c;
}

inline nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"base_lr", c.base_lr},
          {"warmup_lr", c.warmup_lr},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"shots", c.shots},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
          {"adapter", adapter_config_json(c.adapter)}};
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"train_top1", e.train_top1}});
  return {{"dataset", r.dataset},
          {"seed", r.seed},
          {"test_top1", r.test_top1},
          {"zero_shot_top1", r.zero_shot_top1},
          {"final_loss", r.final_loss()},
          {"parameters", r.parameters},
          {"wall_ms", r.wall_ms},
          {"config", train_config_json(r.config)},
          {"epochs", epochs}};
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepGrid {
  std::vector<Variant> variants{Variant::text};
  std::vector<double> alphas{0.6};
  std::vector<double> betas{0.7};
  std::vector<std::uint32_t> shots{16};
  std::vector<std::uint64_t> seeds{1};
  TrainConfig base;  // adapter alpha/beta/variant and shots/seed are overridden per run
};

struct SweepRow {
  Variant variant = Variant::text;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint32_t shots = 0;
  std::uint64_t seed = 0;
  double test_top1 = 0.0;
  double final_loss = 0.0;
  std::size_t params = 0;
  double wall_ms = 0.0;
  std::string error;  // empty on success
};

struct SweepCell {
  Variant variant = Variant::text;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint32_t shots = 0;
  std::size_t runs = 0;  // successful runs contributing to the statistics
  double mean_top1 = 0.0;
  double std_top1 = 0.0;  // sample standard deviation; 0 for a single run
};

struct SweepTable {
  std::vector<SweepRow> rows;    // grid order, seeds innermost
  std::vector<SweepCell> cells;  // grid order
};

inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GRAPH_ADAPTER_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

inline SweepTable sweep(const EmbeddingBundle& bundle, const SweepGrid& grid) {
  if (grid.variants.empty() || grid.alphas.empty() || grid.betas.empty() || grid.shots.empty() ||
      grid.seeds.empty())
    throw DataError("sweep grid has an empty axis");

  SweepTable table;
  for (auto v : grid.variants)
    for (double a : grid.alphas)
      for (double b : grid.betas)
        for (auto s : grid.shots)
          for (auto seed : grid.seeds) {
            SweepRow r;
            r.variant = v;
            r.alpha = a;
            r.beta = b;
            r.shots = s;
            r.seed = seed;
            table.rows.push_back(r);
          }

  auto run = [&](SweepRow& r) {
    try {
      TrainConfig cfg = grid.base;
      cfg.adapter.variant = r.variant;
      cfg.adapter.alpha = r.alpha;
      cfg.adapter.beta = r.beta;
      cfg.shots = r.shots;
      cfg.seed = r.seed;
      const FewShotSplit split = sample_few_shot(bundle, r.shots, r.seed);
      const TrainResult res = train(bundle, split, cfg);
      r.test_top1 = res.report.test_top1;
      r.final_loss = res.report.final_loss();
      r.params = res.report.parameters;
      r.wall_ms = res.report.wall_ms;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  };

  // Each row is written by exactly one worker; ordering is by grid index.
  std::atomic<std::size_t> next{0};
  const unsigned workers = std::min<unsigned>(worker_count(), static_cast<unsigned>(table.rows.size()));
  auto work = [&] {
    for (std::size_t i = next++; i < table.rows.size(); i = next++) run(table.rows[i]);
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  const std::size_t per_cell = grid.seeds.size();
  for (std::size_t at = 0; at < table.rows.size(); at += per_cell) {
    SweepCell c;
    const SweepRow& first = table.rows[at];
    c.variant = first.variant;
    c.alpha = first.alpha;
    c.beta = first.beta;
    c.shots = first.shots;
    std::vector<double> acc;
    for (std::size_t i = at; i < at + per_cell; ++i)
      if (table.rows[i].error.empty()) acc.push_back(table.rows[i].test_top1);
    c.runs = acc.size();
    if (!acc.empty()) {
      c.mean_top1 = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
      if (acc.size() > 1) {
        double ss = 0.0;
        for (double a : acc) ss += (a - c.mean_top1) * (a - c.mean_top1);
        c.std_top1 = std::sqrt(ss / static_cast<double>(acc.size() - 1));
      }
    }
    table.cells.push_back(c);
  }
  return table;
}

inline void write_sweep_csv(const SweepTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "variant,alpha,beta,shots,seed,test_top1,final_loss,params,wall_ms\n";
  for (const auto& r : table.rows) {
    out << to_string(r.variant) << ',' << r.alpha << ',' << r.beta << ',' << r.shots << ','
        << r.seed << ',';
    if (r.error.empty())
      out << r.test_top1 << ',' << r.final_loss << ',' << r.params << ',' << r.wall_ms << '\n';
    else
      out << "nan,nan,,\n";
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

inline void write_sweep_summary_csv(const SweepTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "variant,alpha,beta,shots,runs,mean_top1,std_top1\n";
  for (const auto& c : table.cells)
    out << to_string(c.variant) << ',' << c.alpha << ',' << c.beta << ',' << c.shots << ','
        << c.runs << ',' << c.mean_top1 << ',' << c.std_top1 << '\n';
  if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace graph_adapter
