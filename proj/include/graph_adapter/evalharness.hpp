#pragma once

// Evaluation: top-1 accuracy, cross-domain transfer with name-aligned
// classes, and node-drift export.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "graph_adapter/adapter.hpp"
#include "graph_adapter/classifier.hpp"
#include "graph_adapter/embedstore.hpp"
#include "graph_adapter/error.hpp"
#include "graph_adapter/graphkit.hpp"

namespace graph_adapter {

struct DatasetScore {
  std::string dataset;
  double top1 = 0.0;
};

struct EvalResult {
  std::string tag;  // "Ours", "Ours_g", ...
  std::string variant;
  double alpha = 0.0;
  DatasetScore source;
  std::vector<DatasetScore> targets;
  double average = 0.0;  // over targets only; source top-1 when there are none
};

// Maps each target class onto its source row by exact name.
inline std::vector<std::uint32_t> align_classes(const std::vector<std::string>& source_names,
                                                const std::vector<std::string>& target_names) {
  std::unordered_map<std::string, std::uint32_t> index;
  for (std::uint32_t i = 0; i < source_names.size(); ++i) index.emplace(source_names[i], i);
  std::vector<std::uint32_t> rows;
  std::string missing;
  for (const auto& name : target_names) {
    auto it = index.find(name);
    if (it == index.end()) {
      missing += (missing.empty() ? "" : ", ") + ("'" + name + "'");
      continue;
    }
    rows.push_back(it->second);
  }
  if (!missing.empty()) throw DataError("class alignment failed; unknown classes: " + missing);
  return rows;
}

// Scores `bundle`'s test split with a classifier adapted on the source
// graph, restricted to the classes `bundle` names.
inline double evaluate_on(const AdapterState& state, const PartitionedGraph& graph,
                          const AdaptedClassifier& classifier,
                          const std::vector<std::string>& source_names,
                          const EmbeddingBundle& bundle) {
  if (static_cast<Eigen::Index>(bundle.dim) != classifier.features.cols())
    throw DimensionError("target dimension " + std::to_string(bundle.dim) +
                         " does not match classifier dimension " +
                         std::to_string(classifier.features.cols()));
  const auto rows = align_classes(source_names, bundle.class_names);
  Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), classifier.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    sub.row(static_cast<Eigen::Index>(i)) = classifier.features.row(rows[i]);
  const Eigen::MatrixXd images = prepare_images(state, graph, test_matrix(bundle));
  return top1_accuracy(sub, images, bundle.test_labels, bundle.logit_scale);
}

inline EvalResult evaluate_transfer(const AdapterState& state, const PartitionedGraph& graph,
                                    const EmbeddingBundle& source,
                                    const std::vector<EmbeddingBundle>& targets,
                                    std::string tag) {
  const AdaptedClassifier classifier = adapt_classifier(state, graph);
  EvalResult r;
  r.tag = std::move(tag);
  r.variant = to_string(state.config.variant);
  r.alpha = state.alpha();
  r.source = {source.dataset, evaluate_on(state, graph, classifier, source.class_names, source)};
  double sum = 0.0;
  for (const auto& t : targets) {
    r.targets.push_back({t.dataset, evaluate_on(state, graph, classifier, source.class_names, t)});
    sum += r.targets.back().top1;
  }
  r.average = targets.empty() ? r.source.top1 : sum / static_cast<double>(targets.size());
  return r;
}

struct CrossDomainJob {
  const EmbeddingBundle* source = nullptr;
  std::vector<EmbeddingBundle> targets;
  double alpha = 0.6;              // few-shot setting
  double generalized_alpha = 0.8;  // heavier residual for transfer
};

struct CrossDomainResult {
  EvalResult ours;
  EvalResult ours_g;
};

// Same weights and graph; the generalized run only raises alpha.
inline CrossDomainResult cross_domain_eval(const CrossDomainJob& job, const AdapterState& trained,
                                           const PartitionedGraph& graph) {
  if (job.source == nullptr) throw DataError("cross-domain job has no source bundle");
  return {evaluate_transfer(trained.with_alpha(job.alpha), graph, *job.source, job.targets, "Ours"),
          evaluate_transfer(trained.with_alpha(job.generalized_alpha), graph, *job.source,
                            job.targets, "Ours_g")};
}

inline nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : r.targets) targets.push_back({{"dataset", t.dataset}, {"top1", t.top1}});
  return {{"tag", r.tag},
          {"variant", r.variant},
          {"alpha", r.alpha},
          {"source", {{"dataset", r.source.dataset}, {"top1", r.source.top1}}},
          {"targets", targets},
          {"average", r.average}};
}

// Mean cosine over unordered pairs of distinct rows.
inline double mean_pairwise_cosine(const Eigen::MatrixXd& nodes) {
  const Eigen::Index k = nodes.rows();
  if (k < 2) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j)
      sum += nodes.row(i).dot(nodes.row(j)) / (nodes.row(i).norm() * nodes.row(j).norm());
  return sum / (0.5 * static_cast<double>(k) * static_cast<double>(k - 1));
}

struct DriftSummary {
  double mean_cosine_before = 0.0;
  double mean_cosine_after = 0.0;
  double mean_displacement = 0.0;  // mean L2 distance between matching rows

  double delta() const { return mean_cosine_after - mean_cosine_before; }
};

inline DriftSummary drift_summary(const Eigen::MatrixXd& before, const Eigen::MatrixXd& after) {
  if (before.rows() != after.rows() || before.cols() != after.cols())
    throw DimensionError("node matrices differ in shape");
  DriftSummary s;
  s.mean_cosine_before = mean_pairwise_cosine(before);
  s.mean_cosine_after = mean_pairwise_cosine(after);
  double disp = 0.0;
  for (Eigen::Index i = 0; i < before.rows(); ++i) disp += (after.row(i) - before.row(i)).norm();
  s.mean_displacement = before.rows() > 0 ? disp / static_cast<double>(before.rows()) : 0.0;
  return s;
}

inline nlohmann::json to_json(const DriftSummary& s) {
  return {{"mean_pairwise_cosine_before", s.mean_cosine_before},
          {"mean_pairwise_cosine_after", s.mean_cosine_after},
          {"mean_pairwise_cosine_delta", s.delta()},
          {"mean_displacement", s.mean_displacement}};
}

// Writes `path` (class,tag,dim_0..) for external projection and plotting,
// and the summary statistics to `path`.summary.json.
inline DriftSummary export_node_drift(const Eigen::MatrixXd& before, const Eigen::MatrixXd& after,
                                      const std::vector<std::string>& class_names,
                                      const std::string& path) {
  const DriftSummary s = drift_summary(before, after);
  {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "class,tag";
    for (Eigen::Index j = 0; j < before.cols(); ++j) out << ",dim_" << j;
    out << '\n';
    auto emit = [&](const Eigen::MatrixXd& m, const char* tag) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << class_names.at(static_cast<std::size_t>(i)) << ',' << tag;
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << m(i, j);
        out << '\n';
      }
    };
    emit(before, "before");
    emit(after, "after");
    if (!out) throw DataError("write to '" + path + "' failed");
  }
  std::ofstream summary(path + ".summary.json");
  if (!summary) throw DataError("cannot open '" + path + ".summary.json' for writing");
  summary << to_json(s).dump(2) << '\n';
  return s;
}

}  // namespace graph_adapter
