#pragma once

// Dual knowledge graph: per-class textual and visual nodes connected by
// cosine-similarity edges, query expansion, and class partitioning for
// large label sets.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "graph_adapter/detail/random.hpp"
#include "graph_adapter/embedstore.hpp"
#include "graph_adapter/error.hpp"

namespace graph_adapter {

enum class Modality { text, visual };

inline const char* to_string(Modality m) { return m == Modality::text ? "text" : "visual"; }

struct KnowledgeSubGraph {
  Eigen::MatrixXd nodes;  // K x d
  Eigen::MatrixXd edges;  // K x K cosine similarities
  Modality modality = Modality::text;

  Eigen::Index size() const noexcept { return nodes.rows(); }
  Eigen::Index dim() const noexcept { return nodes.cols(); }
};

struct DualGraph {
  KnowledgeSubGraph text;
  KnowledgeSubGraph visual;

  const KnowledgeSubGraph& get(Modality m) const { return m == Modality::text ? text : visual; }
};

// Query at row 0, sub-graph nodes below it.
struct ExpandedGraph {
  Eigen::MatrixXd nodes;  // (K+1) x d
  Eigen::MatrixXd edges;  // (K+1) x (K+1)
};

struct ClassPartition {
  std::vector<std::vector<std::uint32_t>> groups;  // ascending class ids per group
  std::vector<std::uint32_t> group_of;             // class id -> group
  std::uint32_t max_group_size = 0;
  std::uint32_t position_in_group(std::uint32_t cls) const {
    const auto& g = groups[group_of[cls]];
    return static_cast<std::uint32_t>(std::lower_bound(g.begin(), g.end(), cls) - g.begin());
  }
};

namespace detail {

inline Eigen::RowVectorXd unit_or_throw(const Eigen::RowVectorXd& v, const std::string& what) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DataError("degenerate node: " + what + " has zero norm");
  return v / n;
}

}  // namespace detail

// Renormalized mean over each class's prompt templates.
inline Eigen::MatrixXd build_text_nodes(const EmbeddingBundle& b) {
  const auto k = static_cast<Eigen::Index>(b.num_classes());
  Eigen::MatrixXd nodes(k, b.dim);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(b.dim);
    for (std::uint32_t t = 0; t < b.num_templates; ++t) {
      const auto f = b.text_feature(static_cast<std::size_t>(c), t);
      for (std::uint32_t j = 0; j < b.dim; ++j) mean(j) += f[j];
    }
    mean /= static_cast<double>(b.num_templates);
    nodes.row(c) = detail::unit_or_throw(mean, "text node of class '" + b.class_names[c] + "'");
  }
  return nodes;
}

// Renormalized mean of the few-shot rows (all augmented views) per class.
inline Eigen::MatrixXd build_visual_nodes(const EmbeddingBundle& b, const FewShotSplit& split) {
  const auto k = static_cast<Eigen::Index>(b.num_classes());
  if (split.per_class.size() != b.num_classes())
    throw DimensionError("split covers " + std::to_string(split.per_class.size()) +
                         " classes, bundle has " + std::to_string(b.num_classes()));
  Eigen::MatrixXd nodes(k, b.dim);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto& rows = split.per_class[c];
    if (rows.empty())
      throw DataError("missing class: no selected train rows for class '" + b.class_names[c] + "'");
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(b.dim);
    for (auto r : rows) {
      const auto f = b.train_row(r);
      for (std::uint32_t j = 0; j < b.dim; ++j) mean(j) += f[j];
    }
    mean /= static_cast<double>(rows.size());
    nodes.row(c) = detail::unit_or_throw(mean, "visual node of class '" + b.class_names[c] + "'");
  }
  return nodes;
}

inline Eigen::MatrixXd cosine_edges(const Eigen::MatrixXd& nodes) {
  Eigen::VectorXd norms = nodes.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > 0.0)) throw DataError("zero-norm node at row " + std::to_string(i));
  const Eigen::MatrixXd unit = norms.cwiseInverse().asDiagonal() * nodes;
  Eigen::MatrixXd e = unit * unit.transpose();
  // Exact symmetry and unit diagonal regardless of rounding in the product.
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    e(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < e.cols(); ++j) e(j, i) = e(i, j);
  }
  return e;
}

inline KnowledgeSubGraph make_subgraph(Eigen::MatrixXd nodes, Modality modality) {
  KnowledgeSubGraph g;
  g.edges = cosine_edges(nodes);
  g.nodes = std::move(nodes);
  g.modality = modality;
  return g;
}

inline DualGraph make_dual_graph(const Eigen::MatrixXd& text_nodes,
                                 const Eigen::MatrixXd& visual_nodes) {
  if (text_nodes.rows() != visual_nodes.rows() || text_nodes.cols() != visual_nodes.cols())
    throw DimensionError("text and visual node matrices differ in shape");
  return {make_subgraph(text_nodes, Modality::text), make_subgraph(visual_nodes, Modality::visual)};
}

inline ExpandedGraph expand_with_query(const KnowledgeSubGraph& sub,
                                       const Eigen::Ref<const Eigen::RowVectorXd>& query) {
  if (query.size() != sub.dim())
    throw DimensionError("query has dimension " + std::to_string(query.size()) +
                         ", graph nodes have " + std::to_string(sub.dim()));
  const double qn = query.norm();
  if (!(qn > 0.0)) throw DataError("zero query vector");

  const Eigen::Index k = sub.size();
  ExpandedGraph g;
  g.nodes.resize(k + 1, sub.dim());
  g.nodes.row(0) = query;
  g.nodes.bottomRows(k) = sub.nodes;

  g.edges.resize(k + 1, k + 1);
  g.edges(0, 0) = 1.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double s = query.dot(sub.nodes.row(i)) / (qn * sub.nodes.row(i).norm());
    g.edges(0, 1 + i) = s;
    g.edges(1 + i, 0) = s;
  }
  g.edges.bottomRightCorner(k, k) = sub.edges;
  return g;
}

// Balanced random assignment into ceil(K/M) groups; group sizes differ by at
// most one. K <= M yields a single group in class order.
inline ClassPartition partition_classes(std::uint32_t num_classes, std::uint32_t max_nodes,
                                        std::uint64_t seed) {
  if (max_nodes < 2) throw DataError("max graph nodes must be at least 2");
  ClassPartition p;
  p.max_group_size = max_nodes;
  p.group_of.assign(num_classes, 0);
  std::vector<std::uint32_t> order(num_classes);
  std::iota(order.begin(), order.end(), 0u);
  if (num_classes <= max_nodes) {
    p.groups.push_back(std::move(order));
    return p;
  }
  auto rng = detail::make_rng(seed, detail::stream::partition);
  std::shuffle(order.begin(), order.end(), rng);

  const std::uint32_t n_groups = (num_classes + max_nodes - 1) / max_nodes;
  const std::uint32_t base = num_classes / n_groups;
  const std::uint32_t extra = num_classes % n_groups;
  std::size_t at = 0;
  for (std::uint32_t g = 0; g < n_groups; ++g) {
    const std::uint32_t size = base + (g < extra ? 1 : 0);
    std::vector<std::uint32_t> group(order.begin() + at, order.begin() + at + size);
    std::sort(group.begin(), group.end());
    for (auto c : group) p.group_of[c] = g;
    p.groups.push_back(std::move(group));
    at += size;
  }
  return p;
}

// The frozen graph used for a whole training run: one dual graph per
// partition group, plus the full node sets for routing.
struct PartitionedGraph {
  ClassPartition partition;
  std::vector<DualGraph> groups;
  Eigen::MatrixXd text_nodes;
  Eigen::MatrixXd visual_nodes;

  std::uint32_t num_classes() const noexcept {
    return static_cast<std::uint32_t>(text_nodes.rows());
  }
  Eigen::Index dim() const noexcept { return text_nodes.cols(); }

  const DualGraph& group_for_class(std::uint32_t cls) const {
    return groups[partition.group_of.at(cls)];
  }

  // Images carry no label at inference; they go to the group owning the
  // most similar node of the same modality.
  std::uint32_t route(const Eigen::Ref<const Eigen::RowVectorXd>& query, Modality m) const {
    if (groups.size() == 1) return 0;
    const Eigen::MatrixXd& nodes = m == Modality::text ? text_nodes : visual_nodes;
    const Eigen::VectorXd sims = nodes * query.transpose();
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < sims.size(); ++i)
      if (sims(i) > sims(best)) best = i;
    return partition.group_of[static_cast<std::size_t>(best)];
  }
};

inline PartitionedGraph build_partitioned_graph(const Eigen::MatrixXd& text_nodes,
                                                const Eigen::MatrixXd& visual_nodes,
                                                std::uint32_t max_nodes, std::uint64_t seed) {
  if (text_nodes.rows() != visual_nodes.rows() || text_nodes.cols() != visual_nodes.cols())
    throw DimensionError("text and visual node matrices differ in shape");
  PartitionedGraph pg;
  pg.partition =
      partition_classes(static_cast<std::uint32_t>(text_nodes.rows()), max_nodes, seed);
  pg.text_nodes = text_nodes;
  pg.visual_nodes = visual_nodes;
  for (const auto& group : pg.partition.groups) {
    Eigen::MatrixXd t(group.size(), text_nodes.cols());
    Eigen::MatrixXd v(group.size(), text_nodes.cols());
    for (std::size_t i = 0; i < group.size(); ++i) {
      t.row(static_cast<Eigen::Index>(i)) = text_nodes.row(group[i]);
      v.row(static_cast<Eigen::Index>(i)) = visual_nodes.row(group[i]);
    }
    pg.groups.push_back(make_dual_graph(t, v));
  }
  return pg;
}

inline PartitionedGraph build_partitioned_graph(const EmbeddingBundle& b, const FewShotSplit& split,
                                                std::uint32_t max_nodes, std::uint64_t seed) {
  return build_partitioned_graph(build_text_nodes(b), build_visual_nodes(b, split), max_nodes,
                                 seed);
}

}  // namespace graph_adapter
