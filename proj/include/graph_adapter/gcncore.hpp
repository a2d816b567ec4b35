#pragma once

// Single-layer dense graph convolution, out = act(A_hat * X * W), with
// A_hat = D^-1/2 (E + I) D^-1/2 and exact reverse-mode gradients.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "graph_adapter/detail/random.hpp"
#include "graph_adapter/error.hpp"

namespace graph_adapter {

enum class Activation { tanh, identity };

// g_tt/g_vt adapt text queries against the text/visual sub-graph;
// g_vv/g_tv adapt image queries against the visual/text sub-graph.
enum class LayerRole : std::uint8_t { tt = 0, vt = 1, tv = 2, vv = 3 };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

inline const char* to_string(LayerRole r) {
  switch (r) {
    case LayerRole::tt: return "g_tt";
    case LayerRole::vt: return "g_vt";
    case LayerRole::tv: return "g_tv";
    case LayerRole::vv: return "g_vv";
  }
  return "?";
}

struct GcnLayer {
  Eigen::MatrixXd weight;  // d x d, no bias
  Activation activation = Activation::tanh;
  LayerRole role = LayerRole::tt;

  Eigen::Index dim() const noexcept { return weight.rows(); }
  std::size_t parameter_count() const noexcept {
    return static_cast<std::size_t>(weight.size());
  }
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline GcnLayer init_gcn_layer(Eigen::Index dim, LayerRole role, std::uint64_t seed,
                               Activation activation = Activation::tanh) {
  GcnLayer layer;
  layer.role = role;
  layer.activation = activation;
  layer.weight.resize(dim, dim);
  const double bound = std::sqrt(6.0 / static_cast<double>(2 * dim));
  auto rng = detail::make_rng(seed, detail::stream::init + static_cast<std::uint64_t>(role));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  // Fill row-major so the draw order does not depend on Eigen's storage.
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) layer.weight(i, j) = uniform(rng);
  return layer;
}

struct NormalizedAdjacency {
  Eigen::MatrixXd matrix;
  Eigen::Index size() const noexcept { return matrix.rows(); }
};

inline NormalizedAdjacency laplace_normalize(const Eigen::MatrixXd& edges) {
  const Eigen::Index n = edges.rows();
  if (edges.cols() != n) throw DimensionError("edge matrix must be square");
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::isfinite(edges(i, j)))
        throw NumericError("non-finite edge at (" + std::to_string(i) + ", " + std::to_string(j) +
                           ")");
      if (std::abs(edges(i, j) - edges(j, i)) > 1e-6)
        throw DataError("edge matrix is not symmetric at (" + std::to_string(i) + ", " +
                        std::to_string(j) + ")");
    }

  Eigen::VectorXd inv_sqrt_degree(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double degree = edges.row(i).sum() + 1.0;
    if (!(degree > 0.0))
      throw NumericError("normalization degeneracy: row " + std::to_string(i) +
                         " of E + I has non-positive sum " + std::to_string(degree));
    inv_sqrt_degree(i) = 1.0 / std::sqrt(degree);
  }

  NormalizedAdjacency out;
  out.matrix.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out.matrix(i, j) =
          (edges(i, j) + (i == j ? 1.0 : 0.0)) * inv_sqrt_degree(i) * inv_sqrt_degree(j);
  return out;
}

// Forward intermediates for the rows that were actually computed.
struct GcnTape {
  std::vector<Eigen::Index> rows;
  Eigen::MatrixXd adjacency_rows;  // r x n
  Eigen::MatrixXd nodes;           // n x d
  Eigen::MatrixXd aggregated;      // r x d, adjacency_rows * nodes
  Eigen::MatrixXd pre_activation;  // r x d, aggregated * W
  Eigen::MatrixXd weight;
  Activation activation = Activation::tanh;
};

struct GcnOutput {
  Eigen::MatrixXd output;  // r x d
  GcnTape tape;
};

struct GcnGradients {
  Eigen::MatrixXd weight;  // d x d
  Eigen::MatrixXd nodes;   // n x d
};

namespace detail {

inline void check_forward_shapes(const GcnLayer& layer, const NormalizedAdjacency& adj,
                                 const Eigen::MatrixXd& nodes) {
  if (layer.weight.rows() != layer.weight.cols()) throw DimensionError("GCN weight must be square");
  if (adj.size() != nodes.rows())
    throw DimensionError("adjacency is " + std::to_string(adj.size()) + "x" +
                         std::to_string(adj.size()) + " but there are " +
                         std::to_string(nodes.rows()) + " nodes");
  if (nodes.cols() != layer.weight.rows())
    throw DimensionError("node dimension " + std::to_string(nodes.cols()) +
                         " does not match weight side " + std::to_string(layer.weight.rows()));
}

inline Eigen::MatrixXd activate(const Eigen::MatrixXd& pre, Activation a) {
  return a == Activation::tanh ? Eigen::MatrixXd(pre.array().tanh()) : pre;
}

}  // namespace detail

// Computes only the requested output rows of act(A_hat X W).
inline GcnOutput gcn_forward_rows(const GcnLayer& layer, const NormalizedAdjacency& adj,
                                  const Eigen::MatrixXd& nodes,
                                  const std::vector<Eigen::Index>& rows) {
  detail::check_forward_shapes(layer, adj, nodes);
  GcnOutput out;
  GcnTape& tape = out.tape;
  tape.rows = rows;
  tape.adjacency_rows.resize(static_cast<Eigen::Index>(rows.size()), adj.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= adj.size())
      throw DimensionError("row " + std::to_string(rows[r]) + " out of range");
    tape.adjacency_rows.row(static_cast<Eigen::Index>(r)) = adj.matrix.row(rows[r]);
  }
  tape.nodes = nodes;
  tape.weight = layer.weight;
  tape.activation = layer.activation;
  tape.aggregated = tape.adjacency_rows * nodes;
  tape.pre_activation = tape.aggregated * layer.weight;
  out.output = detail::activate(tape.pre_activation, layer.activation);
  if (!out.output.allFinite())
    throw NumericError(std::string("numeric overflow in ") + to_string(layer.role) +
                       " forward pass");
  return out;
}

inline GcnOutput gcn_forward(const GcnLayer& layer, const NormalizedAdjacency& adj,
                             const Eigen::MatrixXd& nodes) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(adj.size()));
  for (Eigen::Index i = 0; i < adj.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return gcn_forward_rows(layer, adj, nodes, all);
}

// upstream has one row per computed output row.
inline GcnGradients gcn_backward(const GcnTape& tape, const Eigen::MatrixXd& upstream) {
  if (upstream.rows() != tape.pre_activation.rows() ||
      upstream.cols() != tape.pre_activation.cols())
    throw DimensionError("upstream gradient shape does not match the forward pass");
  Eigen::MatrixXd local = upstream;
  if (tape.activation == Activation::tanh)
    local.array() *= 1.0 - tape.pre_activation.array().tanh().square();
  GcnGradients g;
  g.weight = tape.aggregated.transpose() * local;
  g.nodes = tape.adjacency_rows.transpose() * (local * tape.weight.transpose());
  return g;
}

}  // namespace graph_adapter
