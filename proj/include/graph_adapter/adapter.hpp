#pragma once

// The graph adapter. A query feature is inserted into both sub-graphs of its
// partition group, each expanded graph goes through its own GCN, the two
// row-0 outputs are fused with beta (same-modality branch weighted by beta),
// and the result is mixed back into the query with the alpha residual:
//
//   z' = beta * z_same + (1 - beta) * z_cross
//   z* = alpha * q + (1 - alpha) * z'

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "graph_adapter/error.hpp"
#include "graph_adapter/gcncore.hpp"
#include "graph_adapter/graphkit.hpp"

namespace graph_adapter {

// T adapts the text classifier, I adapts image features, TI does both.
enum class Variant { text, image, text_image };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::text: return "T";
    case Variant::image: return "I";
    case Variant::text_image: return "TI";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "T") return Variant::text;
  if (s == "I") return Variant::image;
  if (s == "TI" || s == "T&I") return Variant::text_image;
  throw DataError("unknown variant '" + std::string(s) + "' (expected T, I or TI)");
}

inline bool adapts_text(Variant v) { return v != Variant::image; }
inline bool adapts_image(Variant v) { return v != Variant::text; }

struct AdapterConfig {
  double alpha = 0.6;
  double beta = 0.7;
  Variant variant = Variant::text;
  std::uint32_t max_graph_nodes = 256;
  bool learnable_coefficients = false;
  Activation activation = Activation::tanh;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DataError("alpha must lie in [0, 1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw DataError("beta must lie in [0, 1]");
    if (max_graph_nodes < 2) throw DataError("max graph nodes must be at least 2");
  }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) {
  const double c = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(c / (1.0 - c));
}

}  // namespace detail

struct AdapterState {
  AdapterConfig config;
  std::array<std::optional<GcnLayer>, 4> layers;  // indexed by LayerRole
  // Unconstrained parameters behind learnable alpha/beta.
  double alpha_logit = 0.0;
  double beta_logit = 0.0;

  bool has(LayerRole r) const { return layers[static_cast<std::size_t>(r)].has_value(); }

  const GcnLayer& layer(LayerRole r) const {
    const auto& l = layers[static_cast<std::size_t>(r)];
    if (!l) throw DataError(std::string("adapter variant has no layer ") + to_string(r));
    return *l;
  }
  GcnLayer& layer(LayerRole r) {
    auto& l = layers[static_cast<std::size_t>(r)];
    if (!l) throw DataError(std::string("adapter variant has no layer ") + to_string(r));
    return *l;
  }

  double alpha() const {
    return config.learnable_coefficients ? detail::sigmoid(alpha_logit) : config.alpha;
  }
  double beta() const {
    return config.learnable_coefficients ? detail::sigmoid(beta_logit) : config.beta;
  }

  Eigen::Index dim() const {
    for (const auto& l : layers)
      if (l) return l->dim();
    return 0;
  }

  // Fixes alpha (e.g. the generalization setting) and drops learnability
  // of alpha while keeping the learned beta.
  AdapterState with_alpha(double alpha) const {
    AdapterState s = *this;
    const double b = beta();
    s.config.alpha = alpha;
    s.config.beta = b;
    s.config.learnable_coefficients = false;
    s.config.validate();
    return s;
  }
};

inline std::vector<LayerRole> layer_roles(Variant v) {
  switch (v) {
    case Variant::text: return {LayerRole::tt, LayerRole::vt};
    case Variant::image: return {LayerRole::tv, LayerRole::vv};
    case Variant::text_image: return {LayerRole::tt, LayerRole::vt, LayerRole::tv, LayerRole::vv};
  }
  return {};
}

inline AdapterState make_adapter_state(const AdapterConfig& config, Eigen::Index dim,
                                       std::uint64_t seed) {
  config.validate();
  AdapterState s;
  s.config = config;
  for (auto role : layer_roles(config.variant))
    s.layers[static_cast<std::size_t>(role)] = init_gcn_layer(dim, role, seed, config.activation);
  s.alpha_logit = detail::logit(config.alpha);
  s.beta_logit = detail::logit(config.beta);
  return s;
}

inline std::size_t count_parameters(const AdapterState& s) {
  std::size_t n = 0;
  for (const auto& l : s.layers)
    if (l) n += l->parameter_count();
  if (s.config.learnable_coefficients) n += 2;
  return n;
}

// Everything the backward pass needs from one adapted query.
struct QueryTrace {
  Eigen::RowVectorXd query;
  Eigen::RowVectorXd same;   // row 0 of the same-modality GCN output
  Eigen::RowVectorXd cross;  // row 0 of the cross-modality GCN output
  Eigen::RowVectorXd fused;
  GcnTape same_tape;
  GcnTape cross_tape;
  LayerRole same_role = LayerRole::tt;
  LayerRole cross_role = LayerRole::vt;
  double alpha = 0.0;
  double beta = 0.0;
};

struct AdaptedFeature {
  Eigen::RowVectorXd value;  // z*, not renormalized
  QueryTrace trace;
};

// `modality` is the modality of the query itself: text queries use
// g_tt (text sub-graph) and g_vt (visual sub-graph); visual queries use
// g_vv and g_tv.
inline AdaptedFeature adapt_feature(const AdapterState& state,
                                    const Eigen::Ref<const Eigen::RowVectorXd>& query,
                                    const DualGraph& dual, Modality modality) {
  const bool text = modality == Modality::text;
  if (text && !adapts_text(state.config.variant))
    throw DataError("variant I cannot adapt text features");
  if (!text && !adapts_image(state.config.variant))
    throw DataError("variant T cannot adapt image features");

  AdaptedFeature out;
  QueryTrace& tr = out.trace;
  tr.query = query;
  tr.alpha = state.alpha();
  tr.beta = state.beta();
  tr.same_role = text ? LayerRole::tt : LayerRole::vv;
  tr.cross_role = text ? LayerRole::vt : LayerRole::tv;

  auto branch = [&](const KnowledgeSubGraph& sub, LayerRole role, GcnTape& tape) {
    const ExpandedGraph g = expand_with_query(sub, query);
    const NormalizedAdjacency adj = laplace_normalize(g.edges);
    GcnOutput res = gcn_forward_rows(state.layer(role), adj, g.nodes, {0});
    tape = std::move(res.tape);
    return Eigen::RowVectorXd(res.output.row(0));
  };
  const Modality other = text ? Modality::visual : Modality::text;
  tr.same = branch(dual.get(modality), tr.same_role, tr.same_tape);
  tr.cross = branch(dual.get(other), tr.cross_role, tr.cross_tape);

  tr.fused = tr.beta * tr.same + (1.0 - tr.beta) * tr.cross;
  out.value = tr.alpha * tr.query + (1.0 - tr.alpha) * tr.fused;
  return out;
}

inline Eigen::RowVectorXd adapt_image_feature(const AdapterState& state,
                                              const Eigen::Ref<const Eigen::RowVectorXd>& z_v,
                                              const PartitionedGraph& graph) {
  const auto g = graph.route(z_v, Modality::visual);
  return adapt_feature(state, z_v, graph.groups[g], Modality::visual).value;
}

struct AdapterGradients {
  std::array<Eigen::MatrixXd, 4> weight;  // empty where the layer is absent
  double alpha_logit = 0.0;
  double beta_logit = 0.0;

  static AdapterGradients zeros_like(const AdapterState& s) {
    AdapterGradients g;
    for (std::size_t i = 0; i < 4; ++i)
      if (s.layers[i]) g.weight[i] = Eigen::MatrixXd::Zero(s.layers[i]->dim(), s.layers[i]->dim());
    return g;
  }
};

// Accumulates the gradient of a scalar loss given dL/dz* for one query.
inline void backprop_feature(const QueryTrace& tr, const Eigen::RowVectorXd& d_value,
                             bool learnable, AdapterGradients& grads) {
  const Eigen::RowVectorXd d_fused = (1.0 - tr.alpha) * d_value;
  const Eigen::MatrixXd d_same = tr.beta * d_fused;
  const Eigen::MatrixXd d_cross = (1.0 - tr.beta) * d_fused;
  grads.weight[static_cast<std::size_t>(tr.same_role)] += gcn_backward(tr.same_tape, d_same).weight;
  grads.weight[static_cast<std::size_t>(tr.cross_role)] +=
      gcn_backward(tr.cross_tape, d_cross).weight;
  if (learnable) {
    const double d_alpha = d_value.dot(tr.query - tr.fused);
    const double d_beta = d_fused.dot(tr.same - tr.cross);
    grads.alpha_logit += d_alpha * tr.alpha * (1.0 - tr.alpha);
    grads.beta_logit += d_beta * tr.beta * (1.0 - tr.beta);
  }
}

// K x d final classifier, unit rows, class order of the bundle.
struct AdaptedClassifier {
  Eigen::MatrixXd features;
};

namespace detail {

inline Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw NumericError("cannot normalize adapted feature row " + std::to_string(i));
    out.row(i) = m.row(i) / n;
  }
  return out;
}

// d(x/|x|) pulled back to x, row by row.
inline Eigen::MatrixXd normalize_rows_backward(const Eigen::MatrixXd& raw,
                                               const Eigen::MatrixXd& unit,
                                               const Eigen::MatrixXd& d_unit) {
  Eigen::MatrixXd d_raw(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double n = raw.row(i).norm();
    d_raw.row(i) = (d_unit.row(i) - unit.row(i) * unit.row(i).dot(d_unit.row(i))) / n;
  }
  return d_raw;
}

}  // namespace detail

// A batch of adapted features with traces retained for backprop.
struct AdaptedBatch {
  Eigen::MatrixXd raw;   // z* rows
  Eigen::MatrixXd unit;  // renormalized z* rows
  std::vector<QueryTrace> traces;
};

// Class i's text node queries the sub-graphs of its own partition group.
inline AdaptedBatch adapt_text_batch(const AdapterState& state, const PartitionedGraph& graph) {
  const Eigen::MatrixXd& queries = graph.text_nodes;
  AdaptedBatch out;
  out.raw.resize(queries.rows(), queries.cols());
  out.traces.reserve(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index k = 0; k < queries.rows(); ++k) {
    auto a = adapt_feature(state, queries.row(k),
                           graph.group_for_class(static_cast<std::uint32_t>(k)), Modality::text);
    out.raw.row(k) = a.value;
    out.traces.push_back(std::move(a.trace));
  }
  out.unit = detail::normalize_rows(out.raw);
  return out;
}

inline AdaptedBatch adapt_image_batch(const AdapterState& state, const PartitionedGraph& graph,
                                      const Eigen::MatrixXd& images) {
  AdaptedBatch out;
  out.raw.resize(images.rows(), images.cols());
  out.traces.reserve(static_cast<std::size_t>(images.rows()));
  for (Eigen::Index b = 0; b < images.rows(); ++b) {
    const auto g = graph.route(images.row(b), Modality::visual);
    auto a = adapt_feature(state, images.row(b), graph.groups[g], Modality::visual);
    out.raw.row(b) = a.value;
    out.traces.push_back(std::move(a.trace));
  }
  out.unit = detail::normalize_rows(out.raw);
  return out;
}

inline void backprop_batch(const AdaptedBatch& batch, const Eigen::MatrixXd& d_unit,
                           bool learnable, AdapterGradients& grads) {
  const Eigen::MatrixXd d_raw = detail::normalize_rows_backward(batch.raw, batch.unit, d_unit);
  for (std::size_t i = 0; i < batch.traces.size(); ++i)
    backprop_feature(batch.traces[i], d_raw.row(static_cast<Eigen::Index>(i)), learnable, grads);
}

// The classifier used at inference. Variant I leaves the text nodes alone.
inline AdaptedClassifier adapt_classifier(const AdapterState& state,
                                          const PartitionedGraph& graph) {
  if (!adapts_text(state.config.variant)) return {graph.text_nodes};
  return {adapt_text_batch(state, graph).unit};
}

// Image features as seen by the classifier: adapted for I/TI, else as-is.
inline Eigen::MatrixXd prepare_images(const AdapterState& state, const PartitionedGraph& graph,
                                      const Eigen::MatrixXd& images) {
  if (!adapts_image(state.config.variant)) return images;
  return adapt_image_batch(state, graph, images).unit;
}

inline void write_classifier_csv(const AdaptedClassifier& classifier,
                                 const std::vector<std::string>& class_names,
                                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "class";
  for (Eigen::Index j = 0; j < classifier.features.cols(); ++j) out << ",dim_" << j;
  out << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < classifier.features.rows(); ++i) {
    const auto& name = class_names.at(static_cast<std::size_t>(i));
    if (name.find_first_of(",\"\n") != std::string::npos) {
      out << '"';
      for (char c : name) out << (c == '"' ? "\"\"" : std::string(1, c));
      out << '"';
    } else {
      out << name;
    }
    for (Eigen::Index j = 0; j < classifier.features.cols(); ++j)
      out << ',' << classifier.features(i, j);
    out << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace graph_adapter
