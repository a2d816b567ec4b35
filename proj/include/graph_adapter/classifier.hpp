#pragma once

// Cosine-similarity softmax classifier over unit-norm features:
// logits = s * <image, class>, probabilities = softmax(logits).

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "graph_adapter/error.hpp"

namespace graph_adapter {

inline Eigen::MatrixXd classify_logits(const Eigen::MatrixXd& classifier,
                                       const Eigen::MatrixXd& images, double logit_scale) {
  if (classifier.cols() != images.cols())
    throw DimensionError("classifier dimension " + std::to_string(classifier.cols()) +
                         " does not match image dimension " + std::to_string(images.cols()));
  return logit_scale * (images * classifier.transpose());
}

// Row-wise argmax; ties go to the lowest class index.
inline std::vector<std::uint32_t> argmax_rows(const Eigen::MatrixXd& logits) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k)
      if (logits(i, k) > logits(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
  }
  return out;
}

inline std::vector<std::uint32_t> predict(const Eigen::MatrixXd& classifier,
                                          const Eigen::MatrixXd& images) {
  return argmax_rows(classify_logits(classifier, images, 1.0));
}

inline double accuracy_percent(std::span<const std::uint32_t> predicted,
                               std::span<const std::uint32_t> labels) {
  if (labels.empty()) throw DataError("empty evaluation set");
  if (predicted.size() != labels.size()) throw DimensionError("prediction/label count mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

// Cosine scoring: classifier rows are rescaled to unit norm, so the result
// does not depend on row length or on a positive logit scale.
inline double top1_accuracy(const Eigen::MatrixXd& classifier, const Eigen::MatrixXd& features,
                            std::span<const std::uint32_t> labels, double logit_scale) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw DimensionError("feature/label count mismatch");
  if (labels.empty()) throw DataError("empty evaluation set");
  Eigen::MatrixXd unit = classifier;
  for (Eigen::Index k = 0; k < unit.rows(); ++k) {
    const double n = unit.row(k).norm();
    if (!(n > 0.0)) throw DataError("classifier row " + std::to_string(k) + " has zero norm");
    if (n != 1.0) unit.row(k) /= n;
  }
  return accuracy_percent(argmax_rows(classify_logits(unit, features, logit_scale)), labels);
}

}  // namespace graph_adapter
