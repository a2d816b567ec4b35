#pragma once

// Cached-embedding bundles (CEB1): the on-disk stand-in for live CLIP
// encoders, plus few-shot sampling and a synthetic bundle generator.
//
// CEB1 layout, all integers little-endian:
//   "CEB1" | u32 header length H | H bytes of UTF-8 JSON header |
//   text f32[K*T*d] | train f32[N_train*d] | train labels u32[N_train] |
//   test f32[N_test*d] | test labels u32[N_test]

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "graph_adapter/detail/binary.hpp"
#include "graph_adapter/detail/random.hpp"
#include "graph_adapter/error.hpp"

namespace graph_adapter {

inline constexpr char kBundleMagic[4] = {'C', 'E', 'B', '1'};
inline constexpr int kBundleVersion = 1;
inline constexpr double kDefaultLogitScale = 100.0;

struct EmbeddingBundle {
  int version = kBundleVersion;
  std::uint32_t dim = 0;
  std::uint32_t num_templates = 1;
  std::vector<std::string> class_names;
  std::vector<float> text_features;   // K*T*d, class-major, template-second
  std::vector<float> train_features;  // N_train*d
  std::vector<std::uint32_t> train_labels;
  std::vector<float> test_features;  // N_test*d
  std::vector<std::uint32_t> test_labels;
  double logit_scale = kDefaultLogitScale;
  std::string backbone;
  std::string dataset;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  std::size_t num_train() const noexcept { return train_labels.size(); }
  std::size_t num_test() const noexcept { return test_labels.size(); }

  std::span<const float> text_feature(std::size_t cls, std::size_t tmpl) const {
    return {text_features.data() + (cls * num_templates + tmpl) * dim, dim};
  }
  std::span<const float> train_row(std::size_t i) const {
    return {train_features.data() + i * dim, dim};
  }
  std::span<const float> test_row(std::size_t i) const {
    return {test_features.data() + i * dim, dim};
  }
};

// Rows of a flat row-major f32 array as an f64 matrix.
inline Eigen::MatrixXd rows_to_matrix(std::span<const float> flat, std::size_t dim) {
  const auto n = dim == 0 ? 0 : flat.size() / dim;
  Eigen::MatrixXd m(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) m(i, j) = flat[i * dim + j];
  return m;
}

inline Eigen::MatrixXd train_matrix(const EmbeddingBundle& b) {
  return rows_to_matrix(b.train_features, b.dim);
}

inline Eigen::MatrixXd test_matrix(const EmbeddingBundle& b) {
  return rows_to_matrix(b.test_features, b.dim);
}

// Checks every structural invariant except unit norm (a load-time transform).
inline void validate_bundle(const EmbeddingBundle& b) {
  auto invalid = [](const std::string& msg, const std::string& field) {
    throw FormatError(BundleErrc::invalid_field, msg, std::nullopt, field);
  };
  if (b.dim == 0) invalid("dimension must be positive", "dim");
  if (b.num_classes() < 2)
    invalid("need at least 2 classes, got " + std::to_string(b.num_classes()), "num_classes");
  if (b.num_templates == 0) invalid("need at least one template", "num_templates");
  if (!(b.logit_scale > 0.0) || !std::isfinite(b.logit_scale))
    invalid("logit scale must be positive and finite", "logit_scale");

  std::unordered_set<std::string> seen;
  for (const auto& name : b.class_names) {
    if (!seen.insert(name).second)
      throw FormatError(BundleErrc::duplicate_class, "duplicate class name '" + name + "'",
                        std::nullopt, "class_names");
  }

  const std::size_t k = b.num_classes();
  if (b.text_features.size() != k * b.num_templates * b.dim)
    invalid("text feature count does not match K*T*d", "text_features");
  if (b.train_features.size() != b.num_train() * b.dim)
    invalid("train feature count does not match N_train*d", "train_features");
  if (b.test_features.size() != b.num_test() * b.dim)
    invalid("test feature count does not match N_test*d", "test_features");

  auto check_finite = [&](const std::vector<float>& v, const char* field) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!std::isfinite(v[i]))
        throw FormatError(BundleErrc::non_finite,
                          "non-finite value at element " + std::to_string(i), std::nullopt,
                          field);
  };
  check_finite(b.text_features, "text_features");
  check_finite(b.train_features, "train_features");
  check_finite(b.test_features, "test_features");

  auto check_labels = [&](const std::vector<std::uint32_t>& v, const char* field) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] >= k)
        invalid("label " + std::to_string(v[i]) + " at row " + std::to_string(i) +
                    " out of range",
                field);
  };
  check_labels(b.train_labels, "train_labels");
  check_labels(b.test_labels, "test_labels");
}

namespace detail {

// Rows already unit-norm to f32 precision are left untouched so that a
// saved-then-loaded bundle keeps its exact bits.
inline void normalize_rows(std::vector<float>& flat, std::size_t dim, const char* field) {
  const std::size_t n = flat.size() / dim;
  for (std::size_t i = 0; i < n; ++i) {
    float* row = flat.data() + i * dim;
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += static_cast<double>(row[j]) * row[j];
    const double norm = std::sqrt(sq);
    if (norm == 0.0)
      throw FormatError(BundleErrc::invalid_field, "zero-norm row " + std::to_string(i),
                        std::nullopt, field);
    if (std::abs(norm - 1.0) <= 1e-6) continue;
    for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<float>(row[j] / norm);
  }
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_bundle(const EmbeddingBundle& b) {
  validate_bundle(b);
  nlohmann::json header = {
      {"version", b.version},
      {"dim", b.dim},
      {"num_classes", b.num_classes()},
      {"num_templates", b.num_templates},
      {"num_train", b.num_train()},
      {"num_test", b.num_test()},
      {"logit_scale", b.logit_scale},
      {"class_names", b.class_names},
      {"backbone", b.backbone},
      {"dataset", b.dataset},
  };
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() +
              4 * (b.text_features.size() + b.train_features.size() + b.test_features.size() +
                   b.num_train() + b.num_test()));
  detail::put_bytes(out, {kBundleMagic, 4});
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  detail::put_bytes(out, text);
  for (float v : b.text_features) detail::put_f32(out, v);
  for (float v : b.train_features) detail::put_f32(out, v);
  for (auto v : b.train_labels) detail::put_u32(out, v);
  for (float v : b.test_features) detail::put_f32(out, v);
  for (auto v : b.test_labels) detail::put_u32(out, v);
  return out;
}

// Parses a CEB1 image. Does not normalize; see load_bundle.
inline EmbeddingBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  detail::Reader in(bytes);
  const std::string magic = in.bytes(4, "magic");
  if (magic != std::string_view(kBundleMagic, 4))
    throw FormatError(BundleErrc::bad_magic, "expected magic 'CEB1', found '" + magic + "'", 0);

  const std::uint32_t header_len = in.u32("header length");
  const std::size_t header_at = in.offset();
  const std::string header_text = in.bytes(header_len, "JSON header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(BundleErrc::bad_header, std::string("header is not valid JSON: ") + e.what(),
                      header_at);
  }

  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!header.is_object() || !header.contains(name))
      throw FormatError(BundleErrc::bad_header, "missing header field", header_at, name);
    return header.at(name);
  };
  auto count = [&](const char* name) -> std::uint64_t {
    const auto& v = field(name);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw FormatError(BundleErrc::bad_header, "expected a non-negative integer", header_at,
                        name);
    return v.get<std::uint64_t>();
  };
  auto text_field = [&](const char* name) -> std::string {
    const auto& v = field(name);
    if (!v.is_string())
      throw FormatError(BundleErrc::bad_header, "expected a string", header_at, name);
    return v.get<std::string>();
  };

  EmbeddingBundle b;
  b.version = static_cast<int>(count("version"));
  b.dim = static_cast<std::uint32_t>(count("dim"));
  const std::uint64_t k = count("num_classes");
  b.num_templates = static_cast<std::uint32_t>(count("num_templates"));
  const std::uint64_t n_train = count("num_train");
  const std::uint64_t n_test = count("num_test");
  if (header.contains("logit_scale") && !header["logit_scale"].is_null()) {
    if (!header["logit_scale"].is_number())
      throw FormatError(BundleErrc::bad_header, "expected a number", header_at, "logit_scale");
    b.logit_scale = header["logit_scale"].get<double>();
  }
  const auto& names = field("class_names");
  if (!names.is_array())
    throw FormatError(BundleErrc::bad_header, "expected an array", header_at, "class_names");
  for (const auto& n : names) {
    if (!n.is_string())
      throw FormatError(BundleErrc::bad_header, "class names must be strings", header_at,
                        "class_names");
    b.class_names.push_back(n.get<std::string>());
  }
  if (b.class_names.size() != k)
    throw FormatError(BundleErrc::size_mismatch,
                      "num_classes=" + std::to_string(k) + " but class_names has " +
                          std::to_string(b.class_names.size()) + " entries",
                      header_at, "class_names");
  b.backbone = text_field("backbone");
  b.dataset = text_field("dataset");
  if (b.dim == 0)
    throw FormatError(BundleErrc::invalid_field, "dimension must be positive", header_at, "dim");

  const std::uint64_t d = b.dim;
  const std::uint64_t payload = 4 * (k * b.num_templates * d + n_train * d + n_train +
                                     n_test * d + n_test);
  if (in.remaining() < payload)
    throw FormatError(BundleErrc::truncated,
                      "payload needs " + std::to_string(payload) + " bytes, file has " +
                          std::to_string(in.remaining()),
                      in.offset());
  if (in.remaining() > payload)
    throw FormatError(BundleErrc::size_mismatch,
                      std::to_string(in.remaining() - payload) + " trailing bytes after payload",
                      in.offset() + payload);

  auto read_floats = [&](std::vector<float>& dst, std::uint64_t n, const char* what) {
    dst.resize(n);
    for (auto& v : dst) {
      const std::size_t at = in.offset();
      v = in.f32(what);
      if (!std::isfinite(v))
        throw FormatError(BundleErrc::non_finite, "non-finite value", at, what);
    }
  };
  auto read_labels = [&](std::vector<std::uint32_t>& dst, std::uint64_t n, const char* what) {
    dst.resize(n);
    for (auto& v : dst) {
      const std::size_t at = in.offset();
      v = in.u32(what);
      if (v >= k)
        throw FormatError(BundleErrc::invalid_field,
                          "label " + std::to_string(v) + " out of range", at, what);
    }
  };
  read_floats(b.text_features, k * b.num_templates * d, "text_features");
  read_floats(b.train_features, n_train * d, "train_features");
  read_labels(b.train_labels, n_train, "train_labels");
  read_floats(b.test_features, n_test * d, "test_features");
  read_labels(b.test_labels, n_test, "test_labels");

  validate_bundle(b);
  return b;
}

inline void normalize_bundle(EmbeddingBundle& b) {
  detail::normalize_rows(b.text_features, b.dim, "text_features");
  detail::normalize_rows(b.train_features, b.dim, "train_features");
  detail::normalize_rows(b.test_features, b.dim, "test_features");
}

inline EmbeddingBundle load_bundle(const std::string& path) {
  const auto bytes = detail::read_file(path);
  EmbeddingBundle b = decode_bundle(bytes);
  normalize_bundle(b);
  return b;
}

inline void save_bundle(const EmbeddingBundle& b, const std::string& path) {
  const auto bytes = encode_bundle(b);
  detail::write_file(path, bytes);
}

struct FewShotSplit {
  std::vector<std::vector<std::uint32_t>> per_class;  // ascending train row indices
  std::uint32_t shots = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  // Ascending row order, so relabeling classes does not reorder samples.
  std::vector<std::uint32_t> all_indices() const {
    std::vector<std::uint32_t> out;
    for (const auto& rows : per_class) out.insert(out.end(), rows.begin(), rows.end());
    std::sort(out.begin(), out.end());
    return out;
  }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& rows : per_class) n += rows.size();
    return n;
  }
};

// Stratified sampling without replacement. Each class draws from a stream
// keyed by (seed, class name), so relabeling classes does not change which
// rows a class receives.
inline FewShotSplit sample_few_shot(const EmbeddingBundle& b, std::uint32_t shots,
                                    std::uint64_t seed) {
  if (shots == 0) throw DataError("shots must be at least 1");
  FewShotSplit split;
  split.shots = shots;
  split.seed = seed;
  split.per_class.resize(b.num_classes());

  std::vector<std::vector<std::uint32_t>> by_class(b.num_classes());
  for (std::uint32_t i = 0; i < b.num_train(); ++i) by_class[b.train_labels[i]].push_back(i);

  for (std::size_t c = 0; c < b.num_classes(); ++c) {
    auto rows = by_class[c];
    if (rows.size() <= shots) {
      if (rows.size() < shots)
        split.warnings.push_back("class '" + b.class_names[c] + "' has " +
                                 std::to_string(rows.size()) + " samples, fewer than " +
                                 std::to_string(shots) + " shots");
      split.per_class[c] = std::move(rows);
      continue;
    }
    auto rng = detail::make_rng(seed, detail::fnv1a(b.class_names[c]));
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(shots);
    std::sort(rows.begin(), rows.end());
    split.per_class[c] = std::move(rows);
  }
  return split;
}

struct SyntheticSpec {
  std::uint32_t num_classes = 20;
  std::uint32_t dim = 64;
  std::uint32_t per_class_train = 16;
  std::uint32_t per_class_test = 50;
  double anchor_noise = 0.6;
  double cluster_noise = 0.3;
  std::uint64_t seed = 7;
};

// Unit class-prototype directions; depend only on (K, d, seed).
inline Eigen::MatrixXd synthetic_prototypes(std::uint32_t num_classes, std::uint32_t dim,
                                            std::uint64_t seed) {
  auto rng = detail::make_rng(seed, detail::stream::prototypes);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd protos(num_classes, dim);
  for (Eigen::Index i = 0; i < protos.rows(); ++i) {
    for (Eigen::Index j = 0; j < protos.cols(); ++j) protos(i, j) = normal(rng);
    protos.row(i).normalize();
  }
  return protos;
}

// Prototype plus isotropic per-coordinate Gaussian noise, renormalized. Text
// anchors and image clusters draw from separate streams, so bundles that
// share a seed share prototypes and text features even when cluster noise
// differs.
inline EmbeddingBundle make_synthetic_bundle(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw DataError("synthetic bundle needs K >= 2");
  if (spec.dim < 4) throw DataError("synthetic bundle needs d >= 4");
  if (spec.anchor_noise < 0.0 || spec.cluster_noise < 0.0)
    throw DataError("noise levels must be non-negative");

  const Eigen::MatrixXd protos = synthetic_prototypes(spec.num_classes, spec.dim, spec.seed);
  const std::size_t d = spec.dim;

  auto noisy = [&](std::mt19937_64& rng, std::size_t cls, double sigma, std::vector<float>& dst) {
    Eigen::VectorXd v = protos.row(static_cast<Eigen::Index>(cls)).transpose();
    if (sigma > 0.0) {
      std::normal_distribution<double> normal(0.0, sigma);
      for (Eigen::Index j = 0; j < v.size(); ++j) v(j) += normal(rng);
    }
    v.normalize();
    for (std::size_t j = 0; j < d; ++j) dst.push_back(static_cast<float>(v(j)));
  };

  EmbeddingBundle b;
  b.dim = spec.dim;
  b.num_templates = 1;
  b.logit_scale = kDefaultLogitScale;
  b.backbone = "synthetic";
  b.dataset = "synthetic-K" + std::to_string(spec.num_classes) + "-d" + std::to_string(spec.dim) +
              "-seed" + std::to_string(spec.seed);
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%03u", c);
    b.class_names.emplace_back(name);
  }

  auto text_rng = detail::make_rng(spec.seed, detail::stream::text);
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    noisy(text_rng, c, spec.anchor_noise, b.text_features);

  auto train_rng = detail::make_rng(spec.seed, detail::stream::train);
  for (std::uint32_t c = 0; c < spec.num_classes; ++c)
    for (std::uint32_t i = 0; i < spec.per_class_train; ++i) {
      noisy(train_rng, c, spec.cluster_noise, b.train_features);
      b.train_labels.push_back(c);
    }

  auto test_rng = detail::make_rng(spec.seed, detail::stream::test);
  for (std::uint32_t c = 0; c < spec.num_classes; ++c)
    for (std::uint32_t i = 0; i < spec.per_class_test; ++i) {
      noisy(test_rng, c, spec.cluster_noise, b.test_features);
      b.test_labels.push_back(c);
    }

  validate_bundle(b);
  return b;
}

// Reorders classes so that new class i is old class perm[i]. Feature rows
// keep their positions; only labels and per-class arrays move.
inline EmbeddingBundle permute_classes(const EmbeddingBundle& b,
                                       std::span<const std::uint32_t> perm) {
  if (perm.size() != b.num_classes()) throw DimensionError("permutation size mismatch");
  std::vector<std::uint32_t> inverse(perm.size());
  for (std::uint32_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;

  EmbeddingBundle out = b;
  const std::size_t block = static_cast<std::size_t>(b.num_templates) * b.dim;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.class_names[i] = b.class_names[perm[i]];
    std::copy_n(b.text_features.begin() + perm[i] * block, block,
                out.text_features.begin() + i * block);
  }
  for (auto& l : out.train_labels) l = inverse[l];
  for (auto& l : out.test_labels) l = inverse[l];
  return out;
}

}  // namespace graph_adapter
