#pragma once

// GAW1 trained-weight files:
//   "GAW1" | u32 LE header length | JSON header | f64 LE weights
// Layers are stored row-major, in the order g_tt, g_vt, g_tv, g_vv,
// skipping layers the variant does not have. The header records
// everything needed to rebuild the graph from the training bundle.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graph_adapter/adapter.hpp"
#include "graph_adapter/detail/binary.hpp"
#include "graph_adapter/error.hpp"
#include "graph_adapter/trainer.hpp"

namespace graph_adapter {

inline constexpr char kWeightsMagic[4] = {'G', 'A', 'W', '1'};

struct WeightFile {
  AdapterState state;
  TrainConfig train_config;
  std::string dataset;
  std::uint32_t dim = 0;
};

inline std::vector<std::uint8_t> encode_weights(const WeightFile& wf) {
  nlohmann::json layers = nlohmann::json::array();
  for (auto role : layer_roles(wf.state.config.variant)) layers.push_back(to_string(role));
  const nlohmann::json header = {
      {"version", 1},
      {"dim", wf.dim},
      {"dataset", wf.dataset},
      {"layers", layers},
      {"alpha_logit", wf.state.alpha_logit},
      {"beta_logit", wf.state.beta_logit},
      {"adapter", adapter_config_json(wf.state.config)},
      {"train", train_config_json(wf.train_config)},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  detail::put_bytes(out, {kWeightsMagic, 4});
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  detail::put_bytes(out, text);
  for (auto role : layer_roles(wf.state.config.variant)) {
    const auto& w = wf.state.layer(role).weight;
    if (w.rows() != wf.dim || w.cols() != wf.dim)
      throw DimensionError(std::string("layer ") + to_string(role) + " does not match dim");
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) detail::put_f64(out, w(i, j));
  }
  return out;
}

inline WeightFile decode_weights(std::span<const std::uint8_t> bytes) {
  detail::Reader in(bytes);
  const std::string magic = in.bytes(4, "magic");
  if (magic != std::string_view(kWeightsMagic, 4))
    throw FormatError(BundleErrc::bad_magic, "expected magic 'GAW1', found '" + magic + "'", 0);
  const std::uint32_t len = in.u32("header length");
  const std::size_t header_at = in.offset();
  const std::string text = in.bytes(len, "JSON header");

  WeightFile wf;
  try {
    const auto h = nlohmann::json::parse(text);
    wf.dim = h.at("dim").get<std::uint32_t>();
    wf.dataset = h.at("dataset").get<std::string>();
    wf.state.config = adapter_config_from_json(h.at("adapter"));
    wf.state.alpha_logit = h.at("alpha_logit").get<double>();
    wf.state.beta_logit = h.at("beta_logit").get<double>();
    const auto& t = h.at("train");
    wf.train_config.epochs = t.at("epochs").get<std::uint32_t>();
    wf.train_config.base_lr = t.at("base_lr").get<double>();
    wf.train_config.warmup_lr = t.at("warmup_lr").get<double>();
    wf.train_config.batch_size = t.at("batch_size").get<std::uint32_t>();
    wf.train_config.seed = t.at("seed").get<std::uint64_t>();
    wf.train_config.shots = t.at("shots").get<std::uint32_t>();
    wf.train_config.adam.beta1 = t.at("adam").at("beta1").get<double>();
    wf.train_config.adam.beta2 = t.at("adam").at("beta2").get<double>();
    wf.train_config.adam.epsilon = t.at("adam").at("epsilon").get<double>();
    wf.train_config.adapter = wf.state.config;
    std::vector<std::string> names = h.at("layers").get<std::vector<std::string>>();
    std::vector<std::string> expected;
    for (auto role : layer_roles(wf.state.config.variant)) expected.emplace_back(to_string(role));
    if (names != expected)
      throw FormatError(BundleErrc::bad_header, "layer list does not match variant", header_at,
                        "layers");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(BundleErrc::bad_header, std::string("invalid weight header: ") + e.what(),
                      header_at);
  }
  if (wf.dim == 0) throw FormatError(BundleErrc::invalid_field, "dim must be positive", header_at, "dim");

  const auto roles = layer_roles(wf.state.config.variant);
  const std::uint64_t payload = 8ULL * wf.dim * wf.dim * roles.size();
  if (in.remaining() < payload)
    throw FormatError(BundleErrc::truncated,
                      "weights need " + std::to_string(payload) + " bytes, file has " +
                          std::to_string(in.remaining()),
                      in.offset());
  if (in.remaining() > payload)
    throw FormatError(BundleErrc::size_mismatch, "trailing bytes after weights",
                      in.offset() + payload);
  for (auto role : roles) {
    GcnLayer layer;
    layer.role = role;
    layer.activation = wf.state.config.activation;
    layer.weight.resize(wf.dim, wf.dim);
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        const std::size_t at = in.offset();
        layer.weight(i, j) = in.f64(to_string(role));
        if (!std::isfinite(layer.weight(i, j)))
          throw FormatError(BundleErrc::non_finite, "non-finite weight", at, to_string(role));
      }
    wf.state.layers[static_cast<std::size_t>(role)] = std::move(layer);
  }
  return wf;
}

inline void save_weights(const WeightFile& wf, const std::string& path) {
  detail::write_file(path, encode_weights(wf));
}

inline WeightFile load_weights(const std::string& path) {
  return decode_weights(detail::read_file(path));
}

inline WeightFile make_weight_file(const TrainResult& r, const EmbeddingBundle& bundle) {
  return {r.state, r.report.config, bundle.dataset, bundle.dim};
}

}  // namespace graph_adapter
