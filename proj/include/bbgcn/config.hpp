#pragma once

// Run configuration. Every key has a default; a JSON file overrides the
// defaults and command-line flags override the file. Unknown keys are
// rejected so typos do not silently fall back to defaults.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbgcn/backbone.hpp"
#include "bbgcn/data_ingest.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/label_graph.hpp"

namespace bbgcn {

using Json = nlohmann::ordered_json;

struct TrainConfig {
  // Label graph.
  double epsilon = 0.3;
  double delta = 0.2;
  std::string reweight_axis = "row";
  bool graph_include_val = false;

  // Fusion head.
  std::int64_t G = 64;
  std::int64_t g = 6;
  std::int64_t d3 = 384;

  // GCN.
  std::vector<std::int64_t> gcn_dims{300, 1024, 768};
  double leaky_slope = 0.2;
  bool gcn_final_linear = false;

  // Features.
  std::int64_t d1 = 768;
  std::string provider = "precomputed";
  std::int64_t mlp_hidden = 64;

  // Optimization.
  std::int64_t epochs = 30;
  std::int64_t batch_size = 32;
  std::uint64_t seed = 0;
  double lr_lce = 0.01;
  double lr_main = 0.001;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  std::int64_t decay_every = 10;
  double decay_factor = 0.1;
  bool finetune_embeddings = false;
  std::string model = "bbgcn";  // or "linear_head"

  // Data.
  std::string label_format = "pipe";  // or "columnar"
  bool labels_header = false;
  std::string uncertain_policy = "as_positive";
  std::string no_finding_token = "No Finding";
  bool include_no_finding = true;
  std::vector<std::string> vocab;     // empty: preset or inferred
  std::string vocab_preset;           // "", "chestxray14", "chexpert"
  std::vector<double> split{0.7, 0.1, 0.2};

  // Embeddings. Empty path means synthetic vectors of width gcn_dims[0].
  std::string embeddings;
  std::uint64_t embedding_seed = 0;
  bool embedding_fallback = false;

  // Paths.
  std::string labels;
  std::string features;
  std::string out_dir = "out";

  void validate() const {
    auto fail = [](const std::string& m) { throw InputError("config: " + m); };
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) fail("epsilon must lie in [0, 1]");
    if (!(delta >= 0.0 && delta < 1.0)) fail("delta must lie in [0, 1)");
    if (reweight_axis != "row" && reweight_axis != "col") fail("reweight_axis must be row or col");
    if (G < 1 || g < 1 || d3 < 1 || d1 < 1) fail("G, g, d3 and d1 must be positive");
    if (gcn_dims.size() < 2) fail("gcn_dims needs at least two entries");
    for (auto d : gcn_dims)
      if (d < 1) fail("gcn_dims entries must be positive");
    if (!(leaky_slope > 0.0)) fail("leaky_slope must be positive");
    backbone::parse_provider_kind(provider);
    if (mlp_hidden < 1) fail("mlp_hidden must be positive");
    if (epochs < 1 || batch_size < 1) fail("epochs and batch_size must be positive");
    if (!(lr_lce > 0.0 && lr_main > 0.0)) fail("learning rates must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (decay_every < 1 || !(decay_factor > 0.0 && decay_factor <= 1.0))
      fail("decay_every must be >= 1 and decay_factor in (0, 1]");
    if (model != "bbgcn" && model != "linear_head") fail("model must be bbgcn or linear_head");
    if (label_format != "pipe" && label_format != "columnar")
      fail("label_format must be pipe or columnar");
    data::parse_uncertain_policy(uncertain_policy);
    if (!vocab_preset.empty() && vocab_preset != "chestxray14" && vocab_preset != "chexpert")
      fail("vocab_preset must be chestxray14 or chexpert");
    if (split.size() != 3) fail("split needs three ratios");
  }

  graph::ReweightAxis axis() const {
    return reweight_axis == "col" ? graph::ReweightAxis::column : graph::ReweightAxis::row;
  }
  data::SplitRatios split_ratios() const { return {split[0], split[1], split[2]}; }
  backbone::ProviderKind provider_kind() const { return backbone::parse_provider_kind(provider); }
};

#define BBGCN_CONFIG_FIELDS(X)                                                                    \
  X(epsilon) X(delta) X(reweight_axis) X(graph_include_val) X(G) X(g) X(d3) X(gcn_dims)           \
  X(leaky_slope) X(gcn_final_linear) X(d1) X(provider) X(mlp_hidden) X(epochs) X(batch_size)     \
  X(seed) X(lr_lce) X(lr_main) X(momentum) X(weight_decay) X(decay_every) X(decay_factor)         \
  X(finetune_embeddings) X(model) X(label_format) X(labels_header) X(uncertain_policy)            \
  X(no_finding_token) X(include_no_finding) X(vocab) X(vocab_preset) X(split) X(embeddings)      \
  X(embedding_seed) X(embedding_fallback) X(labels) X(features) X(out_dir)

inline Json to_json(const TrainConfig& c) {
  Json j;
#define BBGCN_TO(name) j[#name] = c.name;
  BBGCN_CONFIG_FIELDS(BBGCN_TO)
#undef BBGCN_TO
  return j;
}

/// Applies the keys present in `j` on top of `base`.
inline TrainConfig merge_config(TrainConfig base, const Json& j) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    try {
#define BBGCN_FROM(name)                         \
  if (key == #name) {                            \
    value.get_to(base.name);                     \
    known = true;                                \
  }
      BBGCN_CONFIG_FIELDS(BBGCN_FROM)
#undef BBGCN_FROM
    } catch (const nlohmann::json::exception& e) {
      throw InputError("config key '" + key + "': " + e.what());
    }
    if (!known) throw InputError("unknown config key '" + key + "'");
  }
  return base;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("config file " + path + ": " + e.what());
  }
  return merge_config(TrainConfig{}, j);
}

inline Json to_json(const backbone::SyntheticSpec& s) {
  Json edges = Json::array();
  for (const auto& e : s.edges) edges.push_back({{"from", e.from}, {"to", e.to}, {"strength", e.strength}});
  return {{"num_labels", s.num_labels}, {"feature_dim", s.feature_dim},
          {"num_samples", s.num_samples}, {"edges", edges},
          {"base_rates", s.base_rates},   {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

}  // namespace bbgcn
