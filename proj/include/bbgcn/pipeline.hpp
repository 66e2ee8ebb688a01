#pragma once

// End-to-end orchestration shared by the command-line tool and the
// integration tests: resolve the vocabulary, load labels and features,
// build the label graph on the training split, train, evaluate and write
// the output files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bbgcn/backbone.hpp"
#include "bbgcn/checkpoint.hpp"
#include "bbgcn/config.hpp"
#include "bbgcn/data_ingest.hpp"
#include "bbgcn/embeddings.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/label_graph.hpp"
#include "bbgcn/metrics.hpp"
#include "bbgcn/training.hpp"

namespace bbgcn::pipeline {

namespace fs = std::filesystem;

/// Rounds to 12 significant digits so the JSON printer emits at most 12.
inline double round12(double v) {
  if (!std::isfinite(v)) return v;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::strtod(buf, nullptr);
}

inline Json matrix_json(const Matrix& m, bool round = true) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(round ? round12(m(i, j)) : m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json count_json(const CountMatrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json graph_json(const data::LabelVocabulary& vocab, const graph::CooccurrenceStats& stats,
                       const graph::CorrelationGraph& g) {
  Json T = Json::array();
  for (Eigen::Index j = 0; j < stats.single.size(); ++j) T.push_back(stats.single(j));
  Json out;
  out["vocabulary"] = vocab.labels();
  out["epsilon"] = g.epsilon;
  out["delta"] = g.delta;
  out["reweight_axis"] = g.axis == graph::ReweightAxis::row ? "row" : "col";
  out["T"] = T;
  out["T_pair"] = count_json(stats.pair);
  out["P"] = matrix_json(g.P);
  out["A"] = matrix_json(g.A);
  out["EA"] = matrix_json(g.EA);
  out["EA_norm"] = matrix_json(g.EA_norm);
  return out;
}

inline std::ifstream open_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw InputError("no " + what + " path configured");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + what + " file " + path);
  return in;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

inline data::LabelVocabulary resolve_vocabulary(const TrainConfig& cfg) {
  if (!cfg.vocab.empty()) return data::LabelVocabulary(cfg.vocab);
  if (cfg.vocab_preset == "chestxray14") return data::chestxray14_vocabulary();
  if (cfg.vocab_preset == "chexpert") return data::chexpert_vocabulary(cfg.include_no_finding);
  if (cfg.label_format == "columnar")
    throw InputError("columnar labels need an explicit vocab or vocab_preset");
  auto in = open_input(cfg.labels, "labels");
  return data::LabelVocabulary(data::infer_pipe_vocabulary(
      in, {cfg.labels_header, cfg.no_finding_token}));
}

struct Dataset {
  data::LabelVocabulary vocab;
  std::vector<data::LabeledSample> samples;
};

inline Dataset load_dataset(const TrainConfig& cfg) {
  auto vocab = resolve_vocabulary(cfg);
  auto in = open_input(cfg.labels, "labels");
  auto samples = cfg.label_format == "columnar"
                     ? data::parse_columnar_labels(in, vocab,
                                                   data::parse_uncertain_policy(cfg.uncertain_policy))
                     : data::parse_pipe_labels(in, vocab, {cfg.labels_header, cfg.no_finding_token});
  return {std::move(vocab), std::move(samples)};
}

inline backbone::SyntheticSpec synthetic_spec_from_json(const Json& j) {
  backbone::SyntheticSpec s;
  try {
    s.num_labels = j.at("num_labels").get<std::size_t>();
    s.feature_dim = j.at("feature_dim").get<Eigen::Index>();
    s.num_samples = j.at("num_samples").get<std::size_t>();
    for (const auto& e : j.at("edges"))
      s.edges.push_back({e.at("from").get<std::size_t>(), e.at("to").get<std::size_t>(),
                         e.at("strength").get<double>()});
    s.base_rates = j.at("base_rates").get<std::vector<double>>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// precomputed/toy_mlp read the feature file; synthetic regenerates the
/// features from a spec JSON written by `synth`.
inline backbone::FeatureProvider load_provider(const TrainConfig& cfg) {
  const auto kind = cfg.provider_kind();
  auto in = open_input(cfg.features, "features");
  if (kind == backbone::ProviderKind::synthetic) {
    Json j;
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("synthetic spec " + cfg.features + ": " + e.what());
    }
    return backbone::FeatureProvider::synthetic(synthetic_spec_from_json(j.contains("spec") ? j.at("spec") : j));
  }
  return backbone::FeatureProvider(kind, data::load_features(in));
}

inline Matrix label_embeddings(const TrainConfig& cfg, const data::LabelVocabulary& vocab,
                               std::vector<std::string>* warnings = nullptr) {
  if (cfg.embeddings.empty())
    return embed::synthetic_embeddings(vocab, cfg.gcn_dims.front(), cfg.embedding_seed);
  auto in = open_input(cfg.embeddings, "embeddings");
  auto table = embed::load_word_vectors(in);
  if (warnings) warnings->insert(warnings->end(), table.warnings.begin(), table.warnings.end());
  std::optional<embed::OovFallback> fallback;
  if (cfg.embedding_fallback) fallback = embed::OovFallback{cfg.embedding_seed};
  return embed::embed_labels(vocab, table, fallback);
}

inline data::DatasetSplit split(const TrainConfig& cfg, const std::vector<data::LabeledSample>& s) {
  return data::split_dataset(s, cfg.split_ratios(), cfg.seed);
}

struct GraphBuild {
  graph::CooccurrenceStats stats;
  graph::CorrelationGraph graph;
};

/// Statistics over the training split, plus validation when configured.
inline GraphBuild build_training_graph(const TrainConfig& cfg, const data::DatasetSplit& sp,
                                       std::size_t C) {
  std::vector<data::LabeledSample> pool = sp.train;
  if (cfg.graph_include_val) pool.insert(pool.end(), sp.val.begin(), sp.val.end());
  GraphBuild b;
  b.stats = graph::count_cooccurrence(pool, C);
  b.graph = graph::build_graph(b.stats, cfg.epsilon, cfg.delta, cfg.axis());
  return b;
}

inline train::ModelSpec model_spec(const TrainConfig& cfg, const backbone::FeatureProvider& p) {
  train::ModelSpec s;
  s.head = cfg.model == "linear_head" ? train::HeadKind::linear_head : train::HeadKind::bbgcn;
  s.gcn_dims.assign(cfg.gcn_dims.begin(), cfg.gcn_dims.end());
  s.gcn_options = {cfg.leaky_slope, cfg.gcn_final_linear};
  s.d3 = cfg.d3;
  s.groups = cfg.G;
  s.group_size = cfg.g;
  s.toy_mlp = p.kind() == backbone::ProviderKind::toy_mlp;
  s.raw_dim = p.raw_dim();
  s.mlp_hidden = cfg.mlp_hidden;
  s.finetune_embeddings = cfg.finetune_embeddings;
  s.seed = cfg.seed;
  s.d1 = cfg.d1;
  if (!s.toy_mlp && p.raw_dim() != cfg.d1)
    throw ShapeError("feature dimension " + std::to_string(p.raw_dim()) +
                     " does not match configured d1=" + std::to_string(cfg.d1));
  return s;
}

inline train::TrainOptions train_options(const TrainConfig& cfg) {
  train::TrainOptions o;
  o.epochs = cfg.epochs;
  o.batch_size = cfg.batch_size;
  o.seed = cfg.seed;
  o.sgd = {cfg.lr_lce, cfg.lr_main, cfg.momentum, cfg.weight_decay, cfg.decay_factor,
           cfg.decay_every};
  return o;
}

struct TrainRun {
  Dataset dataset;
  data::DatasetSplit split;
  GraphBuild graph;
  train::TrainResult result;
  ckpt::Checkpoint checkpoint;  // best-validation model
};

/// The full training pipeline in memory; `provider` may be supplied to
/// reuse loaded features across runs.
inline TrainRun run_training(const TrainConfig& cfg,
                             const backbone::FeatureProvider* provider = nullptr) {
  cfg.validate();
  auto ds = load_dataset(cfg);
  std::optional<backbone::FeatureProvider> owned;
  if (provider == nullptr) provider = &owned.emplace(load_provider(cfg));
  auto sp = split(cfg, ds.samples);
  auto gb = build_training_graph(cfg, sp, ds.vocab.size());
  auto model = train::make_model(model_spec(cfg, *provider), label_embeddings(cfg, ds.vocab),
                                 gb.graph.EA_norm);
  auto result = train::train(std::move(model), *provider, sp.train, sp.val, train_options(cfg));
  ckpt::Checkpoint c{result.best, result.best_optimizer.buffers(), result.best_epoch,
                     to_json(cfg), ds.vocab.labels(), gb.graph};
  return {std::move(ds), std::move(sp), std::move(gb), std::move(result), std::move(c)};
}

inline std::string metrics_log_csv(const std::vector<train::EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,train_loss,val_mean_auc\n" << std::setprecision(17);
  for (const auto& e : log) {
    os << e.epoch << ',' << e.train_loss << ',';
    if (std::isfinite(e.val_mean_auc)) os << e.val_mean_auc;
    os << '\n';
  }
  return os.str();
}

inline Json nullable(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json report_json(const metrics::EvaluationReport& r, const data::LabelVocabulary& vocab) {
  Json per_label = Json::array();
  for (std::size_t j = 0; j < vocab.size(); ++j) {
    const auto& auc = r.per_label_auc[j];
    per_label.push_back({{"label", vocab.name(j)},
                         {"auc", auc ? Json(*auc) : Json(nullptr)},
                         {"defined", auc.has_value()}});
  }
  return {{"per_label_auc", per_label},
          {"mean_auc", nullable(r.mean_auc)},
          {"defined_labels", r.defined_labels},
          {"op", r.prf.op},
          {"or", r.prf.or_},
          {"of1", r.prf.of1},
          {"op_undefined", r.prf.op_undefined},
          {"or_undefined", r.prf.or_undefined},
          {"of1_undefined", r.prf.of1_undefined},
          {"confusion_totals",
           {{"correct", r.prf.correct}, {"truth", r.prf.truth}, {"predicted", r.prf.predicted}}}};
}

inline std::string roc_csv(const std::vector<metrics::RocPoint>& pts) {
  std::ostringstream os;
  os << "threshold,fpr,tpr\n" << std::setprecision(17);
  for (const auto& p : pts) {
    if (std::isinf(p.threshold))
      os << "inf";
    else
      os << metrics::sigmoid(p.threshold);
    os << ',' << p.fpr << ',' << p.tpr << '\n';
  }
  return os.str();
}

inline std::string safe_name(std::string s) {
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return s;
}

struct Evaluation {
  Dataset dataset;
  std::vector<data::LabeledSample> test;
  Matrix logits;
  metrics::EvaluationReport report;
};

/// Evaluates a checkpoint on the test split recomputed from `cfg`.
inline Evaluation evaluate_checkpoint(const ckpt::Checkpoint& c, const TrainConfig& cfg) {
  cfg.validate();
  auto ds = load_dataset(cfg);
  ckpt::require_vocabulary(c, ds.vocab);
  auto provider = load_provider(cfg);
  const auto expected_raw =
      c.model.mlp ? c.model.mlp->input_dim()
                  : (c.model.head == train::HeadKind::bbgcn ? c.model.fusion.dims().d1
                                                            : c.model.head_w.rows());
  if (provider.raw_dim() != expected_raw)
    throw ShapeError("feature dimension " + std::to_string(provider.raw_dim()) +
                     " does not match the checkpoint's " + std::to_string(expected_raw));
  auto sp = split(cfg, ds.samples);
  Evaluation e{std::move(ds), std::move(sp.test), {}, {}};
  e.logits = train::predict(c.model, provider, e.test);
  e.report = metrics::evaluate(e.logits, data::label_matrix(e.test, e.dataset.vocab.size()));
  return e;
}

inline void write_evaluation(const Evaluation& e, const Json& config_echo, const fs::path& dir) {
  auto j = report_json(e.report, e.dataset.vocab);
  j["test_samples"] = e.test.size();
  j["config_echo"] = config_echo;
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  for (std::size_t l = 0; l < e.dataset.vocab.size(); ++l) {
    if (e.report.roc[l].empty()) continue;
    std::ostringstream name;
    name << "roc_" << std::setw(2) << std::setfill('0') << l << '_'
         << safe_name(e.dataset.vocab.name(l)) << ".csv";
    write_text(dir / name.str(), roc_csv(e.report.roc[l]));
  }
  write_text(dir / "config_echo.json", config_echo.dump(2) + "\n");
}

inline std::string top_k_csv(const Evaluation& e, std::size_t k) {
  std::ostringstream os;
  os << "sample_id,rank,label,score,truth\n" << std::setprecision(12);
  for (std::size_t i = 0; i < e.test.size(); ++i) {
    const auto ranked = metrics::top_k(e.logits.row(static_cast<Eigen::Index>(i)).transpose(), k);
    for (std::size_t r = 0; r < ranked.size(); ++r)
      os << e.test[i].sample_id << ',' << r + 1 << ',' << e.dataset.vocab.name(ranked[r].index)
         << ',' << ranked[r].score << ',' << int(e.test[i].labels[ranked[r].index]) << '\n';
  }
  return os.str();
}

inline std::string matrix_csv(const data::LabelVocabulary& vocab, const Matrix& m) {
  std::ostringstream os;
  os << "label";
  for (const auto& n : vocab.labels()) os << ',' << n;
  os << '\n' << std::setprecision(12);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << vocab.name(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << ',' << m(i, j);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { epsilon, delta, groupsum, gcn_depth };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "epsilon") return SweepAxis::epsilon;
  if (s == "delta") return SweepAxis::delta;
  if (s == "groupsum") return SweepAxis::groupsum;
  if (s == "gcn_depth") return SweepAxis::gcn_depth;
  throw InputError("unknown sweep axis '" + s + "' (epsilon, delta, groupsum, gcn_depth)");
}

struct SweepRow {
  std::string value;
  double mean_auc = std::numeric_limits<double>::quiet_NaN();
  double val_mean_auc = std::numeric_limits<double>::quiet_NaN();
  std::string status;  // ok, unfiltered_graph, no_self_weight, diverged
};

struct SweepPlan {
  SweepAxis axis;
  std::vector<std::string> values;  // deduplicated, canonical text
  std::vector<std::string> warnings;
};

inline std::pair<std::int64_t, std::int64_t> parse_group_pair(const std::string& v) {
  const auto sep = v.find_first_of(":x");
  std::int64_t G = 0, g = 0;
  if (sep == std::string::npos ||
      std::from_chars(v.data(), v.data() + sep, G).ec != std::errc() ||
      std::from_chars(v.data() + sep + 1, v.data() + v.size(), g).ec != std::errc() || G < 1 ||
      g < 1)
    throw InputError("groupsum values are G:g pairs, got '" + v + "'");
  return {G, g};
}

/// Validates every value before any training starts.
inline SweepPlan plan_sweep(const std::string& axis_name, const std::vector<std::string>& raw) {
  SweepPlan plan{parse_sweep_axis(axis_name), {}, {}};
  if (raw.empty()) throw InputError("sweep needs at least one value");
  std::optional<std::int64_t> width;
  for (const auto& v0 : raw) {
    const auto v = std::string(data::detail::trim(v0));
    std::string canon;
    switch (plan.axis) {
      case SweepAxis::epsilon:
      case SweepAxis::delta: {
        double x = 0.0;
        if (!data::detail::parse_double(v, x) || !(x >= 0.0 && x <= 1.0))
          throw InputError(axis_name + " values must lie in [0, 1], got '" + v + "'");
        canon = data::detail::format_double(x);
        break;
      }
      case SweepAxis::groupsum: {
        const auto [G, g] = parse_group_pair(v);
        if (width && *width != G * g)
          throw InputError("groupsum pairs must share G*g; '" + v + "' has " +
                           std::to_string(G * g) + ", expected " + std::to_string(*width));
        width = G * g;
        canon = std::to_string(G) + ":" + std::to_string(g);
        break;
      }
      case SweepAxis::gcn_depth: {
        std::int64_t d = 0;
        if (std::from_chars(v.data(), v.data() + v.size(), d).ec != std::errc() || d < 1)
          throw InputError("gcn_depth values must be positive integers, got '" + v + "'");
        canon = std::to_string(d);
        break;
      }
    }
    if (std::find(plan.values.begin(), plan.values.end(), canon) != plan.values.end()) {
      plan.warnings.push_back("duplicate sweep value '" + v + "' ignored");
      continue;
    }
    plan.values.push_back(canon);
  }
  return plan;
}

inline TrainConfig apply_sweep_value(TrainConfig cfg, SweepAxis axis, const std::string& v) {
  switch (axis) {
    case SweepAxis::epsilon: data::detail::parse_double(v, cfg.epsilon); break;
    case SweepAxis::delta: data::detail::parse_double(v, cfg.delta); break;
    case SweepAxis::groupsum: std::tie(cfg.G, cfg.g) = parse_group_pair(v); break;
    case SweepAxis::gcn_depth: {
      const auto depth = std::stoll(v);
      const auto hidden = cfg.gcn_dims.size() > 2 ? cfg.gcn_dims[1] : cfg.gcn_dims.back();
      const auto dims = gcn::dims_for_depth(cfg.gcn_dims.front(), hidden, cfg.gcn_dims.back(),
                                            static_cast<std::size_t>(depth));
      cfg.gcn_dims.assign(dims.begin(), dims.end());
      break;
    }
  }
  return cfg;
}

/// Trains one model per value with the shared seed and reports the test
/// mean AUC of each best-validation model. epsilon = 0 (no edge filtering)
/// and delta = 1 (no self weight) are the settings reported as
/// non-convergent; they are flagged rather than treated as failures.
inline std::vector<SweepRow> run_sweep(const TrainConfig& base, const SweepPlan& plan,
                                       const backbone::FeatureProvider* provider = nullptr) {
  base.validate();
  std::optional<backbone::FeatureProvider> owned;
  if (provider == nullptr) provider = &owned.emplace(load_provider(base));
  std::vector<SweepRow> rows;
  for (const auto& v : plan.values) {
    SweepRow row{v, std::numeric_limits<double>::quiet_NaN(),
                 std::numeric_limits<double>::quiet_NaN(), "ok"};
    const auto cfg = apply_sweep_value(base, plan.axis, v);
    if (plan.axis == SweepAxis::delta && cfg.delta >= 1.0) {
      row.status = "no_self_weight";
      rows.push_back(row);
      continue;
    }
    if (plan.axis == SweepAxis::epsilon && cfg.epsilon == 0.0) row.status = "unfiltered_graph";
    try {
      auto run = run_training(cfg, provider);
      row.val_mean_auc = run.result.log[static_cast<std::size_t>(run.result.best_epoch)].val_mean_auc;
      const auto logits = train::predict(run.checkpoint.model, *provider, run.split.test);
      row.mean_auc = metrics::evaluate(logits, data::label_matrix(run.split.test,
                                                                   run.dataset.vocab.size()))
                         .mean_auc;
    } catch (const NumericalError&) {
      row.status = "diverged";
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "axis,value,mean_auc,val_mean_auc,status\n" << std::setprecision(12);
  for (const auto& r : rows) {
    os << axis << ',' << r.value << ',';
    if (std::isfinite(r.mean_auc)) os << r.mean_auc;
    os << ',';
    if (std::isfinite(r.val_mean_auc)) os << r.val_mean_auc;
    os << ',' << r.status << '\n';
  }
  return os.str();
}

}  // namespace bbgcn::pipeline
