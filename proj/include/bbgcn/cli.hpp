#pragma once

// `bbgcn` command-line tool. Subcommands: synth, build-graph, train, eval,
// sweep, report. Exit codes: 0 ok, 1 unexpected failure, 2 input or parse
// error, 3 shape/compatibility error, 4 numerical failure.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bbgcn/backbone.hpp"
#include "bbgcn/checkpoint.hpp"
#include "bbgcn/config.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/label_graph.hpp"
#include "bbgcn/pipeline.hpp"

namespace bbgcn::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kFailure = 1, kInput = 2, kShape = 3, kNumerical = 4 };

/// Command-line values that override the config file when given.
struct Overrides {
  std::optional<std::string> config;
  std::optional<double> epsilon, delta, lr_lce, lr_main, momentum, weight_decay, decay_factor,
      leaky_slope;
  std::optional<std::int64_t> G, g, d3, d1, epochs, batch_size, decay_every, mlp_hidden,
      embedding_dim;
  std::optional<std::uint64_t> seed, embedding_seed;
  std::optional<std::string> reweight_axis, provider, model, label_format, uncertain_policy,
      vocab_preset, embeddings, labels, features, out_dir, no_finding_token;
  std::optional<std::vector<std::int64_t>> gcn_dims;
  std::optional<std::vector<std::string>> vocab;
  bool labels_header = false, exclude_no_finding = false, graph_include_val = false,
       gcn_final_linear = false, finetune_embeddings = false, embedding_fallback = false,
       synthetic_embeddings = false;

  TrainConfig apply(TrainConfig c) const {
#define BBGCN_OVR(field) \
  if (field) c.field = *field;
    BBGCN_OVR(epsilon) BBGCN_OVR(delta) BBGCN_OVR(lr_lce) BBGCN_OVR(lr_main) BBGCN_OVR(momentum)
    BBGCN_OVR(weight_decay) BBGCN_OVR(decay_factor) BBGCN_OVR(leaky_slope) BBGCN_OVR(G)
    BBGCN_OVR(g) BBGCN_OVR(d3) BBGCN_OVR(d1) BBGCN_OVR(epochs) BBGCN_OVR(batch_size)
    BBGCN_OVR(decay_every) BBGCN_OVR(mlp_hidden) BBGCN_OVR(seed) BBGCN_OVR(embedding_seed)
    BBGCN_OVR(reweight_axis) BBGCN_OVR(provider) BBGCN_OVR(model) BBGCN_OVR(label_format)
    BBGCN_OVR(uncertain_policy) BBGCN_OVR(vocab_preset) BBGCN_OVR(embeddings) BBGCN_OVR(labels)
    BBGCN_OVR(features) BBGCN_OVR(out_dir) BBGCN_OVR(no_finding_token) BBGCN_OVR(gcn_dims)
    BBGCN_OVR(vocab)
#undef BBGCN_OVR
    if (labels_header) c.labels_header = true;
    if (exclude_no_finding) c.include_no_finding = false;
    if (graph_include_val) c.graph_include_val = true;
    if (gcn_final_linear) c.gcn_final_linear = true;
    if (finetune_embeddings) c.finetune_embeddings = true;
    if (embedding_fallback) c.embedding_fallback = true;
    if (synthetic_embeddings) c.embeddings.clear();
    if (embedding_dim) c.gcn_dims.front() = *embedding_dim;
    return c;
  }

  /// Defaults, then the checkpoint echo (if any), then --config, then flags.
  TrainConfig resolve(const std::optional<Json>& echo = std::nullopt) const {
    TrainConfig c;
    if (echo) c = merge_config(c, *echo);
    if (config) c = merge_config(c, [&] {
      std::ifstream in(*config);
      if (!in) throw InputError("cannot open config file " + *config);
      try {
        return Json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw InputError("config file " + *config + ": " + e.what());
      }
    }());
    c = apply(c);
    c.validate();
    return c;
  }
};

namespace detail {

template <typename T>
std::string show(const T& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline std::string show_list(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

/// Registers the dataset/path flags.
inline void add_data_flags(CLI::App* app, Overrides& o) {
  const TrainConfig d;
  app->add_option("--config", o.config, "JSON config file; flags override its values");
  app->add_option("--labels", o.labels, "label file");
  app->add_option("--label-format", o.label_format, "pipe or columnar")->default_str(d.label_format);
  app->add_flag("--labels-header", o.labels_header, "pipe label file has a header row");
  app->add_option("--vocab", o.vocab, "comma-separated label names, in index order")
      ->delimiter(',');
  app->add_option("--vocab-preset", o.vocab_preset, "chestxray14 or chexpert");
  app->add_flag("--exclude-no-finding", o.exclude_no_finding,
                "drop 'No Finding' from the chexpert preset");
  app->add_option("--no-finding-token", o.no_finding_token, "all-negative sentinel in pipe files")
      ->default_str(d.no_finding_token);
  app->add_option("--uncertain-policy", o.uncertain_policy, "as_positive or as_negative")
      ->default_str(d.uncertain_policy);
  app->add_option("--seed", o.seed, "run seed (split, init, batching)")
      ->default_str(detail::show(d.seed));
  app->add_option("--out-dir", o.out_dir, "output directory")->default_str(d.out_dir);
}

inline void add_graph_flags(CLI::App* app, Overrides& o) {
  const TrainConfig d;
  app->add_option("--epsilon", o.epsilon, "binarization threshold")->default_str(detail::show(d.epsilon));
  app->add_option("--delta", o.delta, "neighbour reweighting mass")->default_str(detail::show(d.delta));
  app->add_option("--reweight-axis", o.reweight_axis, "row or col")->default_str(d.reweight_axis);
  app->add_flag("--graph-include-val", o.graph_include_val,
                "count co-occurrence over train+validation");
}

inline void add_model_flags(CLI::App* app, Overrides& o) {
  const TrainConfig d;
  app->add_option("--features", o.features, "feature file (or synth spec JSON for provider=synthetic)");
  app->add_option("--provider", o.provider, "precomputed, synthetic or toy_mlp")->default_str(d.provider);
  app->add_option("--model", o.model, "bbgcn or linear_head")->default_str(d.model);
  app->add_option("--d1", o.d1, "image feature width")->default_str(detail::show(d.d1));
  app->add_option("--d3", o.d3, "bridge projection width")->default_str(detail::show(d.d3));
  app->add_option("--G", o.G, "GroupSum groups")->default_str(detail::show(d.G));
  app->add_option("--g", o.g, "GroupSum group size")->default_str(detail::show(d.g));
  app->add_option("--gcn-dims", o.gcn_dims, "GCN widths, input first")
      ->delimiter(',')
      ->default_str(detail::show_list(d.gcn_dims));
  app->add_option("--leaky-slope", o.leaky_slope, "LeakyReLU slope")->default_str(detail::show(d.leaky_slope));
  app->add_flag("--gcn-final-linear", o.gcn_final_linear, "no activation on the last GCN layer");
  app->add_option("--mlp-hidden", o.mlp_hidden, "toy MLP hidden width")->default_str(detail::show(d.mlp_hidden));
  app->add_option("--embeddings", o.embeddings, "GloVe-format word vector file");
  app->add_flag("--synthetic-embeddings", o.synthetic_embeddings, "use seeded synthetic label vectors");
  app->add_option("--embedding-dim", o.embedding_dim, "synthetic embedding width (gcn_dims[0])")
      ->default_str(detail::show(d.gcn_dims.front()));
  app->add_option("--embedding-seed", o.embedding_seed, "synthetic embedding seed")
      ->default_str(detail::show(d.embedding_seed));
  app->add_flag("--embedding-fallback", o.embedding_fallback, "synthesize vectors for unknown words");
  app->add_flag("--finetune-embeddings", o.finetune_embeddings, "train the word embedding matrix");
}

inline void add_optim_flags(CLI::App* app, Overrides& o) {
  const TrainConfig d;
  app->add_option("--epochs", o.epochs, "training epochs")->default_str(detail::show(d.epochs));
  app->add_option("--batch-size", o.batch_size, "minibatch size")->default_str(detail::show(d.batch_size));
  app->add_option("--lr-lce", o.lr_lce, "initial learning rate of the GCN")->default_str(detail::show(d.lr_lce));
  app->add_option("--lr-main", o.lr_main, "initial learning rate of fusion head and backbone")
      ->default_str(detail::show(d.lr_main));
  app->add_option("--momentum", o.momentum, "SGD momentum")->default_str(detail::show(d.momentum));
  app->add_option("--weight-decay", o.weight_decay, "L2 weight decay")->default_str(detail::show(d.weight_decay));
  app->add_option("--decay-every", o.decay_every, "epochs between learning-rate decays")
      ->default_str(detail::show(d.decay_every));
  app->add_option("--decay-factor", o.decay_factor, "learning-rate multiplier per decay")
      ->default_str(detail::show(d.decay_factor));
}

// --------------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir = "synth";
  std::size_t num_labels = 8;
  std::int64_t feature_dim = 768;
  std::size_t samples = 1000;
  std::vector<std::string> edges;
  double base_rate = 0.15;
  std::vector<double> base_rates;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

inline backbone::DependencyEdge parse_edge(const std::string& s) {
  // from>to:strength
  const auto gt = s.find('>');
  const auto colon = s.find(':');
  backbone::DependencyEdge e;
  try {
    if (gt == std::string::npos || colon == std::string::npos || colon < gt) throw 0;
    e.from = std::stoul(s.substr(0, gt));
    e.to = std::stoul(s.substr(gt + 1, colon - gt - 1));
    e.strength = std::stod(s.substr(colon + 1));
  } catch (...) {
    throw InputError("edge must look like from>to:strength, got '" + s + "'");
  }
  return e;
}

inline int cmd_synth(const SynthArgs& a) {
  backbone::SyntheticSpec spec;
  spec.num_labels = a.num_labels;
  spec.feature_dim = a.feature_dim;
  spec.num_samples = a.samples;
  spec.noise_sigma = a.noise;
  spec.seed = a.seed;
  spec.base_rates = a.base_rates.empty() ? std::vector<double>(a.num_labels, a.base_rate)
                                         : a.base_rates;
  if (a.edges.empty()) {
    // Default planted structure: a chain over the first labels.
    for (std::size_t j = 0; j + 1 < a.num_labels && j < 6; ++j)
      spec.edges.push_back({j, j + 1, 0.8});
  } else {
    for (const auto& e : a.edges) spec.edges.push_back(parse_edge(e));
  }
  spec.validate();
  const auto ds = backbone::generate_synthetic_dataset(spec);
  const data::LabelVocabulary vocab(backbone::synthetic_label_names(spec.num_labels));
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  std::ostringstream labels, features;
  data::write_pipe_labels(labels, ds.samples, vocab);
  data::write_features(features, ds.features);
  pipeline::write_text(dir / "labels.csv", labels.str());
  pipeline::write_text(dir / "features.txt", features.str());
  Json echo{{"spec", to_json(spec)}, {"vocabulary", vocab.labels()}};
  pipeline::write_text(dir / "synth_spec.json", echo.dump(2) + "\n");
  std::cerr << "wrote " << ds.samples.size() << " samples to " << dir.string() << "\n";
  return kOk;
}

inline int cmd_build_graph(const Overrides& o, const std::string& scope, const std::string& out) {
  const auto cfg = o.resolve();
  auto ds = pipeline::load_dataset(cfg);
  std::vector<data::LabeledSample> pool;
  if (scope == "all") {
    pool = ds.samples;
  } else {
    auto sp = pipeline::split(cfg, ds.samples);
    pool = sp.train;
    if (scope == "train_val") pool.insert(pool.end(), sp.val.begin(), sp.val.end());
  }
  const auto stats = graph::count_cooccurrence(pool, ds.vocab.size());
  const auto g = graph::build_graph(stats, cfg.epsilon, cfg.delta, cfg.axis());
  auto j = pipeline::graph_json(ds.vocab, stats, g);
  j["scope"] = scope;
  j["config_echo"] = to_json(cfg);
  const fs::path path = out.empty() ? fs::path(cfg.out_dir) / "graph.json" : fs::path(out);
  pipeline::write_text(path, j.dump(2) + "\n");
  return kOk;
}

inline int cmd_train(const Overrides& o) {
  const auto cfg = o.resolve();
  auto run = pipeline::run_training(cfg);
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  ckpt::save_checkpoint(run.checkpoint, (dir / "checkpoint.bin").string());
  pipeline::write_text(dir / "metrics_log.csv", pipeline::metrics_log_csv(run.result.log));
  auto gj = pipeline::graph_json(run.dataset.vocab, run.graph.stats, run.graph.graph);
  gj["scope"] = cfg.graph_include_val ? "train_val" : "train";
  gj["config_echo"] = to_json(cfg);
  pipeline::write_text(dir / "graph.json", gj.dump(2) + "\n");
  pipeline::write_text(dir / "config_echo.json", to_json(cfg).dump(2) + "\n");
  for (const auto& e : run.result.log)
    std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val_mean_auc "
              << e.val_mean_auc << "\n";
  std::cerr << "best epoch " << run.result.best_epoch << "\n";
  return kOk;
}

inline int cmd_eval(const Overrides& o, const std::string& checkpoint_path, std::size_t top_k,
                    bool report) {
  // Checkpoint path may come from --out-dir before the echo is known.
  const auto path = checkpoint_path.empty()
                        ? (fs::path(o.out_dir.value_or(TrainConfig{}.out_dir)) / "checkpoint.bin")
                              .string()
                        : checkpoint_path;
  const auto c = ckpt::load_checkpoint(path);
  const auto cfg = o.resolve(c.config);
  const auto e = pipeline::evaluate_checkpoint(c, cfg);
  const fs::path dir(cfg.out_dir);
  const auto echo = to_json(cfg);
  pipeline::write_evaluation(e, echo, dir);
  const auto C = e.dataset.vocab.size();
  if (report && top_k == 0) top_k = std::min<std::size_t>(8, C);
  if (top_k > 0) pipeline::write_text(dir / "topk.csv", pipeline::top_k_csv(e, std::min(top_k, C)));
  if (report) {
    auto sp = pipeline::split(cfg, e.dataset.samples);
    const auto gb = pipeline::build_training_graph(cfg, sp, C);
    pipeline::write_text(dir / "cooccurrence_counts.csv",
                         pipeline::matrix_csv(e.dataset.vocab, gb.stats.pair.cast<double>()));
    pipeline::write_text(dir / "conditional_probability.csv",
                         pipeline::matrix_csv(e.dataset.vocab, c.graph.P));
  }
  std::cerr << "mean AUC " << e.report.mean_auc << " over " << e.report.defined_labels
            << " labels, OP " << e.report.prf.op << " OR " << e.report.prf.or_ << " OF1 "
            << e.report.prf.of1 << "\n";
  return kOk;
}

inline int cmd_sweep(const Overrides& o, const std::string& axis,
                     const std::vector<std::string>& values, const std::string& out) {
  const auto plan = pipeline::plan_sweep(axis, values);
  for (const auto& w : plan.warnings) std::cerr << "warning: " << w << "\n";
  const auto cfg = o.resolve();
  const auto rows = pipeline::run_sweep(cfg, plan);
  const fs::path path =
      out.empty() ? fs::path(cfg.out_dir) / ("sweep_" + axis + ".csv") : fs::path(out);
  pipeline::write_text(path, pipeline::sweep_csv(axis, rows));
  pipeline::write_text(path.parent_path() / (path.stem().string() + "_config_echo.json"),
                       to_json(cfg).dump(2) + "\n");
  return kOk;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Label co-occurrence GCN with low-rank bilinear fusion for multi-label images",
               "bbgcn"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a planted-dependency synthetic dataset");
  s->add_option("--out-dir", synth.out_dir, "output directory")->capture_default_str();
  s->add_option("--num-labels", synth.num_labels, "number of labels C")->capture_default_str();
  s->add_option("--feature-dim", synth.feature_dim, "feature width D1")->capture_default_str();
  s->add_option("--samples", synth.samples, "number of samples")->capture_default_str();
  s->add_option("--edge", synth.edges, "dependency from>to:strength (repeatable)");
  s->add_option("--base-rate", synth.base_rate, "base rate for every label")->capture_default_str();
  s->add_option("--base-rates", synth.base_rates, "per-label base rates")->delimiter(',');
  s->add_option("--noise", synth.noise, "feature noise sigma")->capture_default_str();
  s->add_option("--seed", synth.seed, "generator seed")->capture_default_str();

  Overrides bg_o;
  std::string scope = "all", bg_out;
  auto* bg = app.add_subcommand("build-graph", "compute the label correlation graph as JSON");
  add_data_flags(bg, bg_o);
  add_graph_flags(bg, bg_o);
  bg->add_option("--scope", scope, "samples to count: all, train or train_val")
      ->check(CLI::IsMember({"all", "train", "train_val"}))
      ->capture_default_str();
  bg->add_option("--out", bg_out, "output JSON path (default <out-dir>/graph.json)");

  Overrides tr_o;
  auto* tr = app.add_subcommand("train", "train a model and write the best-validation checkpoint");
  add_data_flags(tr, tr_o);
  add_graph_flags(tr, tr_o);
  add_model_flags(tr, tr_o);
  add_optim_flags(tr, tr_o);

  Overrides ev_o;
  std::string ev_ckpt;
  std::size_t ev_topk = 0;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_data_flags(ev, ev_o);
  ev->add_option("--features", ev_o.features, "feature file");
  ev->add_option("--provider", ev_o.provider, "feature provider");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint (default <out-dir>/checkpoint.bin)");
  ev->add_option("--top-k", ev_topk, "also write the top-k table");

  Overrides rp_o;
  std::string rp_ckpt;
  std::size_t rp_topk = 0;
  auto* rp = app.add_subcommand("report", "evaluation plus co-occurrence and top-k tables");
  add_data_flags(rp, rp_o);
  rp->add_option("--features", rp_o.features, "feature file");
  rp->add_option("--provider", rp_o.provider, "feature provider");
  rp->add_option("--checkpoint", rp_ckpt, "checkpoint (default <out-dir>/checkpoint.bin)");
  rp->add_option("--top-k", rp_topk, "rows per sample in topk.csv (default min(8, C))");

  Overrides sw_o;
  std::string sw_axis, sw_out;
  std::vector<std::string> sw_values;
  auto* sw = app.add_subcommand("sweep", "train one model per hyperparameter value");
  add_data_flags(sw, sw_o);
  add_graph_flags(sw, sw_o);
  add_model_flags(sw, sw_o);
  add_optim_flags(sw, sw_o);
  sw->add_option("--axis", sw_axis, "epsilon, delta, groupsum or gcn_depth")->required();
  sw->add_option("--values", sw_values, "comma-separated values; groupsum uses G:g")
      ->delimiter(',')
      ->required();
  sw->add_option("--out", sw_out, "output CSV (default <out-dir>/sweep_<axis>.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*bg) return cmd_build_graph(bg_o, scope, bg_out);
    if (*tr) return cmd_train(tr_o);
    if (*ev) return cmd_eval(ev_o, ev_ckpt, ev_topk, false);
    if (*rp) return cmd_eval(rp_o, rp_ckpt, rp_topk, true);
    if (*sw) return cmd_sweep(sw_o, sw_axis, sw_values, sw_out);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kShape;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace bbgcn::cli
