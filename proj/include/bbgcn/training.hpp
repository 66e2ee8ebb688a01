#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bbgcn/backbone.hpp"
#include "bbgcn/data_ingest.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/fusion_tbg.hpp"
#include "bbgcn/gcn.hpp"
#include "bbgcn/metrics.hpp"
#include "bbgcn/rng.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn::train {

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

struct LossResult {
  double loss = 0.0;
  Vector grad;  // dLoss/dO
};

/// Multi-label soft-margin loss:
///   -(1/C) sum_j [ L_j log s(O_j) + (1 - L_j) log(1 - s(O_j)) ]
/// with gradient (s(O_j) - L_j) / C.
inline LossResult multilabel_loss(const Vector& logits, std::span<const std::uint8_t> labels) {
  detail::require_shape(static_cast<std::size_t>(logits.size()) == labels.size(),
                        "logits and labels differ in length");
  const auto C = static_cast<double>(logits.size());
  LossResult r;
  r.grad.resize(logits.size());
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    const double o = logits[j];
    const bool pos = labels[static_cast<std::size_t>(j)] != 0;
    r.loss += pos ? softplus(-o) : softplus(o);
    r.grad[j] = (metrics::sigmoid(o) - (pos ? 1.0 : 0.0)) / C;
  }
  r.loss /= C;
  return r;
}

/// Batch mean of multilabel_loss; logits and labels are N x C.
inline LossResult batch_loss(const Matrix& logits, const Matrix& labels, Matrix& grad) {
  detail::require_shape(logits.rows() == labels.rows() && logits.cols() == labels.cols(),
                        "logits and labels differ in shape");
  const auto n = static_cast<double>(logits.rows());
  const auto C = static_cast<double>(logits.cols());
  LossResult r;
  grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double o = logits(i, j);
      const bool pos = labels(i, j) != 0.0;
      r.loss += pos ? softplus(-o) : softplus(o);
      grad(i, j) = (metrics::sigmoid(o) - (pos ? 1.0 : 0.0)) / (C * n);
    }
  r.loss /= C * n;
  return r;
}

enum class ParamGroup { lce, main };

inline ParamGroup group_of(const std::string& name) {
  return name.starts_with("gcn.") || name.starts_with("embed.") ? ParamGroup::lce
                                                                 : ParamGroup::main;
}

struct SgdOptions {
  double lr_lce = 0.01;
  double lr_main = 0.001;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  double decay_factor = 0.1;
  std::int64_t decay_every = 10;
};

/// SGD with momentum and L2 weight decay:
///   g <- grad + wd * p;  buf <- mu * buf + g;  p <- p - lr * buf
/// lr = lr0 * decay_factor^floor(epoch / decay_every), lr0 per parameter group.
class Sgd {
 public:
  explicit Sgd(SgdOptions opts = {}) : opts_(opts) {}

  const SgdOptions& options() const { return opts_; }
  std::map<std::string, Matrix>& buffers() { return buffers_; }
  const std::map<std::string, Matrix>& buffers() const { return buffers_; }

  double learning_rate(ParamGroup group, std::int64_t epoch) const {
    const double lr0 = group == ParamGroup::lce ? opts_.lr_lce : opts_.lr_main;
    return lr0 * std::pow(opts_.decay_factor, static_cast<double>(epoch / opts_.decay_every));
  }

  void step(const std::string& name, Matrix& param, const Matrix& grad, double lr) {
    detail::require_shape(param.rows() == grad.rows() && param.cols() == grad.cols(),
                          "gradient shape differs from parameter " + name);
    auto [it, fresh] = buffers_.try_emplace(name, Matrix::Zero(param.rows(), param.cols()));
    Matrix& buf = it->second;
    detail::require_shape(buf.rows() == param.rows() && buf.cols() == param.cols(),
                          "momentum buffer shape differs from parameter " + name);
    buf = opts_.momentum * buf + grad + opts_.weight_decay * param;
    param -= lr * buf;
  }

 private:
  SgdOptions opts_;
  std::map<std::string, Matrix> buffers_;
};

using GradientMap = std::map<std::string, Matrix>;

enum class HeadKind { bbgcn, linear_head };

/// The full network: optional toy MLP on raw features, GCN over the label
/// graph producing per-label embeddings, and the bilinear fusion head. The
/// linear_head kind replaces GCN and fusion with independent per-label
/// logistic heads and serves as the baseline.
class Model {
 public:
  HeadKind head = HeadKind::bbgcn;
  Matrix word_embeddings;  // C x D2
  Matrix adjacency;        // C x C normalized propagation matrix
  bool finetune_embeddings = false;
  gcn::Stack gcn;
  fusion::Parameters fusion;
  std::optional<backbone::ToyMlp> mlp;
  Matrix head_w, head_b;  // linear_head: D1 x C, C x 1

  struct Pass {
    std::optional<backbone::MlpCache> mlp;
    std::optional<gcn::ForwardCache> gcn;
    std::optional<fusion::BatchCache> fusion;
    Matrix features;
    Matrix logits;
  };

  std::size_t num_labels() const {
    return static_cast<std::size_t>(head == HeadKind::bbgcn ? word_embeddings.rows()
                                                           : head_w.cols());
  }

  Pass forward(const Matrix& raw) const {
    Pass p;
    if (mlp) {
      p.mlp = mlp->forward(raw);
      p.features = p.mlp->output;
    } else {
      p.features = raw;
    }
    if (head == HeadKind::linear_head) {
      detail::require_shape(p.features.cols() == head_w.rows(), "feature width != head input");
      p.logits = (p.features * head_w).rowwise() + head_b.col(0).transpose();
      return p;
    }
    p.gcn = gcn.forward(word_embeddings, adjacency);
    p.fusion = fusion.forward(p.features, p.gcn->output);
    p.logits = p.fusion->logits;
    return p;
  }

  Matrix logits(const Matrix& raw) const { return forward(raw).logits; }

  GradientMap backward(const Pass& p, const Matrix& dlogits) const {
    GradientMap g;
    Matrix dfeatures;
    if (head == HeadKind::linear_head) {
      g["head.w"] = p.features.transpose() * dlogits;
      g["head.b"] = dlogits.colwise().sum().transpose();
      dfeatures = dlogits * head_w.transpose();
    } else {
      auto fg = fusion.backward(*p.fusion, dlogits);
      fusion::for_each_gradient(fg, [&](const std::string& n, const Matrix& m) { g[n] = m; });
      auto gg = gcn.backward(*p.gcn, fg.label_embed);
      for (std::size_t l = 0; l < gg.theta.size(); ++l)
        g["gcn.theta" + std::to_string(l)] = std::move(gg.theta[l]);
      if (finetune_embeddings) g["embed.W"] = std::move(gg.input);
      dfeatures = std::move(fg.features);
    }
    if (mlp) {
      auto mg = mlp->backward(*p.mlp, dfeatures);
      g["mlp.w1"] = std::move(mg.w1);
      g["mlp.b1"] = std::move(mg.b1);
      g["mlp.w2"] = std::move(mg.w2);
      g["mlp.b2"] = std::move(mg.b2);
    }
    return g;
  }

  /// Visits trainable tensors only.
  void mutate_parameters(const ParameterVisitor& f) {
    if (head == HeadKind::linear_head) {
      f("head.w", head_w);
      f("head.b", head_b);
    } else {
      gcn.mutate_parameters(f);
      fusion.mutate_parameters(f);
      if (finetune_embeddings) f("embed.W", word_embeddings);
    }
    if (mlp) mlp->mutate_parameters(f);
  }

  void inspect_parameters(const ConstParameterVisitor& f) const {
    if (head == HeadKind::linear_head) {
      f("head.w", head_w);
      f("head.b", head_b);
    } else {
      gcn.inspect_parameters(f);
      fusion.inspect_parameters(f);
      if (finetune_embeddings) f("embed.W", word_embeddings);
    }
    if (mlp) mlp->inspect_parameters(f);
  }
};

struct ModelSpec {
  HeadKind head = HeadKind::bbgcn;
  std::vector<Eigen::Index> gcn_dims{300, 1024, 768};
  gcn::StackOptions gcn_options;
  Eigen::Index d1 = 768;
  Eigen::Index d3 = 384;
  Eigen::Index groups = 64;
  Eigen::Index group_size = 6;
  bool toy_mlp = false;
  Eigen::Index raw_dim = 768;  // MLP input width when toy_mlp
  Eigen::Index mlp_hidden = 64;
  bool finetune_embeddings = false;
  std::uint64_t seed = 0;
};

inline Model make_model(const ModelSpec& spec, Matrix word_embeddings, Matrix adjacency) {
  Model m;
  m.head = spec.head;
  const auto C = word_embeddings.rows();
  detail::require_shape(adjacency.rows() == C && adjacency.cols() == C,
                        "adjacency must be C x C with C = " + std::to_string(C));
  if (spec.toy_mlp)
    m.mlp = backbone::ToyMlp::init(spec.raw_dim, spec.mlp_hidden, spec.d1,
                                   mix_seed(spec.seed, 13), spec.gcn_options.slope);
  if (spec.head == HeadKind::linear_head) {
    Rng rng(mix_seed(spec.seed, 14));
    m.head_w = fan_in_uniform(spec.d1, C, rng);
    m.head_b = Matrix::Zero(C, 1);
  } else {
    detail::require_shape(word_embeddings.cols() == spec.gcn_dims.front(),
                          "word embedding width " + std::to_string(word_embeddings.cols()) +
                              " != gcn_dims[0] " + std::to_string(spec.gcn_dims.front()));
    m.gcn = gcn::Stack::init(spec.gcn_dims, spec.gcn_options, mix_seed(spec.seed, 11));
    m.fusion = fusion::Parameters::init(
        {spec.d1, spec.gcn_dims.back(), spec.d3, spec.groups, spec.group_size},
        mix_seed(spec.seed, 12));
    m.finetune_embeddings = spec.finetune_embeddings;
  }
  m.word_embeddings = std::move(word_embeddings);
  m.adjacency = std::move(adjacency);
  return m;
}

/// One optimizer step over every trainable tensor of the model.
inline void sgd_step(Model& model, const GradientMap& grads, Sgd& opt, std::int64_t epoch) {
  model.mutate_parameters([&](const std::string& name, Matrix& p) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw ShapeError("no gradient for parameter " + name);
    opt.step(name, p, it->second, opt.learning_rate(group_of(name), epoch));
  });
}

struct TrainOptions {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 32;
  std::uint64_t seed = 0;
  SgdOptions sgd;
};

struct EpochLog {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_mean_auc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  Model best;
  Sgd best_optimizer;
  std::int64_t best_epoch = 0;
  Model last;
  std::vector<EpochLog> log;
};

inline std::vector<std::string> ids_of(const std::vector<data::LabeledSample>& samples) {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.sample_id);
  return ids;
}

/// Logits for a list of samples, evaluated in chunks.
inline Matrix predict(const Model& model, const backbone::FeatureProvider& provider,
                      const std::vector<data::LabeledSample>& samples,
                      std::size_t chunk = 256) {
  Matrix out(static_cast<Eigen::Index>(samples.size()),
             static_cast<Eigen::Index>(model.num_labels()));
  const auto ids = ids_of(samples);
  for (std::size_t start = 0; start < ids.size(); start += chunk) {
    const auto end = std::min(ids.size(), start + chunk);
    const std::vector<std::string> part(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                        ids.begin() + static_cast<std::ptrdiff_t>(end));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        model.logits(provider.raw_batch(part));
  }
  return out;
}

/// Minibatch SGD. Batches are reshuffled every epoch from the run seed and
/// the last partial batch is kept. Validation mean AUC is computed after
/// each epoch; the epoch with the highest value (earliest on ties) is kept
/// as `best`. Without defined validation AUCs the last epoch is kept.
inline TrainResult train(Model model, const backbone::FeatureProvider& provider,
                         const std::vector<data::LabeledSample>& train_set,
                         const std::vector<data::LabeledSample>& val_set,
                         const TrainOptions& opts) {
  if (train_set.empty()) throw InputError("training split is empty");
  if (opts.epochs < 1 || opts.batch_size < 1)
    throw InputError("epochs and batch size must be positive");
  const auto C = model.num_labels();
  const Matrix val_truth = val_set.empty() ? Matrix() : data::label_matrix(val_set, C);

  Sgd opt(opts.sgd);
  TrainResult result{model, opt, 0, model, {}};
  double best_auc = -1.0;
  Rng rng(mix_seed(opts.seed, 21));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(opts.batch_size), ++batch_index) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      std::vector<std::string> ids;
      Matrix truth(static_cast<Eigen::Index>(end - start), static_cast<Eigen::Index>(C));
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = train_set[order[i]];
        ids.push_back(s.sample_id);
        for (std::size_t j = 0; j < C; ++j)
          truth(static_cast<Eigen::Index>(i - start), static_cast<Eigen::Index>(j)) = s.labels[j];
      }
      const auto pass = model.forward(provider.raw_batch(ids));
      Matrix dlogits;
      const auto loss = batch_loss(pass.logits, truth, dlogits);
      if (!std::isfinite(loss.loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batch_index
            << " (lr_lce=" << opt.learning_rate(ParamGroup::lce, epoch)
            << ", lr_main=" << opt.learning_rate(ParamGroup::main, epoch) << ")";
        throw NumericalError(msg.str());
      }
      loss_sum += loss.loss * static_cast<double>(end - start);
      sgd_step(model, model.backward(pass, dlogits), opt, epoch);
    }

    EpochLog entry{epoch, loss_sum / static_cast<double>(train_set.size()),
                   std::numeric_limits<double>::quiet_NaN()};
    if (!val_set.empty())
      entry.val_mean_auc = metrics::evaluate(predict(model, provider, val_set), val_truth).mean_auc;
    result.log.push_back(entry);
    const bool defined = std::isfinite(entry.val_mean_auc);
    if ((defined && entry.val_mean_auc > best_auc) || (!defined && best_auc < 0.0)) {
      if (defined) best_auc = entry.val_mean_auc;
      result.best = model;
      result.best_optimizer = opt;
      result.best_epoch = epoch;
    }
  }
  result.last = std::move(model);
  return result;
}

}  // namespace bbgcn::train
