#pragma once

// Image-feature providers. A real backbone is replaced by one of:
//   precomputed  features loaded from a feature file
//   synthetic    features from the planted-dependency generator below
//   toy_mlp      either of the above passed through a small trainable MLP,
//                so gradients can flow end to end

#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "bbgcn/data_ingest.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/gcn.hpp"
#include "bbgcn/rng.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn::backbone {

struct DependencyEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double strength = 0.0;
};

struct SyntheticSpec {
  std::size_t num_labels = 8;
  Eigen::Index feature_dim = 32;
  std::size_t num_samples = 2000;
  std::vector<DependencyEdge> edges;
  std::vector<double> base_rates;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_labels < 2) throw InputError("synthetic spec needs at least 2 labels");
    if (feature_dim < 1) throw InputError("synthetic feature dimension must be >= 1");
    if (base_rates.size() != num_labels)
      throw InputError("synthetic spec needs one base rate per label");
    for (double r : base_rates)
      if (!(r >= 0.0 && r <= 1.0)) throw InputError("base rates must lie in [0, 1]");
    for (const auto& e : edges) {
      if (e.from >= num_labels || e.to >= num_labels || e.from == e.to)
        throw InputError("dependency edge endpoints out of range");
      if (!(e.strength >= 0.0 && e.strength <= 1.0))
        throw InputError("dependency strength must lie in [0, 1]");
    }
    if (!(noise_sigma >= 0.0)) throw InputError("noise_sigma must be >= 0");
  }
};

struct SyntheticDataset {
  std::vector<data::LabeledSample> samples;
  std::vector<data::FeatureRecord> features;
  Matrix signatures;  // C x D1, unit rows
};

inline std::string synthetic_sample_id(std::size_t i) {
  std::ostringstream os;
  os << "syn" << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

inline std::vector<std::string> synthetic_label_names(std::size_t C) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < C; ++j) names.push_back("finding_" + std::to_string(j));
  return names;
}

/// Labels: independent Bernoulli(base_rate) draws, then one pass over the
/// edges in order, each forcing `to` on with probability `strength` when
/// `from` is on. Features: sum of the active labels' unit signatures plus
/// N(0, noise_sigma^2) per coordinate.
inline SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  const auto C = static_cast<Eigen::Index>(spec.num_labels);
  const auto D = spec.feature_dim;
  Rng sig_rng(mix_seed(spec.seed, 1));
  SyntheticDataset out;
  out.signatures.resize(C, D);
  for (Eigen::Index j = 0; j < C; ++j) {
    Vector v(D);
    do {
      for (Eigen::Index k = 0; k < D; ++k) v[k] = sig_rng.normal();
    } while (v.norm() == 0.0);
    out.signatures.row(j) = (v / v.norm()).transpose();
  }

  Rng rng(mix_seed(spec.seed, 2));
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    data::LabeledSample s{synthetic_sample_id(i), std::vector<std::uint8_t>(spec.num_labels, 0)};
    for (std::size_t j = 0; j < spec.num_labels; ++j)
      s.labels[j] = rng.bernoulli(spec.base_rates[j]) ? 1 : 0;
    for (const auto& e : spec.edges) {
      const bool fire = rng.bernoulli(e.strength);
      if (s.labels[e.from] && fire) s.labels[e.to] = 1;
    }
    Vector f = Vector::Zero(D);
    for (Eigen::Index j = 0; j < C; ++j)
      if (s.labels[j]) f += out.signatures.row(j).transpose();
    for (Eigen::Index k = 0; k < D; ++k) f[k] += spec.noise_sigma * rng.normal();
    out.features.push_back({s.sample_id, std::move(f)});
    out.samples.push_back(std::move(s));
  }
  return out;
}

class ToyMlp;

struct MlpCache {
  const ToyMlp* owner = nullptr;
  std::uint64_t generation = 0;
  Matrix input;
  Matrix pre;     // hidden pre-activation
  Matrix hidden;
  Matrix output;
};

struct MlpGradients {
  Matrix w1, b1, w2, b2;
  Matrix input;
};

/// One hidden LeakyReLU layer, linear output: y = W2^T f(W1^T x + b1) + b2.
class ToyMlp {
 public:
  Matrix w1, b1;  // Din x H, H x 1
  Matrix w2, b2;  // H x Dout, Dout x 1
  double slope = 0.2;

  ToyMlp() = default;

  static ToyMlp init(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, std::uint64_t seed,
                     double slope = 0.2) {
    detail::require_shape(in >= 1 && hidden >= 1 && out >= 1, "MLP dimensions must be positive");
    Rng rng(seed);
    ToyMlp m;
    m.w1 = fan_in_uniform(in, hidden, rng);
    m.b1 = Matrix::Zero(hidden, 1);
    m.w2 = fan_in_uniform(hidden, out, rng);
    m.b2 = Matrix::Zero(out, 1);
    m.slope = slope;
    return m;
  }

  Eigen::Index input_dim() const { return w1.rows(); }
  Eigen::Index hidden_dim() const { return w1.cols(); }
  Eigen::Index output_dim() const { return w2.cols(); }
  std::uint64_t generation() const { return generation_; }

  MlpCache forward(const Matrix& x) const {
    detail::require_shape(x.cols() == w1.rows(), "MLP input width " + std::to_string(x.cols()) +
                                                     " != " + std::to_string(w1.rows()));
    detail::require_shape(w1.cols() == w2.rows() && b1.rows() == w1.cols() &&
                              b2.rows() == w2.cols(),
                          "MLP parameter shapes are inconsistent");
    MlpCache c;
    c.owner = this;
    c.generation = generation_;
    c.input = x;
    c.pre = (x * w1).rowwise() + b1.col(0).transpose();
    c.hidden = leaky_relu(c.pre, slope);
    c.output = (c.hidden * w2).rowwise() + b2.col(0).transpose();
    return c;
  }

  MlpGradients backward(const MlpCache& c, const Matrix& upstream) const {
    if (c.owner != this || c.generation != generation_)
      throw ShapeError("stale MLP cache: parameters changed since the forward pass");
    detail::require_shape(upstream.rows() == c.output.rows() && upstream.cols() == c.output.cols(),
                          "upstream gradient must match the MLP output shape");
    MlpGradients g;
    g.w2 = c.hidden.transpose() * upstream;
    g.b2 = upstream.colwise().sum().transpose();
    const Matrix dpre = (upstream * w2.transpose()).cwiseProduct(leaky_relu_grad(c.pre, slope));
    g.w1 = c.input.transpose() * dpre;
    g.b1 = dpre.colwise().sum().transpose();
    g.input = dpre * w1.transpose();
    return g;
  }

  void mutate_parameters(const ParameterVisitor& f) {
    f("mlp.w1", w1);
    f("mlp.b1", b1);
    f("mlp.w2", w2);
    f("mlp.b2", b2);
    ++generation_;
  }

  void inspect_parameters(const ConstParameterVisitor& f) const {
    f("mlp.w1", w1);
    f("mlp.b1", b1);
    f("mlp.w2", w2);
    f("mlp.b2", b2);
  }

 private:
  std::uint64_t generation_ = 0;
};

enum class ProviderKind { precomputed, synthetic, toy_mlp };

inline ProviderKind parse_provider_kind(std::string_view s) {
  if (s == "precomputed") return ProviderKind::precomputed;
  if (s == "synthetic") return ProviderKind::synthetic;
  if (s == "toy_mlp") return ProviderKind::toy_mlp;
  throw InputError("unknown feature provider: " + std::string(s));
}

inline std::string to_string(ProviderKind k) {
  switch (k) {
    case ProviderKind::precomputed: return "precomputed";
    case ProviderKind::synthetic: return "synthetic";
    case ProviderKind::toy_mlp: return "toy_mlp";
  }
  return "unknown";
}

/// Raw per-sample vectors keyed by id. For toy_mlp the model's MLP is
/// applied on top of these during training and evaluation; get_features
/// takes the MLP explicitly so the provider itself stays immutable.
class FeatureProvider {
 public:
  FeatureProvider(ProviderKind kind, const std::vector<data::FeatureRecord>& records)
      : kind_(kind) {
    if (records.empty()) throw InputError("feature provider has no records");
    dim_ = records.front().features.size();
    for (const auto& r : records) {
      if (r.features.size() != dim_) throw ShapeError("feature records disagree on dimension");
      index_.emplace(r.sample_id, rows_.size());
      rows_.push_back(r.features);
    }
  }

  static FeatureProvider synthetic(const SyntheticSpec& spec) {
    return FeatureProvider(ProviderKind::synthetic, generate_synthetic_dataset(spec).features);
  }

  ProviderKind kind() const { return kind_; }
  Eigen::Index raw_dim() const { return dim_; }

  const Vector& raw(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw InputError("no features for sample id '" + id + "'");
    return rows_[it->second];
  }

  Vector get_features(const std::string& id, const ToyMlp* mlp = nullptr) const {
    const Vector& x = raw(id);
    if (kind_ != ProviderKind::toy_mlp) return x;
    if (mlp == nullptr) throw InputError("toy_mlp provider needs MLP parameters");
    return mlp->forward(x.transpose()).output.row(0).transpose();
  }

  /// Stacks raw rows for the given ids into an N x D matrix.
  Matrix raw_batch(const std::vector<std::string>& ids) const {
    Matrix X(static_cast<Eigen::Index>(ids.size()), dim_);
    for (std::size_t i = 0; i < ids.size(); ++i)
      X.row(static_cast<Eigen::Index>(i)) = raw(ids[i]).transpose();
    return X;
  }

 private:
  ProviderKind kind_;
  Eigen::Index dim_ = 0;
  std::vector<Vector> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace bbgcn::backbone
