#pragma once

// Low-rank bilinear bridge between an image feature F and a label embedding
// LO_j, with parameters shared across all labels:
//
//   M1 = FC1(F),  M2 = FC2(LO_j)                 (D3 each)
//   h  = (u~^T M1) o (v~^T M2)                   (G*g, Hadamard product)
//   TO = GroupSum(h, G)                          (G groups of g consecutive entries)
//   O_j = FC3(TO)
//
// Because M2 depends only on the label, a batch of N features against C
// labels reduces to O = (M1 u~) diag(s) (M2 v~)^T + b3, where s_t is the FC3
// weight of the group that Hadamard entry t falls into.

#include <cstdint>
#include <string>

#include "bbgcn/error.hpp"
#include "bbgcn/gcn.hpp"
#include "bbgcn/rng.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn::fusion {

struct Dims {
  Eigen::Index d1 = 768;   // image feature width
  Eigen::Index d2 = 768;   // label embedding width (GCN output)
  Eigen::Index d3 = 384;
  Eigen::Index groups = 64;
  Eigen::Index group_size = 6;

  Eigen::Index hadamard_width() const { return groups * group_size; }
};

/// Sums consecutive runs of `group_size` entries; input length must be
/// groups * group_size.
inline Vector group_sum(const Vector& h, Eigen::Index groups) {
  detail::require_shape(groups >= 1 && h.size() % groups == 0,
                        "GroupSum input length must be a multiple of G");
  const auto g = h.size() / groups;
  Vector out(groups);
  for (Eigen::Index k = 0; k < groups; ++k) out[k] = h.segment(k * g, g).sum();
  return out;
}

class Parameters;

struct BatchCache {
  const Parameters* owner = nullptr;
  std::uint64_t generation = 0;
  Matrix features;     // N x D1
  Matrix label_embed;  // C x D2
  Matrix m1;           // N x D3
  Matrix m2;           // C x D3
  Matrix a;            // N x Gg  (M1 u~)
  Matrix b;            // C x Gg  (M2 v~)
  Vector s;            // Gg, FC3 weight per Hadamard entry
  Matrix logits;       // N x C
};

struct Gradients {
  Matrix fc1_w, fc1_b, fc2_w, fc2_b, u, v, fc3_w, fc3_b;
  Matrix features;     // dLoss/dF, N x D1
  Matrix label_embed;  // dLoss/dLO, C x D2
};

class Parameters {
 public:
  // Biases are stored as column matrices so every tensor is a Matrix.
  Matrix fc1_w, fc1_b;  // D1 x D3, D3 x 1
  Matrix fc2_w, fc2_b;  // D2 x D3, D3 x 1
  Matrix u, v;          // D3 x Gg
  Matrix fc3_w, fc3_b;  // G x 1, 1 x 1

  Parameters() = default;

  static Parameters init(const Dims& d, std::uint64_t seed) {
    detail::require_shape(d.d1 >= 1 && d.d2 >= 1 && d.d3 >= 1 && d.groups >= 1 &&
                              d.group_size >= 1,
                          "fusion dimensions must be positive");
    Rng rng(seed);
    Parameters p;
    p.fc1_w = fan_in_uniform(d.d1, d.d3, rng);
    p.fc1_b = fan_bias(d.d1, d.d3, rng);
    p.fc2_w = fan_in_uniform(d.d2, d.d3, rng);
    p.fc2_b = fan_bias(d.d2, d.d3, rng);
    p.u = fan_in_uniform(d.d3, d.hadamard_width(), rng);
    p.v = fan_in_uniform(d.d3, d.hadamard_width(), rng);
    p.fc3_w = fan_in_uniform(d.groups, 1, rng);
    p.fc3_b = fan_bias(d.groups, 1, rng);
    p.groups_ = d.groups;
    return p;
  }

  static Parameters from_tensors(Matrix fc1_w, Matrix fc1_b, Matrix fc2_w, Matrix fc2_b, Matrix u,
                                 Matrix v, Matrix fc3_w, Matrix fc3_b) {
    Parameters p;
    p.fc1_w = std::move(fc1_w);
    p.fc1_b = std::move(fc1_b);
    p.fc2_w = std::move(fc2_w);
    p.fc2_b = std::move(fc2_b);
    p.u = std::move(u);
    p.v = std::move(v);
    p.fc3_w = std::move(fc3_w);
    p.fc3_b = std::move(fc3_b);
    p.groups_ = p.fc3_w.rows();
    p.validate();
    return p;
  }

  Dims dims() const {
    return {fc1_w.rows(), fc2_w.rows(), fc1_w.cols(), groups_, u.cols() / groups_};
  }
  std::uint64_t generation() const { return generation_; }

  void validate() const {
    const auto d3 = fc1_w.cols();
    detail::require_shape(fc1_b.rows() == d3 && fc1_b.cols() == 1, "fc1 bias must be D3 x 1");
    detail::require_shape(fc2_w.cols() == d3 && fc2_b.rows() == d3 && fc2_b.cols() == 1,
                          "fc2 must map to D3");
    detail::require_shape(u.rows() == d3 && v.rows() == d3 && u.cols() == v.cols(),
                          "u~ and v~ must both be D3 x Gg");
    detail::require_shape(groups_ >= 1 && u.cols() % groups_ == 0,
                          "Hadamard width must be a multiple of G");
    detail::require_shape(fc3_w.cols() == 1 && fc3_b.rows() == 1 && fc3_b.cols() == 1,
                          "fc3 must map G -> 1");
  }

  /// Per-entry FC3 weight: s_t = fc3_w[t / g].
  Vector expanded_fc3() const {
    const auto g = u.cols() / groups_;
    Vector s(u.cols());
    for (Eigen::Index t = 0; t < s.size(); ++t) s[t] = fc3_w(t / g, 0);
    return s;
  }

  /// Direct evaluation of one bridging, written out step by step.
  double bridge_one(const Vector& feature, const Vector& label_embed) const {
    detail::require_shape(feature.size() == fc1_w.rows(), "feature width != D1");
    detail::require_shape(label_embed.size() == fc2_w.rows(), "label embedding width != D2'");
    const Vector m1 = fc1_w.transpose() * feature + fc1_b.col(0);
    const Vector m2 = fc2_w.transpose() * label_embed + fc2_b.col(0);
    const Vector h = (u.transpose() * m1).cwiseProduct(v.transpose() * m2);
    const Vector to = group_sum(h, groups_);
    return fc3_w.col(0).dot(to) + fc3_b(0, 0);
  }

  /// features: N x D1, label_embed: C x D2'. Logits are N x C.
  BatchCache forward(const Matrix& features, const Matrix& label_embed) const {
    detail::require_shape(features.cols() == fc1_w.rows(),
                          "feature width " + std::to_string(features.cols()) + " != D1 " +
                              std::to_string(fc1_w.rows()));
    detail::require_shape(label_embed.cols() == fc2_w.rows(),
                          "label embedding width " + std::to_string(label_embed.cols()) +
                              " != D2' " + std::to_string(fc2_w.rows()));
    BatchCache c;
    c.owner = this;
    c.generation = generation_;
    c.features = features;
    c.label_embed = label_embed;
    c.m1 = (features * fc1_w).rowwise() + fc1_b.col(0).transpose();
    c.m2 = (label_embed * fc2_w).rowwise() + fc2_b.col(0).transpose();
    c.a = c.m1 * u;
    c.b = c.m2 * v;
    c.s = expanded_fc3();
    c.logits = (c.a * c.s.asDiagonal()) * c.b.transpose();
    c.logits.array() += fc3_b(0, 0);
    return c;
  }

  /// Logits for a single feature against every label, as a length-C vector.
  Vector bridge_all(const Vector& feature, const Matrix& label_embed) const {
    return forward(feature.transpose(), label_embed).logits.row(0).transpose();
  }

  Gradients backward(const BatchCache& c, const Matrix& upstream) const {
    if (c.owner != this || c.generation != generation_)
      throw ShapeError("stale fusion cache: parameters changed since the forward pass");
    detail::require_shape(upstream.rows() == c.logits.rows() && upstream.cols() == c.logits.cols(),
                          "upstream gradient must match the logit shape");
    Gradients g;
    g.fc3_b = Matrix::Constant(1, 1, upstream.sum());
    const Matrix up_b = upstream * c.b;                    // N x Gg
    const Vector ds = c.a.cwiseProduct(up_b).colwise().sum().transpose();
    const auto gs = u.cols() / groups_;
    g.fc3_w.resize(groups_, 1);
    for (Eigen::Index k = 0; k < groups_; ++k) g.fc3_w(k, 0) = ds.segment(k * gs, gs).sum();

    const Matrix da = up_b * c.s.asDiagonal();                           // N x Gg
    const Matrix db = upstream.transpose() * (c.a * c.s.asDiagonal());   // C x Gg
    g.u = c.m1.transpose() * da;
    g.v = c.m2.transpose() * db;
    const Matrix dm1 = da * u.transpose();  // N x D3
    const Matrix dm2 = db * v.transpose();  // C x D3
    g.fc1_w = c.features.transpose() * dm1;
    g.fc1_b = dm1.colwise().sum().transpose();
    g.fc2_w = c.label_embed.transpose() * dm2;
    g.fc2_b = dm2.colwise().sum().transpose();
    g.features = dm1 * fc1_w.transpose();
    g.label_embed = dm2 * fc2_w.transpose();
    return g;
  }

  void mutate_parameters(const ParameterVisitor& f) {
    f("fusion.fc1_w", fc1_w);
    f("fusion.fc1_b", fc1_b);
    f("fusion.fc2_w", fc2_w);
    f("fusion.fc2_b", fc2_b);
    f("fusion.u", u);
    f("fusion.v", v);
    f("fusion.fc3_w", fc3_w);
    f("fusion.fc3_b", fc3_b);
    ++generation_;
  }

  void inspect_parameters(const ConstParameterVisitor& f) const {
    f("fusion.fc1_w", fc1_w);
    f("fusion.fc1_b", fc1_b);
    f("fusion.fc2_w", fc2_w);
    f("fusion.fc2_b", fc2_b);
    f("fusion.u", u);
    f("fusion.v", v);
    f("fusion.fc3_w", fc3_w);
    f("fusion.fc3_b", fc3_b);
  }

 private:
  static Matrix fan_bias(Eigen::Index fan_in, Eigen::Index n, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix b(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) b(i, 0) = rng.uniform(-bound, bound);
    return b;
  }

  Eigen::Index groups_ = 1;
  std::uint64_t generation_ = 0;
};

/// Gradient tensors in the same order as Parameters::mutate_parameters.
inline void for_each_gradient(const Gradients& g,
                              const std::function<void(const std::string&, const Matrix&)>& f) {
  f("fusion.fc1_w", g.fc1_w);
  f("fusion.fc1_b", g.fc1_b);
  f("fusion.fc2_w", g.fc2_w);
  f("fusion.fc2_b", g.fc2_b);
  f("fusion.u", g.u);
  f("fusion.v", g.v);
  f("fusion.fc3_w", g.fc3_w);
  f("fusion.fc3_b", g.fc3_b);
}

}  // namespace bbgcn::fusion
