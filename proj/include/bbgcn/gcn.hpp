#pragma once

// Stacked graph convolution over the label graph:
//   H^0 = W,  H^{l+1} = f(EA~ H^l Theta^l),  LO = H^L
// f is LeakyReLU; the last layer can be left linear.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bbgcn/error.hpp"
#include "bbgcn/rng.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn {

inline double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }

/// Subgradient at exactly 0 is the slope.
inline double leaky_relu_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

inline Matrix leaky_relu(const Matrix& z, double slope) {
  return z.unaryExpr([slope](double x) { return leaky_relu(x, slope); });
}

inline Matrix leaky_relu_grad(const Matrix& z, double slope) {
  return z.unaryExpr([slope](double x) { return leaky_relu_grad(x, slope); });
}

/// Fan-in uniform initialization in [-1/sqrt(rows), 1/sqrt(rows)].
inline Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

/// Callback used by the optimizer and checkpointing to walk parameters.
using ParameterVisitor = std::function<void(const std::string& name, Matrix& value)>;
using ConstParameterVisitor = std::function<void(const std::string& name, const Matrix& value)>;

namespace gcn {

struct StackOptions {
  double slope = 0.2;
  bool final_linear = false;
};

class Stack;

struct ForwardCache {
  const Stack* owner = nullptr;
  std::uint64_t generation = 0;
  Matrix adjacency;
  std::vector<Matrix> propagated;  // EA~ H^l
  std::vector<Matrix> pre;         // EA~ H^l Theta^l
  Matrix output;                   // LO
};

struct Gradients {
  std::vector<Matrix> theta;
  Matrix input;  // dLoss/dW
};

class Stack {
 public:
  Stack() = default;

  Stack(std::vector<Matrix> thetas, StackOptions opts) : thetas_(std::move(thetas)), opts_(opts) {
    if (thetas_.empty()) throw ShapeError("GCN stack needs at least one layer");
    if (!(opts_.slope > 0.0)) throw InputError("LeakyReLU slope must be positive");
    for (std::size_t l = 1; l < thetas_.size(); ++l)
      detail::require_shape(thetas_[l - 1].cols() == thetas_[l].rows(),
                            "GCN layer dimensions do not chain at layer " + std::to_string(l));
  }

  /// dims = [D2, d1, ..., D2'].
  static Stack init(const std::vector<Eigen::Index>& dims, StackOptions opts, std::uint64_t seed) {
    if (dims.size() < 2) throw ShapeError("GCN dims need at least input and output");
    Rng rng(seed);
    std::vector<Matrix> thetas;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
      thetas.push_back(fan_in_uniform(dims[l], dims[l + 1], rng));
    return Stack(std::move(thetas), opts);
  }

  std::size_t depth() const { return thetas_.size(); }
  Eigen::Index input_dim() const { return thetas_.front().rows(); }
  Eigen::Index output_dim() const { return thetas_.back().cols(); }
  const StackOptions& options() const { return opts_; }
  const std::vector<Matrix>& thetas() const { return thetas_; }
  std::uint64_t generation() const { return generation_; }

  std::vector<Eigen::Index> dims() const {
    std::vector<Eigen::Index> d{input_dim()};
    for (const auto& t : thetas_) d.push_back(t.cols());
    return d;
  }

  ForwardCache forward(const Matrix& W, const Matrix& adjacency) const {
    detail::require_shape(adjacency.rows() == adjacency.cols() && adjacency.rows() == W.rows(),
                          "adjacency must be CxC with C = rows of W");
    detail::require_shape(W.cols() == input_dim(), "embedding width " + std::to_string(W.cols()) +
                                                       " != GCN input dim " +
                                                       std::to_string(input_dim()));
    ForwardCache cache;
    cache.owner = this;
    cache.generation = generation_;
    cache.adjacency = adjacency;
    Matrix h = W;
    for (std::size_t l = 0; l < thetas_.size(); ++l) {
      cache.propagated.push_back(adjacency * h);
      cache.pre.push_back(cache.propagated.back() * thetas_[l]);
      h = activated(l) ? leaky_relu(cache.pre.back(), opts_.slope) : cache.pre.back();
    }
    cache.output = std::move(h);
    return cache;
  }

  Gradients backward(const ForwardCache& cache, const Matrix& upstream) const {
    if (cache.owner != this || cache.generation != generation_)
      throw ShapeError("stale GCN cache: parameters changed since the forward pass");
    detail::require_shape(upstream.rows() == cache.output.rows() &&
                              upstream.cols() == cache.output.cols(),
                          "upstream gradient must match LO shape");
    Gradients g;
    g.theta.resize(thetas_.size());
    Matrix grad = upstream;
    for (std::size_t l = thetas_.size(); l-- > 0;) {
      const Matrix dz = activated(l)
                            ? Matrix(grad.cwiseProduct(leaky_relu_grad(cache.pre[l], opts_.slope)))
                            : grad;
      g.theta[l] = cache.propagated[l].transpose() * dz;
      grad = cache.adjacency.transpose() * (dz * thetas_[l].transpose());
    }
    g.input = std::move(grad);
    return g;
  }

  void mutate_parameters(const ParameterVisitor& f) {
    for (std::size_t l = 0; l < thetas_.size(); ++l) f("gcn.theta" + std::to_string(l), thetas_[l]);
    ++generation_;
  }

  void inspect_parameters(const ConstParameterVisitor& f) const {
    for (std::size_t l = 0; l < thetas_.size(); ++l) f("gcn.theta" + std::to_string(l), thetas_[l]);
  }

 private:
  bool activated(std::size_t l) const { return !(opts_.final_linear && l + 1 == thetas_.size()); }

  std::vector<Matrix> thetas_;
  StackOptions opts_;
  std::uint64_t generation_ = 0;
};

/// Hidden widths for a given depth: [D2, hidden x (depth-1), out].
inline std::vector<Eigen::Index> dims_for_depth(Eigen::Index input, Eigen::Index hidden,
                                                Eigen::Index out, std::size_t depth) {
  std::vector<Eigen::Index> d{input};
  for (std::size_t l = 1; l < depth; ++l) d.push_back(hidden);
  d.push_back(out);
  return d;
}

}  // namespace gcn
}  // namespace bbgcn
