#pragma once

// Label co-occurrence graph.
//
//   P_ij  = T_ij / T_j                  conditional probability P(L_i | L_j)
//   A_ij  = [P_ij > eps]                binarized, diagonal kept when T_i > 0
//   EA_ij = delta * A_ij / sum_k!=i A_ik  (i != j),  EA_ii = 1 - delta
//   EA~   = D^-1 EA,  D = diag(row sums of EA)
//
// The reweighting denominator runs over the row's off-diagonal edges by
// default; ReweightAxis::column normalizes over the column instead.

#include <span>
#include <vector>

#include "bbgcn/data_ingest.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn::graph {

struct CooccurrenceStats {
  CountVector single;  // T_j
  CountMatrix pair;    // T_ij, symmetric, diagonal equals single

  Eigen::Index num_labels() const { return single.size(); }
};

enum class ReweightAxis { row, column };

struct CorrelationGraph {
  Matrix P;
  Matrix A;
  Matrix EA;
  Matrix EA_norm;
  double epsilon = 0.0;
  double delta = 0.0;
  ReweightAxis axis = ReweightAxis::row;
};

inline CooccurrenceStats count_cooccurrence(std::span<const data::LabeledSample> samples,
                                            std::size_t C) {
  if (samples.empty()) throw InputError("cannot count co-occurrence over an empty sample list");
  const auto n = static_cast<Eigen::Index>(C);
  CooccurrenceStats s{CountVector::Zero(n), CountMatrix::Zero(n, n)};
  std::vector<Eigen::Index> active;
  for (const auto& sample : samples) {
    if (sample.labels.size() != C)
      throw ShapeError("sample " + sample.sample_id + " has " +
                       std::to_string(sample.labels.size()) + " labels, expected " +
                       std::to_string(C));
    active.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (sample.labels[j]) active.push_back(j);
    for (auto i : active) {
      ++s.single(i);
      for (auto j : active) ++s.pair(i, j);
    }
  }
  return s;
}

inline Matrix conditional_matrix(const CooccurrenceStats& stats) {
  const auto n = stats.num_labels();
  Matrix P = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (stats.single(j) == 0) continue;
    const auto tj = static_cast<double>(stats.single(j));
    for (Eigen::Index i = 0; i < n; ++i) P(i, j) = static_cast<double>(stats.pair(i, j)) / tj;
  }
  return P;
}

/// Strict threshold: entries equal to epsilon are dropped. Diagonal entries
/// are set when the label occurs at all (P_ii == 1).
inline Matrix binarize(const Matrix& P, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InputError("epsilon must lie in [0, 1]");
  detail::require_shape(P.rows() == P.cols(), "P must be square");
  Matrix A = (P.array() > epsilon).cast<double>();
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    if (P(i, i) > 0.0) A(i, i) = 1.0;
  return A;
}

inline Matrix reweight(const Matrix& A, double delta, ReweightAxis axis = ReweightAxis::row) {
  if (!(delta >= 0.0 && delta < 1.0)) throw InputError("delta must lie in [0, 1)");
  detail::require_shape(A.rows() == A.cols(), "A must be square");
  const auto n = A.rows();
  Matrix EA = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double off = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k == i) continue;
      off += axis == ReweightAxis::row ? A(i, k) : A(k, i);
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k == i || off == 0.0) continue;
      if (axis == ReweightAxis::row)
        EA(i, k) = delta * A(i, k) / off;
      else
        EA(k, i) = delta * A(k, i) / off;
    }
    EA(i, i) = 1.0 - delta;
  }
  return EA;
}

/// Row-stochastic normalization; all-zero rows stay zero.
inline Matrix normalize(const Matrix& EA) {
  Matrix out = EA;
  for (Eigen::Index i = 0; i < EA.rows(); ++i) {
    const double sum = EA.row(i).sum();
    if (sum > 0.0) out.row(i) /= sum;
  }
  return out;
}

inline CorrelationGraph build_graph(const CooccurrenceStats& stats, double epsilon, double delta,
                                    ReweightAxis axis = ReweightAxis::row) {
  CorrelationGraph g;
  g.epsilon = epsilon;
  g.delta = delta;
  g.axis = axis;
  g.P = conditional_matrix(stats);
  g.A = binarize(g.P, epsilon);
  g.EA = reweight(g.A, delta, axis);
  g.EA_norm = normalize(g.EA);
  return g;
}

}  // namespace bbgcn::graph
