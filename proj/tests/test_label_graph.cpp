#include <gtest/gtest.h>

#include "bbgcn/label_graph.hpp"
#include "support.hpp"

using namespace bbgcn;
using namespace bbgcn::graph;

namespace {

constexpr Eigen::Index a = 0, b = 1, c = 2;

CooccurrenceStats micro_stats() { return count_cooccurrence(oracle::micro_samples(), 3); }

}  // namespace

TEST(Cooccurrence, MicroDatasetCounts) {
  const auto s = micro_stats();
  EXPECT_EQ(s.single(a), 3);
  EXPECT_EQ(s.single(b), 3);
  EXPECT_EQ(s.single(c), 1);
  EXPECT_EQ(s.pair(a, b), 2);
  EXPECT_EQ(s.pair(b, c), 1);
  EXPECT_EQ(s.pair(a, c), 0);
}

TEST(Cooccurrence, AllZeroSamples) {
  std::vector<data::LabeledSample> z{{"x", {0, 0, 0}}, {"y", {0, 0, 0}}};
  const auto s = count_cooccurrence(z, 3);
  EXPECT_EQ(s.single.sum(), 0);
  EXPECT_EQ(s.pair.sum(), 0);
}

TEST(Cooccurrence, Errors) {
  EXPECT_THROW(count_cooccurrence(std::vector<data::LabeledSample>{}, 3), InputError);
  std::vector<data::LabeledSample> bad{{"x", {1, 0}}};
  EXPECT_THROW(count_cooccurrence(bad, 3), ShapeError);
}

TEST(Cooccurrence, StructuralInvariants) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto C = oracle::random_size(rng, 2, 10);
    const auto samples = oracle::random_samples(rng, oracle::random_size(rng, 1, 100), C, rng.uniform());
    const auto s = count_cooccurrence(samples, C);
    for (Eigen::Index i = 0; i < s.num_labels(); ++i) {
      EXPECT_EQ(s.pair(i, i), s.single(i));
      for (Eigen::Index j = 0; j < s.num_labels(); ++j) {
        EXPECT_EQ(s.pair(i, j), s.pair(j, i));
        EXPECT_LE(s.pair(i, j), std::min(s.single(i), s.single(j)));
      }
    }
  }
}

TEST(Conditional, MicroDataset) {
  const auto P = conditional_matrix(micro_stats());
  EXPECT_DOUBLE_EQ(P(a, b), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(P(b, c), 1.0);
  EXPECT_DOUBLE_EQ(P(c, a), 0.0);
  EXPECT_DOUBLE_EQ(P(c, b), 1.0 / 3.0);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(P(i, i), 1.0);
}

TEST(Conditional, AbsentLabelGivesZeroColumn) {
  std::vector<data::LabeledSample> s{{"x", {1, 0, 1}}, {"y", {1, 0, 0}}};
  const auto P = conditional_matrix(count_cooccurrence(s, 3));
  EXPECT_TRUE(P.col(1).isZero(0.0));
  EXPECT_EQ(P(1, 1), 0.0);
}

TEST(Conditional, BayesSymmetry) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto C = oracle::random_size(rng, 2, 8);
    const auto samples = oracle::random_samples(rng, oracle::random_size(rng, 1, 60), C, 0.4);
    const auto s = count_cooccurrence(samples, C);
    const auto P = conditional_matrix(s);
    for (Eigen::Index i = 0; i < P.rows(); ++i)
      for (Eigen::Index j = 0; j < P.cols(); ++j) {
        EXPECT_GE(P(i, j), 0.0);
        EXPECT_LE(P(i, j), 1.0);
        if (s.single(i) > 0 && s.single(j) > 0)
          EXPECT_NEAR(P(i, j) * s.single(j), P(j, i) * s.single(i), 1e-12);
      }
  }
}

TEST(Binarize, MicroDataset) {
  const auto A = binarize(conditional_matrix(micro_stats()), 0.3);
  EXPECT_EQ(A(a, b), 1.0);
  EXPECT_EQ(A(c, b), 1.0);
  EXPECT_EQ(A(a, c), 0.0);
  EXPECT_EQ(A(c, a), 0.0);
  EXPECT_EQ(A.diagonal(), Vector::Ones(3));
}

TEST(Binarize, ThresholdIsStrict) {
  Matrix P(2, 2);
  P << 1.0, 0.3, 0.30000000000000004, 1.0;
  const auto A = binarize(P, 0.3);
  EXPECT_EQ(A(0, 1), 0.0);
  EXPECT_EQ(A(1, 0), 1.0);
}

TEST(Binarize, EpsilonOneKeepsOnlyDiagonal) {
  const auto A = binarize(conditional_matrix(micro_stats()), 1.0);
  EXPECT_EQ(A, Matrix(Matrix::Identity(3, 3)));
}

TEST(Binarize, RejectsOutOfRangeEpsilon) {
  EXPECT_THROW(binarize(Matrix::Identity(2, 2), -0.1), InputError);
  EXPECT_THROW(binarize(Matrix::Identity(2, 2), 1.5), InputError);
}

TEST(Binarize, MonotoneInEpsilon) {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const auto C = oracle::random_size(rng, 2, 8);
    const auto P = conditional_matrix(
        count_cooccurrence(oracle::random_samples(rng, 40, C, 0.4), C));
    const double e1 = rng.uniform(), e2 = e1 + (1.0 - e1) * rng.uniform();
    const auto A1 = binarize(P, e1), A2 = binarize(P, e2);
    EXPECT_TRUE((A2.array() <= A1.array()).all());
  }
}

TEST(Reweight, MicroDataset) {
  const auto EA = reweight(binarize(conditional_matrix(micro_stats()), 0.3), 0.2);
  EXPECT_NEAR(EA(b, a), 0.1, 1e-15);
  EXPECT_NEAR(EA(b, c), 0.1, 1e-15);
  EXPECT_NEAR(EA(a, b), 0.2, 1e-15);
  EXPECT_NEAR(EA(c, b), 0.2, 1e-15);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(EA(i, i), 0.8, 1e-15);
}

TEST(Reweight, IsolatedNode) {
  Matrix A = Matrix::Identity(3, 3);
  A(0, 1) = 1.0;
  const auto EA = reweight(A, 0.2);
  EXPECT_EQ(EA(2, 0), 0.0);
  EXPECT_EQ(EA(2, 1), 0.0);
  EXPECT_NEAR(EA(2, 2), 0.8, 1e-15);
  EXPECT_NEAR(EA(0, 1), 0.2, 1e-15);
}

TEST(Reweight, ColumnAxisTransposesTheRule) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const auto C = oracle::random_size(rng, 2, 7);
    const auto A = binarize(conditional_matrix(
                                count_cooccurrence(oracle::random_samples(rng, 30, C, 0.4), C)),
                            0.3);
    const Matrix At = A.transpose();
    const Matrix expect = reweight(At, 0.3, ReweightAxis::row).transpose();
    EXPECT_TRUE(reweight(A, 0.3, ReweightAxis::column).isApprox(expect, 1e-15));
  }
}

TEST(Reweight, RejectsOutOfRangeDelta) {
  EXPECT_THROW(reweight(Matrix::Identity(2, 2), 1.0), InputError);
  EXPECT_THROW(reweight(Matrix::Identity(2, 2), -0.5), InputError);
}

TEST(Reweight, RowMassProperty) {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const auto C = oracle::random_size(rng, 2, 10);
    const double delta = rng.uniform(0.0, 0.99);
    const auto A = binarize(
        conditional_matrix(count_cooccurrence(oracle::random_samples(rng, 50, C, 0.3), C)),
        rng.uniform());
    const auto EA = reweight(A, delta);
    for (Eigen::Index i = 0; i < EA.rows(); ++i) {
      EXPECT_NEAR(EA(i, i), 1.0 - delta, 1e-12);
      const double off = EA.row(i).sum() - EA(i, i);
      const double edges = A.row(i).sum() - A(i, i);
      if (edges > 0) {
        EXPECT_NEAR(off, delta, 1e-9);
        EXPECT_NEAR(EA.row(i).sum(), 1.0, 1e-9);
      } else {
        EXPECT_EQ(off, 0.0);
      }
    }
  }
}

TEST(Normalize, MicroDatasetUnchanged) {
  const auto g = build_graph(micro_stats(), 0.3, 0.2);
  EXPECT_TRUE(g.EA_norm.isApprox(g.EA, 1e-15));
}

TEST(Normalize, IdentityAndScaling) {
  const Matrix I = Matrix::Identity(4, 4);
  EXPECT_EQ(normalize(I), I);
  Matrix M(2, 2);
  M << 1, 3, 2, 2;
  Matrix M2 = M;
  M2.row(0) *= 2.0;
  EXPECT_TRUE(normalize(M).isApprox(normalize(M2), 1e-15));
  Matrix Z = Matrix::Zero(2, 2);
  Z(0, 0) = 5;
  const auto N = normalize(Z);
  EXPECT_TRUE(N.row(1).isZero(0.0));
  EXPECT_EQ(N(0, 0), 1.0);
}

TEST(Normalize, IdempotentAndStochastic) {
  Rng rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    const auto C = oracle::random_size(rng, 2, 9);
    Matrix EA = oracle::random_matrix(rng, C, C).cwiseAbs();
    if (trial % 5 == 0) EA.row(0).setZero();
    const auto N = normalize(EA);
    EXPECT_TRUE((normalize(N) - N).cwiseAbs().maxCoeff() <= 1e-12);
    for (Eigen::Index i = 0; i < N.rows(); ++i)
      if (EA.row(i).sum() > 0) EXPECT_NEAR(N.row(i).sum(), 1.0, 1e-9);
  }
}

TEST(BuildGraph, MatchesBruteForcePipeline) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto C = oracle::random_size(rng, 2, 10);
    const auto samples = oracle::random_samples(rng, oracle::random_size(rng, 1, 100), C, 0.3);
    const double eps = rng.uniform(), delta = rng.uniform(0.0, 0.95);
    const auto g = build_graph(count_cooccurrence(samples, C), eps, delta);
    const auto P = oracle::brute_conditional(oracle::brute_counts(samples, C));
    const auto A = oracle::brute_binarize(P, eps);
    const auto EA = oracle::brute_reweight_rows(A, delta);
    const auto N = oracle::brute_row_normalize(EA);
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < C; ++j) {
        EXPECT_NEAR(g.P(i, j), P[i][j], 1e-12);
        EXPECT_EQ(g.A(i, j), A[i][j]);
        EXPECT_NEAR(g.EA(i, j), EA[i][j], 1e-12);
        EXPECT_NEAR(g.EA_norm(i, j), N[i][j], 1e-12);
      }
  }
}
