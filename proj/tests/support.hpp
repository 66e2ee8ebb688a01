#pragma once

// Shared helpers for the unit suites and the acceptance runner: random
// instance generators, straight-line reference implementations used as
// oracles, finite differences and scratch directories.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "bbgcn/data_ingest.hpp"
#include "bbgcn/rng.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn::oracle {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- instances

/// The four-sample dataset over labels a, b, c used throughout the suites:
/// {a,b}, {a,b}, {a}, {b,c}.
inline std::vector<data::LabeledSample> micro_samples() {
  return {{"s1", {1, 1, 0}}, {"s2", {1, 1, 0}}, {"s3", {1, 0, 0}}, {"s4", {0, 1, 1}}};
}

inline const char* micro_pipe_file() { return "s1,a|b\ns2,b|a\ns3,a\ns4,b|c\n"; }

inline std::vector<data::LabeledSample> random_samples(Rng& rng, std::size_t n, std::size_t C,
                                                       double density) {
  std::vector<data::LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    data::LabeledSample s{"r" + std::to_string(i), std::vector<std::uint8_t>(C, 0)};
    for (auto& l : s.labels) l = rng.bernoulli(density) ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
  return m;
}

inline std::size_t random_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// ------------------------------------------------------------------ oracles

using Table = std::vector<std::vector<double>>;

struct BruteCounts {
  std::vector<long> single;
  std::vector<std::vector<long>> pair;
};

/// Plain double loop over samples and label pairs.
inline BruteCounts brute_counts(const std::vector<data::LabeledSample>& samples, std::size_t C) {
  BruteCounts b{std::vector<long>(C, 0), std::vector<std::vector<long>>(C, std::vector<long>(C, 0))};
  for (const auto& s : samples)
    for (std::size_t i = 0; i < C; ++i) {
      if (s.labels[i] == 1) b.single[i] += 1;
      for (std::size_t j = 0; j < C; ++j)
        if (s.labels[i] == 1 && s.labels[j] == 1) b.pair[i][j] += 1;
    }
  return b;
}

inline Table brute_conditional(const BruteCounts& b) {
  const auto C = b.single.size();
  Table P(C, std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j)
      P[i][j] = b.single[j] == 0 ? 0.0 : double(b.pair[i][j]) / double(b.single[j]);
  return P;
}

inline Table brute_binarize(const Table& P, double eps) {
  const auto C = P.size();
  Table A(C, std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      if (i == j)
        A[i][j] = P[i][i] > 0.0 ? 1.0 : 0.0;
      else
        A[i][j] = P[i][j] <= eps ? 0.0 : 1.0;
    }
  return A;
}

inline Table brute_reweight_rows(const Table& A, double delta) {
  const auto C = A.size();
  Table EA(C, std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < C; ++i) {
    int edges = 0;
    for (std::size_t j = 0; j < C; ++j)
      if (j != i && A[i][j] == 1.0) ++edges;
    for (std::size_t j = 0; j < C; ++j) {
      if (j == i)
        EA[i][j] = 1.0 - delta;
      else if (edges > 0 && A[i][j] == 1.0)
        EA[i][j] = delta / edges;
    }
  }
  return EA;
}

inline Table brute_row_normalize(const Table& EA) {
  Table out = EA;
  for (auto& row : out) {
    double s = 0.0;
    for (double v : row) s += v;
    if (s > 0.0)
      for (double& v : row) v /= s;
  }
  return out;
}

/// Fraction of positive-negative pairs ranked correctly, ties as one half.
inline double brute_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double good = 0.0, total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!(l[i] == 1 && l[j] == 0)) continue;
      total += 1.0;
      if (s[i] > s[j]) good += 1.0;
      else if (s[i] == s[j]) good += 0.5;
    }
  return good / total;
}

inline Table to_table(const Matrix& m) {
  Table t(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[i][j] = m(i, j);
  return t;
}

inline Table matmul(const Table& a, const Table& b) {
  Table c(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b.front().size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

/// H <- LeakyReLU(A H Theta) per layer, optionally skipping the last activation.
inline Table dense_gcn(const Table& adj, Table h, const std::vector<Table>& thetas, double slope,
                       bool final_linear = false) {
  for (std::size_t l = 0; l < thetas.size(); ++l) {
    h = matmul(matmul(adj, h), thetas[l]);
    if (final_linear && l + 1 == thetas.size()) break;
    for (auto& row : h)
      for (double& v : row) v = v > 0.0 ? v : slope * v;
  }
  return h;
}

/// Explicit bilinear form: O = sum_k fc3_k * m1^T S_k m2 + b3 with
/// S_k = sum over the k-th group's columns t of u_t v_t^T (a D3 x D3 matrix).
inline double explicit_bilinear(const Vector& m1, const Vector& m2, const Matrix& u,
                                const Matrix& v, const Matrix& fc3_w, double fc3_b) {
  const auto G = fc3_w.rows();
  const auto g = u.cols() / G;
  const auto d3 = u.rows();
  double out = fc3_b;
  for (Eigen::Index k = 0; k < G; ++k) {
    Matrix S = Matrix::Zero(d3, d3);
    for (Eigen::Index t = k * g; t < (k + 1) * g; ++t)
      for (Eigen::Index a = 0; a < d3; ++a)
        for (Eigen::Index b = 0; b < d3; ++b) S(a, b) += u(a, t) * v(b, t);
    double q = 0.0;
    for (Eigen::Index a = 0; a < d3; ++a)
      for (Eigen::Index b = 0; b < d3; ++b) q += m1[a] * S(a, b) * m2[b];
    out += fc3_w(k, 0) * q;
  }
  return out;
}

// --------------------------------------------------------- finite differences

/// Central differences of f with respect to every entry of x (restored after).
inline Matrix numeric_gradient(Matrix& x, const std::function<double()>& f, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double up = f();
      x(i, j) = keep - h;
      const double down = f();
      x(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  return g;
}

/// Largest entrywise relative error; entries below `floor` in both tensors
/// are compared against the floor.
inline double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double den = std::max({std::abs(a(i, j)), std::abs(b(i, j)), floor});
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / den);
    }
  return worst;
}

// ------------------------------------------------------------------- files

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("bbgcn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace bbgcn::oracle
