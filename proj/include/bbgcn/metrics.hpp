#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bbgcn/data_ingest.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn::metrics {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Mann-Whitney AUC: probability that a random positive outscores a random
/// negative, ties counting one half. Empty when either class is absent.
inline std::optional<double> auc_score(std::span<const double> scores,
                                       std::span<const std::uint8_t> labels) {
  detail::require_shape(scores.size() == labels.size(), "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t k = i;
    std::size_t tied_pos = 0;
    while (k < n && scores[order[k]] == scores[order[i]]) {
      tied_pos += labels[order[k]] ? 1 : 0;
      ++k;
    }
    const double midrank = 0.5 * static_cast<double>(i + 1 + k);
    rank_sum += midrank * static_cast<double>(tied_pos);
    pos += tied_pos;
    i = k;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

struct RocPoint {
  double threshold;  // scores >= threshold are called positive
  double fpr;
  double tpr;
};

/// One point per distinct score plus the (0,0) start at +inf.
inline std::vector<RocPoint> roc_points(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels) {
  detail::require_shape(scores.size() == labels.size(), "scores and labels differ in length");
  const std::size_t n = scores.size();
  const auto pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                          [](auto l) { return l != 0; }));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw InputError("ROC curve needs both positive and negative samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> pts{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    const double t = scores[order[i]];
    while (i < n && scores[order[i]] == t) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    pts.push_back({t, static_cast<double>(fp) / static_cast<double>(neg),
                   static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return pts;
}

inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return area;
}

struct OverallPrf {
  double op = 0.0;
  double or_ = 0.0;
  double of1 = 0.0;
  std::int64_t correct = 0;    // sum of n^c
  std::int64_t truth = 0;      // sum of n^g
  std::int64_t predicted = 0;  // sum of n^p
  bool op_undefined = false;
  bool or_undefined = false;
  bool of1_undefined = false;
};

/// Micro-averaged precision/recall/F1 over N x C 0/1 matrices.
inline OverallPrf overall_prf(const Matrix& predictions, const Matrix& truths) {
  detail::require_shape(predictions.rows() == truths.rows() && predictions.cols() == truths.cols(),
                        "prediction and truth matrices differ in shape");
  OverallPrf r;
  for (Eigen::Index i = 0; i < truths.rows(); ++i)
    for (Eigen::Index j = 0; j < truths.cols(); ++j) {
      const bool p = predictions(i, j) != 0.0;
      const bool t = truths(i, j) != 0.0;
      r.predicted += p;
      r.truth += t;
      r.correct += p && t;
    }
  const auto c = static_cast<double>(r.correct);
  r.op_undefined = r.predicted == 0;
  r.or_undefined = r.truth == 0;
  r.op = r.op_undefined ? 0.0 : c / static_cast<double>(r.predicted);
  r.or_ = r.or_undefined ? 0.0 : c / static_cast<double>(r.truth);
  r.of1_undefined = r.op + r.or_ == 0.0;
  r.of1 = r.of1_undefined ? 0.0 : 2.0 * r.op * r.or_ / (r.op + r.or_);
  return r;
}

/// Positive when sigma(O) > 0.5, i.e. O > 0.
inline Matrix threshold_logits(const Matrix& logits) {
  return (logits.array() > 0.0).cast<double>();
}

struct EvaluationReport {
  std::vector<std::optional<double>> per_label_auc;
  double mean_auc = 0.0;  // over defined labels; NaN when none are defined
  std::size_t defined_labels = 0;
  OverallPrf prf;
  std::vector<std::vector<RocPoint>> roc;  // empty for undefined labels
};

/// logits and truths are N x C. Ranking uses the logits directly (sigmoid is
/// monotone, and saturates in double precision); ROC thresholds are logits.
inline EvaluationReport evaluate(const Matrix& logits, const Matrix& truths) {
  detail::require_shape(logits.rows() == truths.rows() && logits.cols() == truths.cols(),
                        "logit and truth matrices differ in shape");
  EvaluationReport rep;
  double sum = 0.0;
  std::vector<double> scores(static_cast<std::size_t>(logits.rows()));
  std::vector<std::uint8_t> labels(scores.size());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      scores[i] = logits(i, j);
      labels[i] = truths(i, j) != 0.0;
    }
    auto auc = auc_score(scores, labels);
    rep.per_label_auc.push_back(auc);
    if (auc) {
      sum += *auc;
      ++rep.defined_labels;
      rep.roc.push_back(roc_points(scores, labels));
    } else {
      rep.roc.emplace_back();
    }
  }
  rep.mean_auc = rep.defined_labels ? sum / static_cast<double>(rep.defined_labels)
                                    : std::numeric_limits<double>::quiet_NaN();
  rep.prf = overall_prf(threshold_logits(logits), truths);
  return rep;
}

struct RankedLabel {
  std::size_t index;
  double score;
};

/// Top-k labels of one logit vector by sigmoid score, ties to the lower index.
inline std::vector<RankedLabel> top_k(const Vector& logits, std::size_t k) {
  if (k > static_cast<std::size_t>(logits.size())) throw InputError("k exceeds number of labels");
  // Ordered by logit so that saturated sigmoids still rank correctly.
  std::vector<std::size_t> order(static_cast<std::size_t>(logits.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return logits[a] > logits[b]; });
  std::vector<RankedLabel> out;
  for (std::size_t r = 0; r < k; ++r) out.push_back({order[r], sigmoid(logits[order[r]])});
  return out;
}

}  // namespace bbgcn::metrics
