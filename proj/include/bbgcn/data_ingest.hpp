#pragma once

// Label files, dataset splits and precomputed feature files.
//
// Two label layouts are understood:
//   pipe:     `sample_id,Label1|Label2|...` with a configurable "no finding"
//             sentinel that maps to the all-zero vector.
//   columnar: one column per label, cells in {1, 0, -1, blank}; -1 is an
//             uncertain annotation resolved by an UncertainPolicy.
//
// Feature files are text: `#dim=<D1>` then `sample_id v1 ... vD1` per line.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bbgcn/error.hpp"
#include "bbgcn/rng.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn::data {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Case-insensitive key after trimming.
inline std::string label_key(std::string_view s) { return lower(trim(s)); }

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool getline_stripped(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

/// Lossless decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

/// Lowercased word tokens of a label name; splits on whitespace and '_'.
inline std::vector<std::string> tokenize_label(std::string_view name) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : name) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '_') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

/// Ordered label set. The index of a label here is its index everywhere
/// downstream (graph rows, embedding rows, logits).
class LabelVocabulary {
 public:
  explicit LabelVocabulary(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) throw InputError("label vocabulary needs at least 2 labels");
    for (std::size_t j = 0; j < labels_.size(); ++j) {
      labels_[j] = std::string(detail::trim(labels_[j]));
      if (labels_[j].empty()) throw InputError("empty label name in vocabulary");
      auto [it, inserted] = index_.emplace(detail::label_key(labels_[j]), j);
      if (!inserted) throw InputError("duplicate label in vocabulary: " + labels_[j]);
      words_.push_back(tokenize_label(labels_[j]));
      if (words_.back().empty()) throw InputError("label has no word tokens: " + labels_[j]);
    }
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& name(std::size_t j) const { return labels_.at(j); }
  const std::vector<std::string>& words(std::size_t j) const { return words_.at(j); }

  /// Case-insensitive lookup; returns size() when absent.
  std::size_t find(std::string_view label) const {
    const auto it = index_.find(detail::label_key(label));
    return it == index_.end() ? size() : it->second;
  }
  bool contains(std::string_view label) const { return find(label) < size(); }

  bool operator==(const LabelVocabulary& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<std::string>> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kNoFinding = "No Finding";

/// The 14 ChestX-Ray14 pathologies in the order of the official label list.
inline LabelVocabulary chestxray14_vocabulary() {
  return LabelVocabulary({"Atelectasis", "Cardiomegaly", "Effusion", "Infiltration", "Mass",
                          "Nodule", "Pneumonia", "Pneumothorax", "Consolidation", "Edema",
                          "Emphysema", "Fibrosis", "Pleural_Thickening", "Hernia"});
}

/// The 14 CheXpert observations; `include_no_finding=false` drops the sentinel.
inline LabelVocabulary chexpert_vocabulary(bool include_no_finding = true) {
  std::vector<std::string> labels = {"No Finding",       "Enlarged Cardiomediastinum",
                                     "Cardiomegaly",     "Lung Opacity",
                                     "Lung Lesion",      "Edema",
                                     "Consolidation",    "Pneumonia",
                                     "Atelectasis",      "Pneumothorax",
                                     "Pleural Effusion", "Pleural Other",
                                     "Fracture",         "Support Devices"};
  if (!include_no_finding) labels.erase(labels.begin());
  return LabelVocabulary(std::move(labels));
}

struct LabeledSample {
  std::string sample_id;
  std::vector<std::uint8_t> labels;

  bool operator==(const LabeledSample&) const = default;
};

struct FeatureRecord {
  std::string sample_id;
  Vector features;
};

enum class UncertainPolicy { as_positive, as_negative };

inline UncertainPolicy parse_uncertain_policy(std::string_view s) {
  const auto k = detail::label_key(s);
  if (k == "as_positive" || k == "ones" || k == "u1") return UncertainPolicy::as_positive;
  if (k == "as_negative" || k == "zeros" || k == "u0") return UncertainPolicy::as_negative;
  throw InputError("unknown uncertain-label policy: " + std::string(s));
}

inline std::string to_string(UncertainPolicy p) {
  return p == UncertainPolicy::as_positive ? "as_positive" : "as_negative";
}

struct PipeFormatOptions {
  bool has_header = false;
  std::string no_finding_token = std::string(kNoFinding);
};

/// Parses `sample_id,Label1|Label2|...` rows. The no-finding token contributes
/// nothing unless the vocabulary itself contains it.
inline std::vector<LabeledSample> parse_pipe_labels(std::istream& in, const LabelVocabulary& vocab,
                                                    const PipeFormatOptions& opts = {}) {
  std::vector<LabeledSample> out;
  std::unordered_set<std::string> seen;
  const auto no_finding = detail::label_key(opts.no_finding_token);
  std::string line;
  std::size_t row = 0;
  bool header_pending = opts.has_header;
  while (detail::getline_stripped(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw InputError("row " + std::to_string(row) + ": expected `sample_id,labels`");
    LabeledSample s;
    s.sample_id = std::string(detail::trim(std::string_view(line).substr(0, comma)));
    if (s.sample_id.empty()) throw InputError("row " + std::to_string(row) + ": empty sample id");
    if (!seen.insert(s.sample_id).second)
      throw InputError("row " + std::to_string(row) + ": duplicate sample id " + s.sample_id);
    s.labels.assign(vocab.size(), 0);
    const auto cell = detail::trim(std::string_view(line).substr(comma + 1));
    if (!cell.empty()) {
      for (auto token : detail::split(cell, '|')) {
        token = detail::trim(token);
        if (token.empty()) continue;
        const auto j = vocab.find(token);
        if (j < vocab.size()) {
          s.labels[j] = 1;
        } else if (detail::label_key(token) != no_finding) {
          throw InputError("row " + std::to_string(row) + ": unknown label token '" +
                           std::string(token) + "'");
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_pipe_labels(std::ostream& out, const std::vector<LabeledSample>& samples,
                              const LabelVocabulary& vocab, const PipeFormatOptions& opts = {}) {
  if (opts.has_header) out << "sample_id,labels\n";
  for (const auto& s : samples) {
    out << s.sample_id << ',';
    bool any = false;
    for (std::size_t j = 0; j < vocab.size(); ++j) {
      if (!s.labels[j]) continue;
      if (any) out << '|';
      out << vocab.name(j);
      any = true;
    }
    if (!any) out << opts.no_finding_token;
    out << '\n';
  }
}

/// CheXpert-style table. The first column is the sample id; every vocabulary
/// label must appear in the header, other columns are ignored.
inline std::vector<LabeledSample> parse_columnar_labels(std::istream& in,
                                                        const LabelVocabulary& vocab,
                                                        UncertainPolicy policy) {
  std::string line;
  if (!detail::getline_stripped(in, line)) throw InputError("columnar label file is empty");
  const auto header = detail::split(line, ',');
  std::vector<std::size_t> column_of(vocab.size(), header.size());
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto j = vocab.find(header[c]);
    if (j < vocab.size()) column_of[j] = c;
  }
  for (std::size_t j = 0; j < vocab.size(); ++j)
    if (column_of[j] == header.size())
      throw InputError("header is missing label column '" + vocab.name(j) + "'");

  std::vector<LabeledSample> out;
  std::unordered_set<std::string> seen;
  std::size_t row = 1;
  while (detail::getline_stripped(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != header.size())
      throw InputError("row " + std::to_string(row) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    LabeledSample s;
    s.sample_id = std::string(detail::trim(cells[0]));
    if (s.sample_id.empty()) throw InputError("row " + std::to_string(row) + ": empty sample id");
    if (!seen.insert(s.sample_id).second)
      throw InputError("row " + std::to_string(row) + ": duplicate sample id " + s.sample_id);
    s.labels.assign(vocab.size(), 0);
    for (std::size_t j = 0; j < vocab.size(); ++j) {
      const auto cell = detail::trim(cells[column_of[j]]);
      if (cell.empty()) continue;
      double v = 0.0;
      if (!detail::parse_double(cell, v) || !(v == 1.0 || v == 0.0 || v == -1.0))
        throw InputError("row " + std::to_string(row) + ", column '" + vocab.name(j) +
                         "': malformed cell '" + std::string(cell) + "'");
      if (v == 1.0 || (v == -1.0 && policy == UncertainPolicy::as_positive)) s.labels[j] = 1;
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Collects the distinct label tokens of a pipe file, sorted case-insensitively,
/// without the no-finding sentinel. Used when no vocabulary is configured.
inline std::vector<std::string> infer_pipe_vocabulary(std::istream& in,
                                                      const PipeFormatOptions& opts = {}) {
  std::vector<std::string> names;
  std::unordered_set<std::string> keys;
  const auto no_finding = detail::label_key(opts.no_finding_token);
  std::string line;
  bool header_pending = opts.has_header;
  while (detail::getline_stripped(in, line)) {
    if (detail::trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    for (auto token : detail::split(std::string_view(line).substr(comma + 1), '|')) {
      token = detail::trim(token);
      if (token.empty()) continue;
      auto key = detail::label_key(token);
      if (key == no_finding) continue;
      if (keys.insert(key).second) names.emplace_back(token);
    }
  }
  std::sort(names.begin(), names.end(),
            [](const auto& a, const auto& b) { return detail::lower(a) < detail::lower(b); });
  return names;
}

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct DatasetSplit {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
  std::vector<LabeledSample> test;
};

/// Part sizes by largest-remainder rounding; ties go to the earlier part.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> ratios{r.train, r.val, r.test};
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = ratios[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[order[i % 3]];
  return sizes;
}

/// Shuffles sample positions with the seeded PRNG and cuts by split_sizes.
/// Each part keeps the input order of its members.
inline DatasetSplit split_dataset(const std::vector<LabeledSample>& samples, const SplitRatios& r,
                                  std::uint64_t seed) {
  if (samples.size() < 3) throw InputError("need at least 3 samples to split");
  if (!(r.train > 0 && r.val > 0 && r.test > 0) ||
      std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw InputError("split ratios must be positive and sum to 1");
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  const auto sizes = split_sizes(samples.size(), r);
  std::array<std::vector<std::size_t>, 3> parts;
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    parts[k].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                    idx.begin() + static_cast<std::ptrdiff_t>(pos + sizes[k]));
    std::sort(parts[k].begin(), parts[k].end());
    pos += sizes[k];
  }
  DatasetSplit out;
  std::array<std::vector<LabeledSample>*, 3> dst{&out.train, &out.val, &out.test};
  for (int k = 0; k < 3; ++k)
    for (auto i : parts[k]) dst[k]->push_back(samples[i]);
  return out;
}

inline std::vector<FeatureRecord> load_features(std::istream& in) {
  std::string line;
  if (!detail::getline_stripped(in, line)) throw InputError("feature file is empty");
  const auto head = detail::trim(line);
  constexpr std::string_view prefix = "#dim=";
  long dim = 0;
  if (head.substr(0, prefix.size()) != prefix ||
      std::from_chars(head.data() + prefix.size(), head.data() + head.size(), dim).ec !=
          std::errc() ||
      dim < 1)
    throw InputError("feature file must start with `#dim=<D1>`");

  std::vector<FeatureRecord> out;
  std::unordered_set<std::string> seen;
  std::size_t row = 1;
  while (detail::getline_stripped(in, line)) {
    ++row;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    std::vector<std::string_view> tokens;
    for (auto t : detail::split(body, ' '))
      if (!t.empty()) tokens.push_back(t);
    double probe = 0.0;
    if (detail::parse_double(tokens.front(), probe) &&
        tokens.size() == static_cast<std::size_t>(dim))
      throw InputError("row " + std::to_string(row) + ": missing sample id");
    if (tokens.size() != static_cast<std::size_t>(dim) + 1)
      throw InputError("row " + std::to_string(row) + ": expected " + std::to_string(dim) +
                       " values, got " + std::to_string(tokens.size() - 1));
    FeatureRecord rec;
    rec.sample_id = std::string(tokens.front());
    if (!seen.insert(rec.sample_id).second)
      throw InputError("row " + std::to_string(row) + ": duplicate sample id " + rec.sample_id);
    rec.features.resize(dim);
    for (long k = 0; k < dim; ++k) {
      double v = 0.0;
      if (!detail::parse_double(tokens[k + 1], v) || !std::isfinite(v))
        throw InputError("row " + std::to_string(row) + ": non-finite or malformed value '" +
                         std::string(tokens[k + 1]) + "'");
      rec.features[k] = v;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_features(std::ostream& out, const std::vector<FeatureRecord>& records) {
  if (records.empty()) throw InputError("no feature records to write");
  const auto dim = records.front().features.size();
  out << "#dim=" << dim << '\n';
  for (const auto& r : records) {
    if (r.features.size() != dim) throw ShapeError("feature records disagree on dimension");
    out << r.sample_id;
    for (Eigen::Index k = 0; k < r.features.size(); ++k)
      out << ' ' << detail::format_double(r.features[k]);
    out << '\n';
  }
}

/// Stacks sample labels into an N×C 0/1 matrix.
inline Matrix label_matrix(const std::vector<LabeledSample>& samples, std::size_t C) {
  Matrix L(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(C));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].labels.size() != C) throw ShapeError("label vector length differs from C");
    for (std::size_t j = 0; j < C; ++j) L(i, j) = samples[i].labels[j];
  }
  return L;
}

}  // namespace bbgcn::data
