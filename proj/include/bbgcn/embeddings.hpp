#pragma once

// Label word embeddings: GloVe-format loading, multi-word averaging and a
// seeded synthetic generator for runs without a vector file.

#include <cmath>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bbgcn/data_ingest.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/rng.hpp"
#include "bbgcn/types.hpp"

namespace bbgcn::embed {

struct WordEmbeddingTable {
  Eigen::Index dim = 0;
  std::unordered_map<std::string, Vector> entries;
  std::vector<std::string> warnings;

  const Vector* find(const std::string& word) const {
    const auto it = entries.find(word);
    return it == entries.end() ? nullptr : &it->second;
  }
};

/// `word v1 ... vD` per line. Words are stored lowercased; a repeated word
/// replaces the earlier vector and records a warning.
inline WordEmbeddingTable load_word_vectors(std::istream& in) {
  WordEmbeddingTable table;
  std::string line;
  std::size_t row = 0;
  while (data::detail::getline_stripped(in, line)) {
    ++row;
    const auto body = data::detail::trim(line);
    if (body.empty()) continue;
    std::vector<std::string_view> tokens;
    for (auto t : data::detail::split(body, ' '))
      if (!t.empty()) tokens.push_back(t);
    const auto dim = static_cast<Eigen::Index>(tokens.size()) - 1;
    if (dim < 1) throw InputError("row " + std::to_string(row) + ": word without a vector");
    if (table.dim == 0) table.dim = dim;
    if (dim != table.dim)
      throw InputError("row " + std::to_string(row) + ": dimension " + std::to_string(dim) +
                       " differs from " + std::to_string(table.dim));
    Vector v(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
      double x = 0.0;
      if (!data::detail::parse_double(tokens[k + 1], x) || !std::isfinite(x))
        throw InputError("row " + std::to_string(row) + ": non-finite or malformed value");
      v[k] = x;
    }
    auto word = data::detail::lower(tokens.front());
    if (table.entries.contains(word))
      table.warnings.push_back("duplicate word '" + word + "' at row " + std::to_string(row) +
                               "; keeping the last vector");
    table.entries.insert_or_assign(std::move(word), std::move(v));
  }
  if (table.dim == 0) throw InputError("word vector file is empty");
  return table;
}

/// Deterministic vector in [-1, 1]^dim keyed by (name, seed).
inline Vector synthetic_vector(std::string_view name, Eigen::Index dim, std::uint64_t seed) {
  Rng rng(mix_seed(fnv1a(name), seed));
  Vector v(dim);
  for (Eigen::Index k = 0; k < dim; ++k) v[k] = rng.uniform(-1.0, 1.0);
  return v;
}

inline Matrix synthetic_embeddings(const data::LabelVocabulary& vocab, Eigen::Index dim,
                                   std::uint64_t seed) {
  if (dim < 1) throw InputError("embedding dimension must be >= 1");
  Matrix W(static_cast<Eigen::Index>(vocab.size()), dim);
  for (std::size_t j = 0; j < vocab.size(); ++j)
    W.row(static_cast<Eigen::Index>(j)) = synthetic_vector(vocab.name(j), dim, seed).transpose();
  return W;
}

struct OovFallback {
  std::uint64_t seed = 0;
};

/// Row j is the mean of the word vectors of label j's tokens. Missing words
/// are an error unless a fallback is given, in which case they get a
/// synthetic vector keyed by the word.
inline Matrix embed_labels(const data::LabelVocabulary& vocab, const WordEmbeddingTable& table,
                           std::optional<OovFallback> fallback = std::nullopt) {
  Matrix W(static_cast<Eigen::Index>(vocab.size()), table.dim);
  for (std::size_t j = 0; j < vocab.size(); ++j) {
    Vector acc = Vector::Zero(table.dim);
    for (const auto& word : vocab.words(j)) {
      if (const auto* v = table.find(word)) {
        acc += *v;
      } else if (fallback) {
        acc += synthetic_vector(word, table.dim, fallback->seed);
      } else {
        throw InputError("word '" + word + "' of label '" + vocab.name(j) +
                         "' is missing from the embedding table");
      }
    }
    W.row(static_cast<Eigen::Index>(j)) = (acc / static_cast<double>(vocab.words(j).size())).transpose();
  }
  return W;
}

}  // namespace bbgcn::embed
