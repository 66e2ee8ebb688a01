#pragma once

// Checkpoint file layout:
//   8 bytes   magic "BBGCNCKP"
//   8 bytes   header length H, little-endian uint64
//   H bytes   JSON header: format version, epoch, config echo, vocabulary,
//             model structure and the ordered tensor table {name, rows, cols}
//   payload   every tensor in table order, row-major, little-endian float64

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bbgcn/config.hpp"
#include "bbgcn/error.hpp"
#include "bbgcn/label_graph.hpp"
#include "bbgcn/training.hpp"

namespace bbgcn::ckpt {

inline constexpr char kMagic[8] = {'B', 'B', 'G', 'C', 'N', 'C', 'K', 'P'};
inline constexpr int kVersion = 1;

struct Checkpoint {
  train::Model model;
  std::map<std::string, Matrix> momentum;
  std::int64_t epoch = 0;
  Json config;
  std::vector<std::string> vocabulary;
  graph::CorrelationGraph graph;
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline bool get_u64(std::istream& in, std::uint64_t& v) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return true;
}

struct Entry {
  std::string name;
  const Matrix* value;
};

inline std::vector<Entry> tensor_table(const Checkpoint& c) {
  std::vector<Entry> t;
  t.push_back({"model.word_embeddings", &c.model.word_embeddings});
  t.push_back({"model.adjacency", &c.model.adjacency});
  c.model.inspect_parameters([&](const std::string& n, const Matrix& m) {
    if (n != "embed.W") t.push_back({n, &m});
  });
  t.push_back({"graph.P", &c.graph.P});
  t.push_back({"graph.A", &c.graph.A});
  t.push_back({"graph.EA", &c.graph.EA});
  t.push_back({"graph.EA_norm", &c.graph.EA_norm});
  for (const auto& [n, m] : c.momentum) t.push_back({"opt." + n, &m});
  return t;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, std::ostream& out) {
  const auto table = detail::tensor_table(c);
  Json header;
  header["format"] = "bbgcn-checkpoint";
  header["version"] = kVersion;
  header["epoch"] = c.epoch;
  header["head"] = c.model.head == train::HeadKind::bbgcn ? "bbgcn" : "linear_head";
  header["vocabulary"] = c.vocabulary;
  header["gcn"] = {{"depth", c.model.head == train::HeadKind::bbgcn ? c.model.gcn.depth() : 0},
                   {"slope", c.model.gcn.options().slope},
                   {"final_linear", c.model.gcn.options().final_linear}};
  header["fusion_groups"] =
      c.model.head == train::HeadKind::bbgcn ? c.model.fusion.dims().groups : 0;
  header["finetune_embeddings"] = c.model.finetune_embeddings;
  header["mlp"] = c.model.mlp ? Json{{"slope", c.model.mlp->slope}} : Json(nullptr);
  header["graph"] = {{"epsilon", c.graph.epsilon},
                     {"delta", c.graph.delta},
                     {"axis", c.graph.axis == graph::ReweightAxis::row ? "row" : "col"}};
  header["config"] = c.config;
  Json tensors = Json::array();
  for (const auto& e : table)
    tensors.push_back({{"name", e.name}, {"rows", e.value->rows()}, {"cols", e.value->cols()}});
  header["tensors"] = tensors;

  const std::string text = header.dump();
  out.write(kMagic, sizeof(kMagic));
  detail::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : table)
    for (Eigen::Index i = 0; i < e.value->rows(); ++i)
      for (Eigen::Index j = 0; j < e.value->cols(); ++j)
        detail::put_u64(out, std::bit_cast<std::uint64_t>((*e.value)(i, j)));
  if (!out) throw InputError("failed to write checkpoint");
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  save_checkpoint(c, out);
}

inline Checkpoint load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic))
    throw InputError("not a checkpoint file (bad magic)");
  std::uint64_t len = 0;
  if (!detail::get_u64(in, len) || len > (1ULL << 32)) throw InputError("corrupt checkpoint header");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw InputError("truncated checkpoint header");
  Json header;
  try {
    header = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint c;
  std::map<std::string, Matrix> t;
  try {
    if (header.at("format") != "bbgcn-checkpoint") throw InputError("unknown checkpoint format");
    if (header.at("version").get<int>() != kVersion)
      throw InputError("checkpoint version " + header.at("version").dump() +
                       " is not supported (expected " + std::to_string(kVersion) + ")");
    for (const auto& e : header.at("tensors")) {
      const auto rows = e.at("rows").get<Eigen::Index>();
      const auto cols = e.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw InputError("corrupt tensor table");
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
          std::uint64_t bits = 0;
          if (!detail::get_u64(in, bits))
            throw InputError("truncated checkpoint payload in tensor " +
                             e.at("name").get<std::string>());
          m(i, j) = std::bit_cast<double>(bits);
        }
      t.emplace(e.at("name").get<std::string>(), std::move(m));
    }
    if (in.peek() != std::char_traits<char>::eof())
      throw InputError("trailing bytes after checkpoint payload");

    auto take = [&](const std::string& n) {
      const auto it = t.find(n);
      if (it == t.end()) throw InputError("checkpoint is missing tensor " + n);
      return it->second;
    };

    c.epoch = header.at("epoch").get<std::int64_t>();
    c.config = header.at("config");
    c.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    auto& m = c.model;
    m.head = header.at("head") == "bbgcn" ? train::HeadKind::bbgcn : train::HeadKind::linear_head;
    m.word_embeddings = take("model.word_embeddings");
    m.adjacency = take("model.adjacency");
    m.finetune_embeddings = header.at("finetune_embeddings").get<bool>();
    if (m.head == train::HeadKind::bbgcn) {
      std::vector<Matrix> thetas;
      const auto depth = header.at("gcn").at("depth").get<std::size_t>();
      for (std::size_t l = 0; l < depth; ++l) thetas.push_back(take("gcn.theta" + std::to_string(l)));
      m.gcn = gcn::Stack(std::move(thetas), {header.at("gcn").at("slope").get<double>(),
                                             header.at("gcn").at("final_linear").get<bool>()});
      auto fc3_w = take("fusion.fc3_w");
      if (fc3_w.rows() != header.at("fusion_groups").get<Eigen::Index>())
        throw InputError("fusion group count disagrees with fc3 shape");
      m.fusion = fusion::Parameters::from_tensors(
          take("fusion.fc1_w"), take("fusion.fc1_b"), take("fusion.fc2_w"), take("fusion.fc2_b"),
          take("fusion.u"), take("fusion.v"), std::move(fc3_w), take("fusion.fc3_b"));
    } else {
      m.head_w = take("head.w");
      m.head_b = take("head.b");
    }
    if (!header.at("mlp").is_null()) {
      backbone::ToyMlp mlp;
      mlp.w1 = take("mlp.w1");
      mlp.b1 = take("mlp.b1");
      mlp.w2 = take("mlp.w2");
      mlp.b2 = take("mlp.b2");
      mlp.slope = header.at("mlp").at("slope").get<double>();
      m.mlp = std::move(mlp);
    }
    c.graph.P = take("graph.P");
    c.graph.A = take("graph.A");
    c.graph.EA = take("graph.EA");
    c.graph.EA_norm = take("graph.EA_norm");
    c.graph.epsilon = header.at("graph").at("epsilon").get<double>();
    c.graph.delta = header.at("graph").at("delta").get<double>();
    c.graph.axis = header.at("graph").at("axis") == "col" ? graph::ReweightAxis::column
                                                          : graph::ReweightAxis::row;
    for (const auto& [n, v] : t)
      if (n.starts_with("opt.")) c.momentum.emplace(n.substr(4), v);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const auto C = static_cast<Eigen::Index>(c.vocabulary.size());
  if (c.model.word_embeddings.rows() != C || c.model.adjacency.rows() != C ||
      c.model.num_labels() != c.vocabulary.size())
    throw ShapeError("checkpoint tensors disagree with its vocabulary size");
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

/// Fails with ShapeError when the checkpoint was trained on another label set.
inline void require_vocabulary(const Checkpoint& c, const data::LabelVocabulary& vocab) {
  if (c.vocabulary.size() != vocab.size())
    throw ShapeError("checkpoint has C=" + std::to_string(c.vocabulary.size()) +
                     " labels but the dataset vocabulary has C=" + std::to_string(vocab.size()));
  for (std::size_t j = 0; j < vocab.size(); ++j)
    if (data::detail::label_key(c.vocabulary[j]) != data::detail::label_key(vocab.name(j)))
      throw ShapeError("checkpoint label " + std::to_string(j) + " is '" + c.vocabulary[j] +
                       "' but the dataset has '" + vocab.name(j) + "'");
}

}  // namespace bbgcn::ckpt
