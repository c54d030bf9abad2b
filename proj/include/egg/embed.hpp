#pragma once

// Base embeddings, the dot-product similarity, and example selection by
// nearest neighbours.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "egg/corpus.hpp"
#include "egg/error.hpp"
#include "egg/http.hpp"
#include "egg/parallel.hpp"
#include "egg/text.hpp"

namespace egg {

using EmbeddingVector = std::vector<double>;

// Left-to-right double accumulation of u.v.
inline double dot_score(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw PreconditionError("dot_score: dims mismatch (" + std::to_string(u.size()) + " vs " +
                            std::to_string(v.size()) + ")");
  double sum = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) sum += u[k] * v[k];
  return sum;
}

// Row-major matrix of embeddings, one row per doc_id.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(std::size_t dims) : dims_(dims) {}

  std::size_t dims() const { return dims_; }
  std::size_t rows() const { return doc_ids_.size(); }
  bool empty() const { return doc_ids_.empty(); }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const std::string& doc_id(std::size_t i) const { return doc_ids_[i]; }

  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dims_, dims_}; }

  void push_back(std::string doc_id, std::span<const double> values) {
    if (values.size() != dims_)
      throw PreconditionError("embedding for '" + doc_id + "' has " + std::to_string(values.size()) +
                              " dims, expected " + std::to_string(dims_));
    for (double v : values)
      if (!std::isfinite(v)) throw PreconditionError("embedding for '" + doc_id + "' has a non-finite value");
    doc_ids_.push_back(std::move(doc_id));
    values_.insert(values_.end(), values.begin(), values.end());
  }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t dims_ = 0;
  std::vector<std::string> doc_ids_;
  std::vector<double> values_;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dims() const = 0;
  virtual EmbeddingVector embed(std::string_view text) = 0;

  // One vector per text, in input order.
  virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) out[i] = embed(texts[i]);
    return out;
  }

  virtual std::string describe() const = 0;
};

inline constexpr std::size_t kDefaultHashDims = 256;

// Feature-hashing bag of words: lowercase, whitespace tokens, FNV-1a 64 per
// token, coordinate = hash mod dims, sign from the top hash bit, then L2
// normalisation of non-zero vectors.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dims = kDefaultHashDims) : dims_(dims) {
    if (dims_ == 0) throw ConfigError("hash embedder dims must be >= 1");
  }

  std::size_t dims() const override { return dims_; }

  EmbeddingVector embed(std::string_view text) override { return embed_const(text); }

  EmbeddingVector embed_const(std::string_view text) const {
    EmbeddingVector v(dims_, 0.0);
    auto lowered = text::to_lower(text);
    for (auto token : text::split_whitespace(lowered)) {
      auto h = text::fnv1a64(token);
      v[h % dims_] += (h >> 63) ? -1.0 : 1.0;
    }
    double norm_sq = 0.0;
    for (double x : v) norm_sq += x * x;
    if (norm_sq > 0.0) {
      double norm = std::sqrt(norm_sq);
      for (double& x : v) x /= norm;
    }
    return v;
  }

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out(texts.size());
    parallel_for(0, texts.size(), std::max(1u, std::thread::hardware_concurrency()),
                 [&](std::size_t i) { out[i] = embed_const(texts[i]); });
    return out;
  }

  std::string describe() const override { return "hash:" + std::to_string(dims_); }

 private:
  std::size_t dims_;
};

// OpenAI-compatible POST /v1/embeddings.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(RemoteEndpoint endpoint, std::size_t dims, std::size_t batch_size = 64)
      : endpoint_(std::move(endpoint)), dims_(dims), batch_size_(std::max<std::size_t>(1, batch_size)) {}

  std::size_t dims() const override { return dims_; }

  EmbeddingVector embed(std::string_view text) override { return embed_batch({std::string(text)}).front(); }

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += batch_size_) {
      std::size_t stop = std::min(texts.size(), start + batch_size_);
      nlohmann::json input = nlohmann::json::array();
      for (std::size_t i = start; i < stop; ++i) {
        if (texts[i].empty()) throw PreconditionError("remote embedding of empty text");
        input.push_back(texts[i]);
      }
      auto response = post_json(endpoint_, "/v1/embeddings", {{"model", endpoint_.model}, {"input", input}});
      if (!response.contains("data") || !response["data"].is_array() || response["data"].size() != stop - start)
        throw BackendError("embeddings response has the wrong number of rows");
      std::vector<EmbeddingVector> chunk(stop - start);
      for (std::size_t r = 0; r < response["data"].size(); ++r) {
        const auto& row = response["data"][r];
        std::size_t idx = row.contains("index") ? row["index"].get<std::size_t>() : r;
        if (idx >= chunk.size()) throw BackendError("embeddings response index out of range");
        chunk[idx] = row.at("embedding").get<EmbeddingVector>();
        if (chunk[idx].size() != dims_)
          throw BackendError("embedding has " + std::to_string(chunk[idx].size()) + " dims, configured " +
                             std::to_string(dims_));
      }
      for (auto& v : chunk) out.push_back(std::move(v));
    }
    return out;
  }

  std::string describe() const override { return "remote:" + endpoint_.url; }

 private:
  RemoteEndpoint endpoint_;
  std::size_t dims_;
  std::size_t batch_size_;
};

inline EmbeddingMatrix embed_corpus(const Corpus& corpus, Embedder& embedder) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& d : corpus.docs()) texts.push_back(d.prompt_text());
  auto vecs = embedder.embed_batch(texts);
  EmbeddingMatrix m(embedder.dims());
  for (std::size_t i = 0; i < corpus.size(); ++i) m.push_back(corpus[i].doc_id, vecs[i]);
  return m;
}

// Indices of the M rows scoring highest against `target`, excluding the
// target row; descending score, ties by ascending doc_id.
inline std::vector<std::size_t> top_m_neighbors(std::size_t target, const EmbeddingMatrix& matrix, std::size_t m) {
  if (m == 0) throw PreconditionError("top_m_neighbors: M must be >= 1");
  if (target >= matrix.rows()) throw PreconditionError("top_m_neighbors: target index out of range");
  if (m >= matrix.rows())
    throw PreconditionError("top_m_neighbors: M=" + std::to_string(m) + " needs more than " +
                            std::to_string(matrix.rows()) + " rows");
  auto query = matrix.row(target);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(matrix.rows() - 1);
  for (std::size_t i = 0; i < matrix.rows(); ++i)
    if (i != target) scored.emplace_back(dot_score(query, matrix.row(i)), i);
  auto better = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return matrix.doc_id(a.second) < matrix.doc_id(b.second);
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(m), scored.end(), better);
  std::vector<std::size_t> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = scored[i].second;
  return out;
}

namespace detail {

inline void write_f32_le(std::ofstream& out, double v) {
  auto f = static_cast<float>(v);
  auto bits = std::bit_cast<std::uint32_t>(f);
  unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                            static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

inline std::vector<double> read_f32_le(const std::filesystem::path& path, std::size_t expected) {
  auto in = open_input(path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected * 4)
    throw FormatError(path.string() + ": expected " + std::to_string(expected * 4) + " bytes, found " +
                      std::to_string(bytes.size()));
  std::vector<double> values(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t bits = std::uint32_t(bytes[4 * i]) | std::uint32_t(bytes[4 * i + 1]) << 8 |
                         std::uint32_t(bytes[4 * i + 2]) << 16 | std::uint32_t(bytes[4 * i + 3]) << 24;
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return values;
}

inline void write_json_file(const nlohmann::ordered_json& j, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& bin) {
  auto p = bin;
  return p.replace_extension(".json");
}

// Flat little-endian float32 rows plus a {dims, doc_ids} JSON sidecar.
inline void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& bin) {
  {
    auto out = detail::open_output(bin);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (double v : m.row(r)) detail::write_f32_le(out, v);
  }
  nlohmann::ordered_json side;
  side["dims"] = m.dims();
  side["doc_ids"] = m.doc_ids();
  detail::write_json_file(side, sidecar_path(bin));
}

inline EmbeddingMatrix load_matrix(const std::filesystem::path& bin) {
  auto side = detail::read_json_file(sidecar_path(bin));
  auto dims = side.at("dims").get<std::size_t>();
  auto ids = side.at("doc_ids").get<std::vector<std::string>>();
  auto values = detail::read_f32_le(bin, dims * ids.size());
  EmbeddingMatrix m(dims);
  for (std::size_t r = 0; r < ids.size(); ++r)
    m.push_back(ids[r], std::span<const double>(values.data() + r * dims, dims));
  return m;
}

}  // namespace egg
