#pragma once

// BeIR corpus, query, and qrels ingestion plus truncation and sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "egg/error.hpp"
#include "egg/random.hpp"
#include "egg/text.hpp"

namespace egg {

struct Document {
  std::string doc_id;
  std::string title;
  std::string text;

  // Text shown to prompts: "title. text" when a title is present.
  std::string prompt_text() const { return title.empty() ? text : title + ". " + text; }

  friend bool operator==(const Document&, const Document&) = default;
};

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Document> docs, std::string source_path = {})
      : docs_(std::move(docs)), source_path_(std::move(source_path)) {
    reindex();
  }

  const std::vector<Document>& docs() const { return docs_; }
  const std::string& source_path() const { return source_path_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t i) const { return docs_[i]; }

  std::optional<std::size_t> find(std::string_view doc_id) const {
    auto it = index_.find(std::string(doc_id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view doc_id) const { return find(doc_id).has_value(); }

  friend bool operator==(const Corpus& a, const Corpus& b) { return a.docs_ == b.docs_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      if (docs_[i].doc_id.empty()) throw FormatError("document " + std::to_string(i) + " has an empty _id");
      if (!index_.emplace(docs_[i].doc_id, i).second)
        throw FormatError("duplicate document _id '" + docs_[i].doc_id + "'");
    }
  }

  std::vector<Document> docs_;
  std::string source_path_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Query {
  std::string query_id;
  std::string text;
  friend bool operator==(const Query&, const Query&) = default;
};

class QuerySet {
 public:
  QuerySet() = default;
  explicit QuerySet(std::vector<Query> queries) : queries_(std::move(queries)) {
    for (std::size_t i = 0; i < queries_.size(); ++i)
      if (!index_.emplace(queries_[i].query_id, i).second)
        throw FormatError("duplicate query _id '" + queries_[i].query_id + "'");
  }

  const std::vector<Query>& queries() const { return queries_; }
  std::size_t size() const { return queries_.size(); }
  bool empty() const { return queries_.empty(); }
  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

  friend bool operator==(const QuerySet& a, const QuerySet& b) { return a.queries_ == b.queries_; }

 private:
  std::vector<Query> queries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Judgment {
  std::string query_id;
  std::string doc_id;
  int relevance = 0;
  friend bool operator==(const Judgment&, const Judgment&) = default;
};

// Relevance judgments in file order with per-query lookup.
class Qrels {
 public:
  Qrels() = default;
  explicit Qrels(std::vector<Judgment> entries) {
    for (auto& j : entries) add(std::move(j));
  }

  void add(Judgment j) {
    if (j.relevance < 0)
      throw FormatError("negative relevance for (" + j.query_id + ", " + j.doc_id + ")");
    auto& per_query = by_query_[j.query_id];
    if (!per_query.emplace(j.doc_id, j.relevance).second)
      throw FormatError("duplicate qrels key (" + j.query_id + ", " + j.doc_id + ")");
    entries_.push_back(std::move(j));
  }

  const std::vector<Judgment>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  int relevance(const std::string& query_id, const std::string& doc_id) const {
    auto q = by_query_.find(query_id);
    if (q == by_query_.end()) return 0;
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? 0 : d->second;
  }

  // Judgments of one query keyed by doc_id (empty map when unjudged).
  const std::map<std::string, int>& judgments(const std::string& query_id) const {
    static const std::map<std::string, int> none;
    auto q = by_query_.find(query_id);
    return q == by_query_.end() ? none : q->second;
  }

  // Query ids in order of first appearance.
  std::vector<std::string> query_ids() const {
    std::vector<std::string> ids;
    std::unordered_map<std::string, bool> seen;
    for (const auto& e : entries_)
      if (seen.emplace(e.query_id, true).second) ids.push_back(e.query_id);
    return ids;
  }

  friend bool operator==(const Qrels& a, const Qrels& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Judgment> entries_;
  std::map<std::string, std::map<std::string, int>> by_query_;
};

inline constexpr std::string_view kQrelsHeader = "query-id\tcorpus-id\tscore";

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

// Calls fn(line, line_number) for each non-blank line, stripping a trailing CR.
template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    fn(line, line_no);
  }
}

inline nlohmann::json parse_json_line(const std::string& line, const std::filesystem::path& path,
                                      std::size_t line_no) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw FormatError("not a JSON object");
    return j;
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON line: " + e.what());
  }
}

inline std::string string_field(const nlohmann::json& j, const char* key, bool required,
                                const std::filesystem::path& path, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end()) {
    if (required)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": missing field '" + key + "'");
    return {};
  }
  if (!it->is_string())
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": field '" + key + "' is not a string");
  return it->get<std::string>();
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path& path) {
  std::vector<Document> docs;
  std::unordered_map<std::string, std::size_t> first_line;
  detail::for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    auto j = detail::parse_json_line(line, path, line_no);
    Document d{detail::string_field(j, "_id", true, path, line_no),
               detail::string_field(j, "title", false, path, line_no),
               detail::string_field(j, "text", true, path, line_no)};
    if (d.doc_id.empty()) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty _id");
    auto [it, fresh] = first_line.emplace(d.doc_id, line_no);
    if (!fresh)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate _id '" + d.doc_id +
                        "' (first seen on line " + std::to_string(it->second) + ")");
    docs.push_back(std::move(d));
  });
  return Corpus(std::move(docs), path.string());
}

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  for (const auto& d : corpus.docs()) {
    nlohmann::ordered_json j;
    j["_id"] = d.doc_id;
    j["title"] = d.title;
    j["text"] = d.text;
    out << j.dump() << '\n';
  }
}

inline QuerySet load_queries(const std::filesystem::path& path) {
  std::vector<Query> queries;
  std::unordered_map<std::string, std::size_t> seen;
  detail::for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    auto j = detail::parse_json_line(line, path, line_no);
    Query q{detail::string_field(j, "_id", true, path, line_no), detail::string_field(j, "text", true, path, line_no)};
    if (!seen.emplace(q.query_id, line_no).second)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate query _id '" + q.query_id + "'");
    queries.push_back(std::move(q));
  });
  return QuerySet(std::move(queries));
}

inline void write_queries(const QuerySet& queries, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  for (const auto& q : queries.queries()) {
    nlohmann::ordered_json j;
    j["_id"] = q.query_id;
    j["text"] = q.text;
    out << j.dump() << '\n';
  }
}

inline Qrels load_qrels(const std::filesystem::path& path) {
  Qrels qrels;
  bool first = true;
  detail::for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (first) {
      first = false;
      if (line.rfind("query-id", 0) == 0) return;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 3) throw FormatError(where + "expected 3 tab-separated columns");
    int score = 0;
    std::size_t used = 0;
    try {
      score = std::stoi(cols[2], &used);
    } catch (const std::exception&) {
      throw FormatError(where + "non-integer score '" + cols[2] + "'");
    }
    if (used != cols[2].size()) throw FormatError(where + "non-integer score '" + cols[2] + "'");
    try {
      qrels.add({cols[0], cols[1], score});
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
  });
  return qrels;
}

inline void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << kQrelsHeader << '\n';
  for (const auto& e : qrels.entries()) out << e.query_id << '\t' << e.doc_id << '\t' << e.relevance << '\n';
}

// Keeps the first `max_tokens` whitespace tokens. Text within the limit is
// returned byte-identical.
inline std::string truncate_text(std::string_view text, std::size_t max_tokens) {
  if (max_tokens == 0) throw PreconditionError("truncate_text: max_tokens must be >= 1");
  auto tokens = text::split_whitespace(text);
  if (tokens.size() <= max_tokens) return std::string(text);
  tokens.resize(max_tokens);
  return text::join(tokens);
}

inline Corpus truncate_corpus(const Corpus& corpus, std::size_t max_tokens) {
  std::vector<Document> docs = corpus.docs();
  for (auto& d : docs) d.text = truncate_text(d.text, max_tokens);
  return Corpus(std::move(docs), corpus.source_path());
}

// Uniform sample of `cap` documents without replacement (selection
// sampling), keeping the original relative order.
inline Corpus sample_corpus(const Corpus& corpus, std::size_t cap, std::uint64_t seed) {
  if (cap == 0) throw PreconditionError("sample_corpus: cap must be >= 1");
  if (corpus.size() <= cap) return corpus;
  Rng rng(seed);
  std::vector<Document> picked;
  picked.reserve(cap);
  std::size_t remaining = corpus.size();
  std::size_t needed = cap;
  for (const auto& d : corpus.docs()) {
    if (needed == 0) break;
    if (rng.index(remaining) < needed) {
      picked.push_back(d);
      --needed;
    }
    --remaining;
  }
  return Corpus(std::move(picked), corpus.source_path());
}

}  // namespace egg
