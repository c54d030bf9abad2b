#pragma once

// Brute-force dense retrieval and nDCG@k against qrels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "egg/corpus.hpp"
#include "egg/embed.hpp"
#include "egg/error.hpp"
#include "egg/parallel.hpp"
#include "egg/train.hpp"

namespace egg {

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
};

struct RankedList {
  std::string query_id;
  std::vector<ScoredDoc> ranking;  // score desc, doc_id asc
};

// Document-side encodings of every document, corpus order.
inline EmbeddingMatrix encode_corpus(const Corpus& corpus, const EncoderParams& encoder, Embedder& base) {
  if (encoder.dims_base() != base.dims())
    throw PreconditionError("encode_corpus: encoder expects " + std::to_string(encoder.dims_base()) +
                            " base dims, embedder produces " + std::to_string(base.dims()));
  auto base_rows = embed_corpus(corpus, base);
  EmbeddingMatrix out(encoder.dims_out());
  for (std::size_t i = 0; i < base_rows.rows(); ++i)
    out.push_back(base_rows.doc_id(i), encode(encoder, base_rows.row(i), Side::Doc));
  return out;
}

// Top min(k, rows) documents by dot product with an encoded query.
inline std::vector<ScoredDoc> rank_by_vector(std::span<const double> query, const EmbeddingMatrix& index, std::size_t k) {
  if (k == 0) throw PreconditionError("retrieve_topk: k must be >= 1");
  if (index.empty()) throw PreconditionError("retrieve_topk: empty index");
  std::vector<std::pair<double, std::size_t>> scored(index.rows());
  for (std::size_t i = 0; i < index.rows(); ++i) scored[i] = {dot_score(query, index.row(i)), i};
  auto better = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return index.doc_id(a.second) < index.doc_id(b.second);
  };
  std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  std::vector<ScoredDoc> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back({index.doc_id(scored[i].second), scored[i].first});
  return out;
}

inline RankedList retrieve_topk(const std::string& query_id, const std::string& query_text, const EmbeddingMatrix& index,
                                const EncoderParams& encoder, Embedder& base, std::size_t k) {
  auto q = encode(encoder, base.embed(query_text), Side::Query);
  return {query_id, rank_by_vector(q, index, k)};
}

// DCG with gain 2^rel - 1 and discount log2(rank + 1), normalised by the
// ideal DCG of the query's judgments. Zero when nothing is relevant.
inline double ndcg_at_k(const std::vector<ScoredDoc>& ranking, const std::map<std::string, int>& judgments,
                        std::size_t k) {
  if (k == 0) throw PreconditionError("ndcg_at_k: k must be >= 1");
  std::vector<int> ideal;
  for (const auto& [doc, rel] : judgments)
    if (rel > 0) ideal.push_back(rel);
  if (ideal.empty()) return 0.0;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  auto gain = [](int rel) { return std::exp2(static_cast<double>(rel)) - 1.0; };
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ideal.size()); ++r) idcg += gain(ideal[r]) / std::log2(r + 2.0);
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
    auto it = judgments.find(ranking[r].doc_id);
    if (it != judgments.end() && it->second > 0) dcg += gain(it->second) / std::log2(r + 2.0);
  }
  return std::min(1.0, dcg / idcg);
}

inline double ndcg_at_k(const RankedList& ranking, const Qrels& qrels, std::size_t k) {
  return ndcg_at_k(ranking.ranking, qrels.judgments(ranking.query_id), k);
}

inline double recall_at_k(const std::vector<ScoredDoc>& ranking, const std::map<std::string, int>& judgments,
                          std::size_t k) {
  std::size_t relevant = 0, hit = 0;
  for (const auto& [doc, rel] : judgments) relevant += rel > 0;
  if (relevant == 0) return 0.0;
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
    auto it = judgments.find(ranking[r].doc_id);
    hit += it != judgments.end() && it->second > 0;
  }
  return static_cast<double>(hit) / static_cast<double>(relevant);
}

inline double reciprocal_rank(const std::vector<ScoredDoc>& ranking, const std::map<std::string, int>& judgments,
                              std::size_t k) {
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
    auto it = judgments.find(ranking[r].doc_id);
    if (it != judgments.end() && it->second > 0) return 1.0 / static_cast<double>(r + 1);
  }
  return 0.0;
}

struct QueryResult {
  std::string query_id;
  double ndcg = 0.0;
  double recall = 0.0;
  double rr = 0.0;
};

struct EvalReport {
  std::size_t k = 10;
  std::vector<QueryResult> per_query;  // evaluated queries, queryset order
  double aggregate = 0.0;              // mean nDCG@k over per_query
  double mean_recall = 0.0;
  double mrr = 0.0;
  std::size_t num_queries = 0;            // queries contributing to the mean
  std::size_t skipped_no_positive = 0;    // queries without a positive judgment
  std::size_t skipped_unknown_docs = 0;   // judgments naming documents not in the corpus
  std::vector<RankedList> rankings;       // same order as per_query
};

inline EvalReport evaluate_run(const QuerySet& queries, const Qrels& qrels, const Corpus& corpus,
                               const EncoderParams& encoder, Embedder& base, std::size_t k = 10) {
  if (queries.empty()) throw PreconditionError("evaluate_run: empty query set");
  if (k == 0) throw PreconditionError("evaluate_run: k must be >= 1");
  for (const auto& qid : qrels.query_ids())
    if (!queries.contains(qid)) throw PreconditionError("evaluate_run: qrels query '" + qid + "' is not in the query set");

  EvalReport report;
  report.k = k;
  std::map<std::string, std::map<std::string, int>> known;
  for (const auto& j : qrels.entries()) {
    if (!corpus.contains(j.doc_id)) {
      ++report.skipped_unknown_docs;
      continue;
    }
    known[j.query_id][j.doc_id] = j.relevance;
  }
  if (report.skipped_unknown_docs)
    spdlog::warn("{} judgment(s) reference documents outside the corpus; skipped", report.skipped_unknown_docs);

  std::vector<const Query*> evaluated;
  for (const auto& q : queries.queries()) {
    auto it = known.find(q.query_id);
    bool positive = false;
    if (it != known.end())
      for (const auto& [doc, rel] : it->second) positive |= rel > 0;
    if (positive)
      evaluated.push_back(&q);
    else
      ++report.skipped_no_positive;
  }
  if (evaluated.empty()) {
    spdlog::warn("no query has a positive judgment");
    return report;
  }

  auto index = encode_corpus(corpus, encoder, base);
  std::vector<std::string> texts;
  for (const auto* q : evaluated) texts.push_back(q->text);
  auto base_vecs = base.embed_batch(texts);

  report.per_query.resize(evaluated.size());
  report.rankings.resize(evaluated.size());
  parallel_for(0, evaluated.size(), std::max(1u, std::thread::hardware_concurrency()), [&](std::size_t i) {
    const auto& id = evaluated[i]->query_id;
    const auto& judged = known.at(id);
    auto ranking = rank_by_vector(encode(encoder, base_vecs[i], Side::Query), index, k);
    report.per_query[i] = {id, ndcg_at_k(ranking, judged, k), recall_at_k(ranking, judged, k),
                           reciprocal_rank(ranking, judged, k)};
    report.rankings[i] = {id, std::move(ranking)};
  });
  for (const auto& r : report.per_query) {
    report.aggregate += r.ndcg;
    report.mean_recall += r.recall;
    report.mrr += r.rr;
  }
  report.num_queries = report.per_query.size();
  const double n = static_cast<double>(report.num_queries);
  report.aggregate /= n;
  report.mean_recall /= n;
  report.mrr /= n;
  return report;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["k"] = r.k;
  j["num_queries"] = r.num_queries;
  j["ndcg_at_k"] = r.aggregate;
  j["recall_at_k"] = r.mean_recall;
  j["mrr_at_k"] = r.mrr;
  j["skipped_no_positive"] = r.skipped_no_positive;
  j["skipped_unknown_docs"] = r.skipped_unknown_docs;
  auto& per = j["per_query"] = nlohmann::ordered_json::object();
  for (const auto& q : r.per_query) per[q.query_id] = q.ndcg;
  return j;
}

inline std::string report_table(const EvalReport& r) {
  char buf[128];
  std::ostringstream out;
  std::snprintf(buf, sizeof buf, "%-22s %10s\n", "metric", "value");
  out << buf;
  auto row = [&](const std::string& name, double v) {
    std::snprintf(buf, sizeof buf, "%-22s %10.6f\n", name.c_str(), v);
    out << buf;
  };
  auto count = [&](const std::string& name, std::size_t v) {
    std::snprintf(buf, sizeof buf, "%-22s %10zu\n", name.c_str(), v);
    out << buf;
  };
  const auto k = std::to_string(r.k);
  row("nDCG@" + k, r.aggregate);
  row("Recall@" + k, r.mean_recall);
  row("MRR@" + k, r.mrr);
  count("queries", r.num_queries);
  count("skipped (no positive)", r.skipped_no_positive);
  count("skipped judgments", r.skipped_unknown_docs);
  return out.str();
}

inline void write_per_query_tsv(const EvalReport& r, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "query_id\tndcg\n";
  char buf[64];
  for (const auto& q : r.per_query) {
    std::snprintf(buf, sizeof buf, "%.9f", q.ndcg);
    out << q.query_id << '\t' << buf << '\n';
  }
}

}  // namespace egg
