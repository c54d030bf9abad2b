#pragma once

// Synthetic query generation: meta-prompt (FLAN-style), prototype + in-context
// (Llama-style), the zero-shot and few-shot baselines, and the
// prototype-only ablation. Also dataset persistence and filtering.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "egg/corpus.hpp"
#include "egg/embed.hpp"
#include "egg/error.hpp"
#include "egg/genclient.hpp"
#include "egg/intent.hpp"
#include "egg/parallel.hpp"
#include "egg/text.hpp"

namespace egg {

enum class PairSource { FlanMeta, LlamaIcl, ZeroShot, FewShotBaseline, PrototypeOnly };

inline std::string_view to_string(PairSource s) {
  switch (s) {
    case PairSource::FlanMeta: return "FlanMeta";
    case PairSource::LlamaIcl: return "LlamaIcl";
    case PairSource::ZeroShot: return "ZeroShot";
    case PairSource::FewShotBaseline: return "FewShotBaseline";
    case PairSource::PrototypeOnly: return "PrototypeOnly";
  }
  return "FlanMeta";
}

inline std::optional<PairSource> parse_pair_source(std::string_view s) {
  for (auto src : {PairSource::FlanMeta, PairSource::LlamaIcl, PairSource::ZeroShot, PairSource::FewShotBaseline,
                   PairSource::PrototypeOnly})
    if (to_string(src) == s) return src;
  return std::nullopt;
}

struct SyntheticPair {
  std::string doc_id;
  std::string query;
  PairSource source = PairSource::FlanMeta;
  std::string intent;

  friend bool operator==(const SyntheticPair&, const SyntheticPair&) = default;
};

// doc_id -> prototype query.
using PrototypeSet = std::map<std::string, std::string>;

struct SynthOptions {
  // Empty disables checkpointing.
  std::filesystem::path checkpoint;
  std::size_t checkpoint_every = 1000;
  // Identifies the run; a checkpoint with a different fingerprint is rejected.
  std::string fingerprint;
  IclOptions icl;
};

namespace detail {

using DocQueries = std::vector<std::string>;

struct Checkpoint {
  std::vector<DocQueries> done;  // leading documents already generated
};

inline Checkpoint read_checkpoint(const SynthOptions& opt, const Corpus& corpus) {
  Checkpoint cp;
  if (opt.checkpoint.empty() || !std::filesystem::exists(opt.checkpoint)) return cp;
  bool header = true;
  for_each_line(opt.checkpoint, [&](const std::string& line, std::size_t line_no) {
    auto j = parse_json_line(line, opt.checkpoint, line_no);
    if (header) {
      header = false;
      if (j.value("fingerprint", std::string()) != opt.fingerprint)
        throw PreconditionError("checkpoint '" + opt.checkpoint.string() +
                                "' belongs to a different run; remove it to start over");
      return;
    }
    std::size_t i = cp.done.size();
    if (i >= corpus.size() || j.value("doc_id", std::string()) != corpus[i].doc_id)
      throw PreconditionError("checkpoint '" + opt.checkpoint.string() + "' does not match the corpus at line " +
                              std::to_string(line_no));
    cp.done.push_back(j.at("queries").get<DocQueries>());
  });
  return cp;
}

inline void append_checkpoint(const SynthOptions& opt, const Corpus& corpus, const std::vector<DocQueries>& results,
                              std::size_t begin, std::size_t end) {
  bool fresh = begin == 0 || !std::filesystem::exists(opt.checkpoint);
  if (opt.checkpoint.has_parent_path()) std::filesystem::create_directories(opt.checkpoint.parent_path());
  std::ofstream out(opt.checkpoint, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw Error("cannot write checkpoint '" + opt.checkpoint.string() + "'");
  if (fresh) out << nlohmann::json{{"fingerprint", opt.fingerprint}}.dump() << '\n';
  for (std::size_t i = begin; i < end; ++i) {
    nlohmann::ordered_json j;
    j["doc_id"] = corpus[i].doc_id;
    j["queries"] = results[i];
    out << j.dump() << '\n';
  }
}

// Runs per_doc(i) for every document, `backend.concurrency()` at a time.
// Results are kept in corpus order; progress is checkpointed per block.
inline std::vector<DocQueries> run_per_document(const Corpus& corpus, GenerationBackend& backend,
                                                const SynthOptions& opt,
                                                const std::function<DocQueries(std::size_t)>& per_doc) {
  auto cp = read_checkpoint(opt, corpus);
  std::vector<DocQueries> results(corpus.size());
  std::size_t start = cp.done.size();
  for (std::size_t i = 0; i < start; ++i) results[i] = std::move(cp.done[i]);
  if (start > 0) spdlog::info("resuming generation after {} checkpointed documents", start);
  std::size_t block = std::max<std::size_t>(1, opt.checkpoint_every);
  for (std::size_t begin = start; begin < corpus.size(); begin += block) {
    std::size_t end = std::min(corpus.size(), begin + block);
    parallel_for(begin, end, backend.concurrency(), [&](std::size_t i) { results[i] = per_doc(i); });
    if (!opt.checkpoint.empty()) append_checkpoint(opt, corpus, results, begin, end);
  }
  if (!opt.checkpoint.empty()) std::filesystem::remove(opt.checkpoint);
  return results;
}

inline std::vector<SyntheticPair> flatten(const Corpus& corpus, const std::vector<DocQueries>& results,
                                          PairSource source, const std::string& intent) {
  std::vector<SyntheticPair> pairs;
  for (std::size_t i = 0; i < results.size(); ++i)
    for (const auto& q : results[i]) pairs.push_back({corpus[i].doc_id, q, source, intent});
  return pairs;
}

inline void require_nonempty(const Corpus& corpus, const char* op) {
  if (corpus.empty()) throw PreconditionError(std::string(op) + ": corpus is empty");
}

}  // namespace detail

// One prototype query per document from the prototype prompt with n = 1.
inline PrototypeSet generate_prototypes(const Corpus& corpus, const IntentSpec& intent, GenerationBackend& backend,
                                        SamplingParams params, const SynthOptions& opt = {}) {
  detail::require_nonempty(corpus, "generate_prototypes");
  params.n = 1;
  auto results = detail::run_per_document(corpus, backend, opt, [&](std::size_t i) {
    return generate(backend, render_prototype_prompt(intent, corpus[i]), params);
  });
  PrototypeSet out;
  for (std::size_t i = 0; i < corpus.size(); ++i) out[corpus[i].doc_id] = results[i].front();
  return out;
}

// params.n queries per document from the meta-prompt. With e_q = "query"
// and source ZeroShot this is the zero-shot baseline.
inline std::vector<SyntheticPair> generate_queries_flan(const Corpus& corpus, const IntentSpec& intent,
                                                        GenerationBackend& backend, const SamplingParams& params,
                                                        PairSource source = PairSource::FlanMeta,
                                                        const SynthOptions& opt = {}) {
  detail::require_nonempty(corpus, "generate_queries_flan");
  auto results = detail::run_per_document(corpus, backend, opt, [&](std::size_t i) {
    return generate(backend, render_flan_prompt(intent, corpus[i]), params);
  });
  return detail::flatten(corpus, results, source, intent.task_name);
}

inline std::vector<SyntheticPair> generate_queries_zero_shot(const Corpus& corpus, GenerationBackend& backend,
                                                             const SamplingParams& params,
                                                             const SynthOptions& opt = {}) {
  auto zero = find_intent(builtin_intents(), "zero-shot");
  return generate_queries_flan(corpus, zero, backend, params, PairSource::ZeroShot, opt);
}

// Prototype + in-context generation: for each document, its M nearest
// neighbours (self excluded) and their prototypes form the examples.
// `selections`, when given, receives each document's neighbour indices.
inline std::vector<SyntheticPair> generate_queries_llama(const Corpus& corpus, const IntentSpec& intent,
                                                         GenerationBackend& backend, const PrototypeSet& prototypes,
                                                         const EmbeddingMatrix& embeddings, std::size_t m,
                                                         const SamplingParams& params, const SynthOptions& opt = {},
                                                         std::vector<std::vector<std::size_t>>* selections = nullptr) {
  detail::require_nonempty(corpus, "generate_queries_llama");
  if (m >= corpus.size())
    throw PreconditionError("generate_queries_llama: M=" + std::to_string(m) + " requires more than " +
                            std::to_string(corpus.size()) + " documents");
  if (embeddings.rows() != corpus.size())
    throw PreconditionError("generate_queries_llama: embeddings have " + std::to_string(embeddings.rows()) +
                            " rows for " + std::to_string(corpus.size()) + " documents");
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (embeddings.doc_id(i) != corpus[i].doc_id)
      throw PreconditionError("generate_queries_llama: embedding row " + std::to_string(i) + " is '" +
                              embeddings.doc_id(i) + "', expected '" + corpus[i].doc_id + "'");
    if (!prototypes.count(corpus[i].doc_id)) missing.push_back(corpus[i].doc_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) list += ", ...";
    throw PreconditionError("prototypes missing for " + std::to_string(missing.size()) + " document(s): " + list);
  }
  std::vector<std::vector<std::size_t>> chosen(corpus.size());
  auto results = detail::run_per_document(corpus, backend, opt, [&](std::size_t i) {
    chosen[i] = top_m_neighbors(i, embeddings, m);
    std::vector<IclExample> examples;
    for (auto k : chosen[i]) examples.push_back({corpus[k], prototypes.at(corpus[k].doc_id)});
    return generate(backend, render_icl_prompt(intent, examples, corpus[i], opt.icl), params);
  });
  if (selections) *selections = std::move(chosen);
  return detail::flatten(corpus, results, PairSource::LlamaIcl, intent.task_name);
}

// Few-shot baseline: the same fixed examples for every document. An example
// whose document is the target is left out of that target's prompt.
inline std::vector<SyntheticPair> generate_queries_few_shot(const Corpus& corpus, const IntentSpec& intent,
                                                            GenerationBackend& backend,
                                                            const std::vector<IclExample>& fixed_examples,
                                                            const SamplingParams& params,
                                                            const SynthOptions& opt = {}) {
  detail::require_nonempty(corpus, "generate_queries_few_shot");
  if (fixed_examples.empty()) throw PreconditionError("few-shot baseline needs at least one example");
  auto results = detail::run_per_document(corpus, backend, opt, [&](std::size_t i) {
    std::vector<IclExample> examples;
    for (const auto& ex : fixed_examples)
      if (ex.document.doc_id != corpus[i].doc_id) examples.push_back(ex);
    if (examples.empty()) {
      // Every example is the target itself; keep them under distinct ids.
      examples = fixed_examples;
      for (auto& ex : examples) ex.document.doc_id += "#example";
    }
    return generate(backend, render_icl_prompt(intent, examples, corpus[i], opt.icl), params);
  });
  return detail::flatten(corpus, results, PairSource::FewShotBaseline, intent.task_name);
}

// Ablation: params.n prototype-prompt queries per document, exported as is.
inline std::vector<SyntheticPair> generate_prototype_only(const Corpus& corpus, const IntentSpec& intent,
                                                          GenerationBackend& backend, const SamplingParams& params,
                                                          const SynthOptions& opt = {}) {
  detail::require_nonempty(corpus, "generate_prototype_only");
  auto results = detail::run_per_document(corpus, backend, opt, [&](std::size_t i) {
    return generate(backend, render_prototype_prompt(intent, corpus[i]), params);
  });
  return detail::flatten(corpus, results, PairSource::PrototypeOnly, intent.task_name);
}

struct FilterOptions {
  std::size_t min_copy_chars = 40;
};

// Drops empty queries, duplicate (doc_id, normalised query) pairs, and
// queries copied verbatim from their document (normalised length >= 40).
inline std::vector<SyntheticPair> filter_pairs(const std::vector<SyntheticPair>& pairs, const Corpus& corpus,
                                               const FilterOptions& opt = {}) {
  std::vector<SyntheticPair> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::map<std::string, std::string> normalized_docs;
  for (const auto& p : pairs) {
    auto q = text::normalize(p.query);
    if (q.empty()) continue;
    if (!seen.emplace(p.doc_id, q).second) continue;
    if (q.size() >= opt.min_copy_chars) {
      if (auto idx = corpus.find(p.doc_id)) {
        auto [it, fresh] = normalized_docs.try_emplace(p.doc_id);
        if (fresh) it->second = text::normalize(corpus[*idx].prompt_text());
        if (it->second.find(q) != std::string::npos) continue;
      }
    }
    out.push_back(p);
  }
  return out;
}

inline void write_dataset(const std::vector<SyntheticPair>& pairs, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["doc_id"] = p.doc_id;
    j["query"] = p.query;
    j["source"] = to_string(p.source);
    j["intent"] = p.intent;
    out << j.dump() << '\n';
  }
}

inline std::vector<SyntheticPair> read_dataset(const std::filesystem::path& path) {
  std::vector<SyntheticPair> pairs;
  detail::for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    auto j = detail::parse_json_line(line, path, line_no);
    SyntheticPair p;
    p.doc_id = detail::string_field(j, "doc_id", true, path, line_no);
    p.query = detail::string_field(j, "query", true, path, line_no);
    auto src = detail::string_field(j, "source", true, path, line_no);
    auto parsed = parse_pair_source(src);
    if (!parsed) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unknown source '" + src + "'");
    p.source = *parsed;
    p.intent = detail::string_field(j, "intent", true, path, line_no);
    if (p.query.empty() || p.query.find('\n') != std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": query must be non-empty and single-line");
    pairs.push_back(std::move(p));
  });
  return pairs;
}

inline void write_prototypes(const PrototypeSet& prototypes, const Corpus& corpus, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  for (const auto& d : corpus.docs()) {
    auto it = prototypes.find(d.doc_id);
    if (it == prototypes.end()) continue;
    nlohmann::ordered_json j;
    j["doc_id"] = d.doc_id;
    j["query"] = it->second;
    out << j.dump() << '\n';
  }
}

inline PrototypeSet read_prototypes(const std::filesystem::path& path) {
  PrototypeSet out;
  detail::for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    auto j = detail::parse_json_line(line, path, line_no);
    auto id = detail::string_field(j, "doc_id", true, path, line_no);
    auto q = detail::string_field(j, "query", true, path, line_no);
    if (!out.emplace(id, q).second)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate prototype for '" + id + "'");
  });
  return out;
}

// Fixed few-shot examples: JSON lines {"_id"?, "title"?, "text", "query"}.
inline std::vector<IclExample> read_icl_examples(const std::filesystem::path& path) {
  std::vector<IclExample> out;
  detail::for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    auto j = detail::parse_json_line(line, path, line_no);
    IclExample ex;
    ex.document.doc_id = detail::string_field(j, "_id", false, path, line_no);
    if (ex.document.doc_id.empty()) ex.document.doc_id = "example-" + std::to_string(out.size());
    ex.document.title = detail::string_field(j, "title", false, path, line_no);
    ex.document.text = detail::string_field(j, "text", true, path, line_no);
    ex.query = detail::string_field(j, "query", true, path, line_no);
    if (ex.document.prompt_text().empty() || ex.query.empty())
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": example text and query must be non-empty");
    out.push_back(std::move(ex));
  });
  return out;
}

// BeIR-style export: queries.jsonl with generated ids and qrels/train.tsv
// marking each pair's document relevant with score 1.
inline void export_beir(const std::vector<SyntheticPair>& pairs, const std::filesystem::path& dir) {
  std::vector<Query> queries;
  Qrels qrels;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto id = "gen-" + std::to_string(i);
    queries.push_back({id, pairs[i].query});
    qrels.add({id, pairs[i].doc_id, 1});
  }
  write_queries(QuerySet(std::move(queries)), dir / "queries.jsonl");
  write_qrels(qrels, dir / "qrels" / "train.tsv");
}

}  // namespace egg
