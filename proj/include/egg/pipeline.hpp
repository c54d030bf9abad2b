#pragma once

// Pipeline stages over a run directory, and the run manifest that records
// the resolved configuration and content hashes of every artifact.
//
// Run directory layout:
//   corpus/corpus.jsonl, corpus/queries.jsonl, corpus/qrels/test.tsv
//   prototypes.jsonl, embeddings.bin (+ .json), synthetic.jsonl
//   encoder.bin (+ encoder.json), train_log.csv
//   report.json, report.txt, per_query.tsv (report_baseline.*, per_query_baseline.tsv for --baseline)
//   manifest.json

#include <chrono>
#include <cstddef>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "egg/config.hpp"
#include "egg/corpus.hpp"
#include "egg/embed.hpp"
#include "egg/error.hpp"
#include "egg/eval.hpp"
#include "egg/genclient.hpp"
#include "egg/intent.hpp"
#include "egg/synth.hpp"
#include "egg/train.hpp"

#ifndef EGG_VERSION
#define EGG_VERSION "0.0.0"
#endif

namespace egg {

namespace fs = std::filesystem;

namespace layout {
inline const fs::path kCorpus = fs::path("corpus") / "corpus.jsonl";
inline const fs::path kQueries = fs::path("corpus") / "queries.jsonl";
inline const fs::path kQrels = fs::path("corpus") / "qrels" / "test.tsv";
inline const fs::path kPrototypes = "prototypes.jsonl";
inline const fs::path kEmbeddings = "embeddings.bin";
inline const fs::path kSynthetic = "synthetic.jsonl";
inline const fs::path kEncoder = "encoder.bin";
inline const fs::path kTrainLog = "train_log.csv";
inline const fs::path kReport = "report.json";
inline const fs::path kReportText = "report.txt";
inline const fs::path kBaselineReport = "report_baseline.json";
inline const fs::path kBaselineReportText = "report_baseline.txt";
inline const fs::path kBaselinePerQuery = "per_query_baseline.tsv";
inline const fs::path kPerQuery = "per_query.tsv";
inline const fs::path kManifest = "manifest.json";
inline const fs::path kCheckpoint = "generation.checkpoint.jsonl";
}  // namespace layout

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot hash '" + path.string() + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

enum class Stage { Ingest, Prototypes, Generate, Train, Eval };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Prototypes: return "gen-prototypes";
    case Stage::Generate: return "gen-queries";
    case Stage::Train: return "train";
    case Stage::Eval: return "eval";
  }
  return "ingest";
}

struct StageRecord {
  Stage stage = Stage::Ingest;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  nlohmann::ordered_json details = nlohmann::ordered_json::object();
  std::string started;
};

namespace detail {

inline std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string display_path(const fs::path& p, const fs::path& run_dir) {
  auto rel = p.lexically_relative(run_dir);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

inline nlohmann::ordered_json hashed(const std::vector<fs::path>& paths, const fs::path& run_dir) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& p : paths) {
    if (!fs::exists(p)) continue;
    out.push_back({{"path", display_path(p, run_dir)}, {"sha256", sha256_file(p)}});
  }
  return out;
}

}  // namespace detail

// Adds one stage entry to manifest.json, replacing the file atomically.
inline void record_stage(const fs::path& run_dir, const ConfigJson& config, const StageRecord& rec) {
  auto path = run_dir / layout::kManifest;
  nlohmann::ordered_json manifest;
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      manifest = nlohmann::ordered_json::parse(in);
    } catch (const std::exception&) {
      manifest = nlohmann::ordered_json::object();
    }
  }
  manifest["tool_version"] = EGG_VERSION;
  manifest["config"] = config;
  nlohmann::ordered_json entry;
  entry["stage"] = to_string(rec.stage);
  entry["config_sha256"] = text::hex64(text::fnv1a64(config.dump()));
  entry["seed"] = config.at("seed");
  entry["inputs"] = detail::hashed(rec.inputs, run_dir);
  entry["outputs"] = detail::hashed(rec.outputs, run_dir);
  entry["details"] = rec.details;
  entry["started"] = rec.started;
  entry["finished"] = detail::utc_now();
  manifest["stages"][std::string(to_string(rec.stage))] = entry;
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << manifest.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

inline std::unique_ptr<GenerationBackend> make_generation_backend(const PipelineConfig& c) {
  if (c.gen_backend == "mock") return std::make_unique<MockBackend>(0, c.concurrency);
  RemoteGenerationOptions opt;
  opt.endpoint = c.gen_endpoint;
  opt.server_max_n = c.server_max_n;
  opt.concurrency = c.concurrency;
  opt.log_prompts = c.log_prompts;
  return std::make_unique<RemoteBackend>(opt);
}

inline std::unique_ptr<Embedder> make_embedder(const PipelineConfig& c) {
  if (c.embed_backend == "hash") return std::make_unique<HashEmbedder>(c.embed_dims);
  return std::make_unique<RemoteEmbedder>(c.embed_endpoint, c.embed_dims);
}

inline std::unique_ptr<TeacherScorer> make_teacher(const PipelineConfig& c) {
  if (c.teacher == "lexical") return std::make_unique<LexicalTeacher>();
  if (c.teacher == "remote") return std::make_unique<RemoteCrossEncoder>(c.teacher_endpoint);
  return nullptr;
}

inline IntentSpec resolve_intent(const PipelineConfig& c) {
  auto catalog = c.intent_catalog.empty() ? builtin_intents() : load_intent_catalog(c.intent_catalog);
  return find_intent(catalog, c.intent);
}

namespace detail {

inline void require_artifact(const fs::path& path, Stage consumer, Stage producer) {
  if (!fs::exists(path))
    throw PreconditionError(std::string(to_string(consumer)) + ": missing '" + path.filename().string() +
                            "'; run the " + std::string(to_string(producer)) + " stage first");
}

}  // namespace detail

// Copies a BeIR dataset directory into the run, truncating and sampling the
// corpus. Queries and qrels are optional.
inline StageRecord stage_ingest(const PipelineConfig& c, const fs::path& data_dir, const fs::path& run_dir) {
  StageRecord rec;
  rec.stage = Stage::Ingest;
  rec.started = detail::utc_now();
  auto corpus_in = data_dir / "corpus.jsonl";
  auto queries_in = data_dir / "queries.jsonl";
  auto qrels_in = data_dir / "qrels" / "test.tsv";
  auto corpus = load_corpus(corpus_in);
  auto ingested = sample_corpus(truncate_corpus(corpus, c.max_tokens), c.sample_cap, c.seed);
  write_corpus(ingested, run_dir / layout::kCorpus);
  rec.inputs = {corpus_in};
  rec.outputs = {run_dir / layout::kCorpus};
  if (fs::exists(queries_in)) {
    write_queries(load_queries(queries_in), run_dir / layout::kQueries);
    rec.inputs.push_back(queries_in);
    rec.outputs.push_back(run_dir / layout::kQueries);
  }
  if (fs::exists(qrels_in)) {
    write_qrels(load_qrels(qrels_in), run_dir / layout::kQrels);
    rec.inputs.push_back(qrels_in);
    rec.outputs.push_back(run_dir / layout::kQrels);
  }
  rec.details = {{"documents_read", corpus.size()}, {"documents_kept", ingested.size()}};
  return rec;
}

inline StageRecord stage_prototypes(const PipelineConfig& c, const fs::path& run_dir) {
  StageRecord rec;
  rec.stage = Stage::Prototypes;
  rec.started = detail::utc_now();
  detail::require_artifact(run_dir / layout::kCorpus, Stage::Prototypes, Stage::Ingest);
  auto corpus = load_corpus(run_dir / layout::kCorpus);
  auto backend = make_generation_backend(c);
  SynthOptions opt;
  opt.checkpoint = run_dir / layout::kCheckpoint;
  opt.checkpoint_every = c.checkpoint_every;
  opt.fingerprint = "gen-prototypes:" + std::to_string(c.seed) + ":" + c.intent;
  auto prototypes = generate_prototypes(corpus, resolve_intent(c), *backend, c.sampling(1), opt);
  write_prototypes(prototypes, corpus, run_dir / layout::kPrototypes);
  rec.inputs = {run_dir / layout::kCorpus};
  rec.outputs = {run_dir / layout::kPrototypes};
  rec.details = {{"prototypes", prototypes.size()}, {"backend", backend->describe()}};
  return rec;
}

inline StageRecord stage_generate(const PipelineConfig& c, const fs::path& run_dir) {
  StageRecord rec;
  rec.stage = Stage::Generate;
  rec.started = detail::utc_now();
  detail::require_artifact(run_dir / layout::kCorpus, Stage::Generate, Stage::Ingest);
  if (c.mode == GenMode::LlamaIcl)
    detail::require_artifact(run_dir / layout::kPrototypes, Stage::Generate, Stage::Prototypes);
  if (c.mode == GenMode::FewShot && c.few_shot_examples.empty())
    throw ConfigError("gen-queries --mode few-shot needs generation.few_shot_examples");

  auto corpus = load_corpus(run_dir / layout::kCorpus);
  auto backend = make_generation_backend(c);
  auto intent = resolve_intent(c);
  SynthOptions opt;
  opt.checkpoint = run_dir / layout::kCheckpoint;
  opt.checkpoint_every = c.checkpoint_every;
  opt.fingerprint = "gen-queries:" + std::string(to_string(c.mode)) + ":" + std::to_string(c.seed) + ":" + c.intent;
  rec.inputs = {run_dir / layout::kCorpus};

  std::vector<SyntheticPair> pairs;
  switch (c.mode) {
    case GenMode::Flan:
      pairs = generate_queries_flan(corpus, intent, *backend, c.sampling(c.num_queries), PairSource::FlanMeta, opt);
      break;
    case GenMode::ZeroShot:
      pairs = generate_queries_zero_shot(corpus, *backend, c.sampling(c.num_queries), opt);
      break;
    case GenMode::FewShot:
      pairs = generate_queries_few_shot(corpus, intent, *backend, read_icl_examples(c.few_shot_examples),
                                        c.sampling(c.num_queries), opt);
      rec.inputs.push_back(c.few_shot_examples);
      break;
    case GenMode::PrototypeOnly:
      pairs = generate_prototype_only(corpus, intent, *backend, c.sampling(c.ablation_queries), opt);
      break;
    case GenMode::LlamaIcl: {
      auto prototypes = read_prototypes(run_dir / layout::kPrototypes);
      auto embedder = make_embedder(c);
      auto embeddings = embed_corpus(corpus, *embedder);
      save_matrix(embeddings, run_dir / layout::kEmbeddings);
      pairs = generate_queries_llama(corpus, intent, *backend, prototypes, embeddings, c.num_examples,
                                     c.sampling(c.num_queries), opt);
      rec.inputs.push_back(run_dir / layout::kPrototypes);
      rec.outputs.push_back(run_dir / layout::kEmbeddings);
      break;
    }
  }
  std::size_t generated = pairs.size();
  if (c.filter) pairs = filter_pairs(pairs, corpus);
  write_dataset(pairs, run_dir / layout::kSynthetic);
  rec.outputs.push_back(run_dir / layout::kSynthetic);
  rec.details = {{"mode", to_string(c.mode)},
                 {"intent", intent.e_q},
                 {"generated", generated},
                 {"kept", pairs.size()},
                 {"backend", backend->describe()}};
  return rec;
}

inline StageRecord stage_train(const PipelineConfig& c, const fs::path& run_dir) {
  StageRecord rec;
  rec.stage = Stage::Train;
  rec.started = detail::utc_now();
  detail::require_artifact(run_dir / layout::kCorpus, Stage::Train, Stage::Ingest);
  detail::require_artifact(run_dir / layout::kSynthetic, Stage::Train, Stage::Generate);
  auto teacher = make_teacher(c);
  if (c.train.objective == Objective::GPL && !teacher) throw ConfigError("objective GPL requires a teacher");
  auto corpus = load_corpus(run_dir / layout::kCorpus);
  auto pairs = read_dataset(run_dir / layout::kSynthetic);
  auto embedder = make_embedder(c);
  auto result = train_retriever(pairs, corpus, *embedder, c.train, teacher.get());
  save_encoder(result.params, run_dir / layout::kEncoder);
  write_train_log(result.log, run_dir / layout::kTrainLog);
  rec.inputs = {run_dir / layout::kCorpus, run_dir / layout::kSynthetic};
  rec.outputs = {run_dir / layout::kEncoder, sidecar_path(run_dir / layout::kEncoder), run_dir / layout::kTrainLog};
  rec.details = {{"steps", result.log.size()},
                 {"epochs", c.train.epochs.value_or(epochs_for_corpus(corpus.size()))},
                 {"initial_loss", result.log.empty() ? 0.0 : result.log.front().loss},
                 {"final_loss", result.log.empty() ? 0.0 : result.log.back().loss}};
  return rec;
}

struct EvalOptions {
  bool baseline = false;  // score with the identity encoder instead of encoder.bin
  bool per_query = false;
};

inline StageRecord stage_eval(const PipelineConfig& c, const fs::path& run_dir, const EvalOptions& eo,
                              EvalReport* report_out = nullptr) {
  StageRecord rec;
  rec.stage = Stage::Eval;
  rec.started = detail::utc_now();
  detail::require_artifact(run_dir / layout::kCorpus, Stage::Eval, Stage::Ingest);
  if (!fs::exists(run_dir / layout::kQueries) || !fs::exists(run_dir / layout::kQrels))
    throw PreconditionError("eval: the ingested dataset has no queries.jsonl and qrels/test.tsv");
  auto embedder = make_embedder(c);
  EncoderParams encoder;
  if (eo.baseline) {
    encoder = identity_encoder(embedder->dims());
  } else {
    detail::require_artifact(run_dir / layout::kEncoder, Stage::Eval, Stage::Train);
    encoder = load_encoder(run_dir / layout::kEncoder);
    rec.inputs.push_back(run_dir / layout::kEncoder);
  }
  auto corpus = load_corpus(run_dir / layout::kCorpus);
  auto report = evaluate_run(load_queries(run_dir / layout::kQueries), load_qrels(run_dir / layout::kQrels), corpus,
                             encoder, *embedder, c.eval_k);
  auto json = report_to_json(report);
  json["encoder"] = eo.baseline ? "identity" : "trained";
  // The identity baseline is written beside, not over, the trained report.
  auto report_path = run_dir / (eo.baseline ? layout::kBaselineReport : layout::kReport);
  auto table_path = run_dir / (eo.baseline ? layout::kBaselineReportText : layout::kReportText);
  {
    auto out = detail::open_output(report_path);
    out << json.dump(2) << '\n';
  }
  {
    auto out = detail::open_output(table_path);
    out << report_table(report);
  }
  rec.inputs.insert(rec.inputs.end(), {run_dir / layout::kCorpus, run_dir / layout::kQueries, run_dir / layout::kQrels});
  rec.outputs = {report_path, table_path};
  if (eo.per_query) {
    auto per_query_path = run_dir / (eo.baseline ? layout::kBaselinePerQuery : layout::kPerQuery);
    write_per_query_tsv(report, per_query_path);
    rec.outputs.push_back(per_query_path);
  }
  rec.details = {{"ndcg_at_k", report.aggregate}, {"k", report.k}, {"num_queries", report.num_queries}};
  if (report_out) *report_out = std::move(report);
  return rec;
}

}  // namespace egg
