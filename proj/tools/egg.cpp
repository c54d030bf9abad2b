// egg: compile search intents into synthetic queries, train a dual encoder
// on them, and evaluate retrieval with nDCG@k.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "egg/egg.hpp"

#ifndef EGG_TOY_DATA_DIR
#define EGG_TOY_DATA_DIR "data/toy"
#endif

namespace fs = std::filesystem;

namespace {

// Command-line values that override config file entries.
struct Overrides {
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> intent, intent_catalog;
  std::optional<std::string> backend, url, model, mode, few_shot_examples;
  std::optional<std::size_t> num_queries, num_examples, concurrency, server_max_n, max_new_tokens;
  std::optional<int> top_k, max_retries;
  std::optional<double> temperature, top_p;
  bool greedy = false, no_filter = false, log_prompts = false;
  std::optional<std::string> embed_backend, embed_url, embed_model;
  std::optional<std::size_t> embed_dims;
  std::optional<std::string> objective, teacher, teacher_url, teacher_model, optimizer, init;
  std::optional<std::size_t> batch_size, warmup, epochs, max_steps, dims_out;
  std::optional<double> lr;
  bool tied = false;
  std::optional<std::size_t> max_tokens, sample_cap, k;

  egg::ConfigJson to_json() const {
    egg::ConfigJson j = egg::ConfigJson::object();
    auto set = [&](const char* section, const char* key, const auto& opt) {
      if (!opt) return;
      if (*section)
        j[section][key] = *opt;
      else
        j[key] = *opt;
    };
    set("", "preset", preset);
    set("", "seed", seed);
    set("intent", "name", intent);
    set("intent", "catalog", intent_catalog);
    set("generation", "backend", backend);
    set("generation", "url", url);
    set("generation", "model", model);
    set("generation", "mode", mode);
    set("generation", "few_shot_examples", few_shot_examples);
    set("generation", "num_queries", num_queries);
    set("generation", "num_examples", num_examples);
    set("generation", "concurrency", concurrency);
    set("generation", "server_max_n", server_max_n);
    set("generation", "max_new_tokens", max_new_tokens);
    set("generation", "top_k", top_k);
    set("generation", "max_retries", max_retries);
    set("generation", "temperature", temperature);
    set("generation", "top_p", top_p);
    if (greedy) j["generation"]["greedy"] = true;
    if (no_filter) j["generation"]["filter"] = false;
    if (log_prompts) j["generation"]["log_prompts"] = true;
    set("embed", "backend", embed_backend);
    set("embed", "url", embed_url);
    set("embed", "model", embed_model);
    set("embed", "dims", embed_dims);
    set("train", "objective", objective);
    set("train", "teacher", teacher);
    set("train", "teacher_url", teacher_url);
    set("train", "teacher_model", teacher_model);
    set("train", "optimizer", optimizer);
    set("train", "init", init);
    set("train", "batch_size", batch_size);
    set("train", "warmup_steps", warmup);
    set("train", "epochs", epochs);
    set("train", "max_steps", max_steps);
    set("train", "dims_out", dims_out);
    set("train", "learning_rate", lr);
    if (tied) j["train"]["tied"] = true;
    set("corpus", "max_tokens", max_tokens);
    set("corpus", "sample_cap", sample_cap);
    set("eval", "k", k);
    return j;
  }
};

struct Common {
  std::string config_file;
  std::string run_dir = "run";
  std::string log_level = "info";
  Overrides over;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON config file (a run manifest also works)");
  cmd->add_option("--run-dir", c.run_dir, "Run directory")->capture_default_str();
  cmd->add_option("--log-level", c.log_level, "trace|debug|info|warn|error")->capture_default_str();
  auto& o = c.over;
  cmd->add_option("--preset", o.preset, "paper | desk");
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--intent", o.intent, "Task name or query description, e.g. Claim");
  cmd->add_option("--intent-catalog", o.intent_catalog, "JSON intent catalog");
  cmd->add_option("--backend", o.backend, "Generation backend: mock | remote");
  cmd->add_option("--url", o.url, "Completions endpoint base URL");
  cmd->add_option("--model", o.model);
  cmd->add_option("--mode", o.mode, "flan | zero-shot | few-shot | llama-icl | prototype-only");
  cmd->add_option("--few-shot-examples", o.few_shot_examples, "JSONL of fixed examples for few-shot mode");
  cmd->add_option("--num-queries", o.num_queries, "Queries per document (N)");
  cmd->add_option("--num-examples", o.num_examples, "In-context examples per prompt (M)");
  cmd->add_option("--concurrency", o.concurrency);
  cmd->add_option("--server-max-n", o.server_max_n);
  cmd->add_option("--max-new-tokens", o.max_new_tokens);
  cmd->add_option("--top-k", o.top_k);
  cmd->add_option("--top-p", o.top_p);
  cmd->add_option("--temperature", o.temperature);
  cmd->add_option("--max-retries", o.max_retries);
  cmd->add_flag("--greedy", o.greedy, "Greedy decoding");
  cmd->add_flag("--no-filter", o.no_filter, "Keep duplicate and copied queries");
  cmd->add_flag("--log-prompts", o.log_prompts, "Log full prompt text for remote requests");
  cmd->add_option("--embed-backend", o.embed_backend, "hash | remote");
  cmd->add_option("--embed-url", o.embed_url);
  cmd->add_option("--embed-model", o.embed_model);
  cmd->add_option("--embed-dims", o.embed_dims);
  cmd->add_option("--objective", o.objective, "DPR | GPL");
  cmd->add_option("--teacher", o.teacher, "none | lexical | remote");
  cmd->add_option("--teacher-url", o.teacher_url);
  cmd->add_option("--teacher-model", o.teacher_model);
  cmd->add_option("--optimizer", o.optimizer, "sgd | adam");
  cmd->add_option("--init", o.init, "identity | random");
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--lr", o.lr);
  cmd->add_option("--warmup", o.warmup);
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--max-steps", o.max_steps);
  cmd->add_option("--dims-out", o.dims_out);
  cmd->add_flag("--tied", o.tied, "Share one map between queries and documents");
  cmd->add_option("--max-tokens", o.max_tokens, "Passage truncation length");
  cmd->add_option("--sample-cap", o.sample_cap, "Corpus sampling cap");
  cmd->add_option("-k,--k", o.k, "Evaluation cutoff");
}

struct Resolved {
  egg::ConfigJson json;
  egg::PipelineConfig config;
  fs::path run_dir;
};

Resolved resolve(const Common& c) {
  egg::ConfigJson file = egg::ConfigJson::object();
  if (!c.config_file.empty()) file = egg::read_config_file(c.config_file);
  auto json = egg::resolve_config_json(file, c.over.to_json());
  return {json, egg::parse_config(json), fs::path(c.run_dir)};
}

void run_stage(const Resolved& r, egg::Stage stage, const std::function<egg::StageRecord()>& fn) {
  spdlog::info("stage {} starting", egg::to_string(stage));
  auto rec = fn();
  egg::record_stage(r.run_dir, r.json, rec);
  spdlog::info("stage {} done: {}", egg::to_string(stage), rec.details.dump());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"egg: intent-aware synthetic query generation and dense retriever training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(EGG_VERSION));

  Common common;
  std::string data_dir = EGG_TOY_DATA_DIR;
  std::string export_dir;
  std::string toy_out;
  std::uint64_t toy_seed = 2024;
  egg::EvalOptions eval_opts;

  auto* ingest = app.add_subcommand("ingest", "Load, truncate, and sample a BeIR dataset into the run directory");
  auto* protos = app.add_subcommand("gen-prototypes", "Generate one prototype query per document");
  auto* gen = app.add_subcommand("gen-queries", "Generate synthetic queries");
  auto* train = app.add_subcommand("train", "Train the dual encoder on synthetic pairs");
  auto* eval = app.add_subcommand("eval", "Evaluate retrieval with nDCG@k");
  auto* all = app.add_subcommand("run-all", "Run every stage in order");
  auto* exp = app.add_subcommand("export", "Export synthetic pairs as BeIR queries and qrels");
  auto* toy = app.add_subcommand("make-toy", "Write the bundled toy topic task");

  for (auto* cmd : {ingest, protos, gen, train, eval, all, exp}) add_common(cmd, common);
  for (auto* cmd : {ingest, all}) cmd->add_option("--data", data_dir, "BeIR dataset directory")->capture_default_str();
  for (auto* cmd : {eval, all}) cmd->add_flag("--per-query", eval_opts.per_query, "Also write per_query.tsv");
  eval->add_flag("--baseline", eval_opts.baseline, "Evaluate the untrained identity encoder");
  exp->add_option("--out", export_dir, "Output directory")->required();
  toy->add_option("--out", toy_out, "Output directory")->required();
  toy->add_option("--seed", toy_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (toy->parsed()) {
    egg::toy::Options opt;
    opt.seed = toy_seed;
    egg::toy::write_task(egg::toy::make_task(opt), toy_out);
    return 0;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("egg"));
  spdlog::set_level(spdlog::level::from_str(common.log_level));

  Resolved r;
  try {
    r = resolve(common);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  std::string current = "setup";
  try {
    fs::create_directories(r.run_dir);
    const auto& c = r.config;
    if (ingest->parsed()) {
      current = "ingest";
      run_stage(r, egg::Stage::Ingest, [&] { return egg::stage_ingest(c, data_dir, r.run_dir); });
    } else if (protos->parsed()) {
      current = "gen-prototypes";
      run_stage(r, egg::Stage::Prototypes, [&] { return egg::stage_prototypes(c, r.run_dir); });
    } else if (gen->parsed()) {
      current = "gen-queries";
      run_stage(r, egg::Stage::Generate, [&] { return egg::stage_generate(c, r.run_dir); });
    } else if (train->parsed()) {
      current = "train";
      run_stage(r, egg::Stage::Train, [&] { return egg::stage_train(c, r.run_dir); });
    } else if (eval->parsed()) {
      current = "eval";
      egg::EvalReport report;
      run_stage(r, egg::Stage::Eval, [&] { return egg::stage_eval(c, r.run_dir, eval_opts, &report); });
      std::cout << egg::report_table(report);
    } else if (exp->parsed()) {
      current = "export";
      egg::export_beir(egg::read_dataset(r.run_dir / egg::layout::kSynthetic), export_dir);
    } else if (all->parsed()) {
      current = "ingest";
      run_stage(r, egg::Stage::Ingest, [&] { return egg::stage_ingest(c, data_dir, r.run_dir); });
      if (c.mode == egg::GenMode::LlamaIcl) {
        current = "gen-prototypes";
        run_stage(r, egg::Stage::Prototypes, [&] { return egg::stage_prototypes(c, r.run_dir); });
      }
      current = "gen-queries";
      run_stage(r, egg::Stage::Generate, [&] { return egg::stage_generate(c, r.run_dir); });
      current = "train";
      run_stage(r, egg::Stage::Train, [&] { return egg::stage_train(c, r.run_dir); });
      current = "eval";
      egg::EvalReport report;
      run_stage(r, egg::Stage::Eval, [&] { return egg::stage_eval(c, r.run_dir, eval_opts, &report); });
      std::cout << egg::report_table(report);
    }
  } catch (const egg::ConfigError& e) {
    std::cerr << "config error [" << current << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error [" << current << "]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
