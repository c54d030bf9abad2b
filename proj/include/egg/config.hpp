#pragma once

// Resolved pipeline configuration: preset defaults, then a config file, then
// command-line overrides, merged as JSON and parsed into typed settings.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "egg/embed.hpp"
#include "egg/error.hpp"
#include "egg/genclient.hpp"
#include "egg/train.hpp"

namespace egg {

using ConfigJson = nlohmann::ordered_json;

enum class GenMode { Flan, ZeroShot, FewShot, LlamaIcl, PrototypeOnly };

inline std::string_view to_string(GenMode m) {
  switch (m) {
    case GenMode::Flan: return "flan";
    case GenMode::ZeroShot: return "zero-shot";
    case GenMode::FewShot: return "few-shot";
    case GenMode::LlamaIcl: return "llama-icl";
    case GenMode::PrototypeOnly: return "prototype-only";
  }
  return "flan";
}

inline GenMode parse_gen_mode(std::string_view s) {
  for (auto m : {GenMode::Flan, GenMode::ZeroShot, GenMode::FewShot, GenMode::LlamaIcl, GenMode::PrototypeOnly})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown generation mode '" + std::string(s) + "'");
}

struct PipelineConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;

  // corpus
  std::size_t max_tokens = 350;
  std::size_t sample_cap = 100'000;

  // intent
  std::string intent = "Claim";
  std::string intent_catalog;  // empty: built-ins

  // generation
  std::string gen_backend = "mock";
  GenMode mode = GenMode::Flan;
  RemoteEndpoint gen_endpoint;
  std::size_t server_max_n = 8;
  std::size_t concurrency = 8;
  double temperature = 1.0;
  int top_k = 25;
  double top_p = 0.95;
  bool greedy = false;
  std::size_t num_queries = 8;   // N
  std::size_t num_examples = 4;  // M
  std::size_t ablation_queries = 8;
  std::size_t max_new_tokens = 64;
  bool filter = true;
  bool log_prompts = false;
  std::size_t checkpoint_every = 1000;
  std::string few_shot_examples;

  // embed
  std::string embed_backend = "hash";
  std::size_t embed_dims = kDefaultHashDims;
  RemoteEndpoint embed_endpoint;

  // train
  TrainConfig train;
  std::string teacher = "none";  // none | lexical | remote
  RemoteEndpoint teacher_endpoint;

  // eval
  std::size_t eval_k = 10;

  SamplingParams sampling(std::size_t n) const {
    SamplingParams p;
    p.temperature = greedy ? 0.0 : temperature;
    p.top_k = greedy ? 1 : top_k;
    p.top_p = greedy ? 1.0 : top_p;
    p.n = n;
    p.max_new_tokens = max_new_tokens;
    p.seed = seed;
    return p;
  }
};

inline ConfigJson preset_json(std::string_view name) {
  ConfigJson j = {
      {"preset", std::string(name)},
      {"seed", 0},
      {"corpus", {{"max_tokens", 350}, {"sample_cap", 100'000}}},
      {"intent", {{"name", "Claim"}, {"catalog", ""}}},
      {"generation",
       {{"backend", "mock"},
        {"mode", "flan"},
        {"url", ""},
        {"model", ""},
        {"auth_token_env", "EGG_AUTH_TOKEN"},
        {"timeout_ms", 60'000},
        {"max_retries", 3},
        {"server_max_n", 8},
        {"concurrency", 8},
        {"temperature", 1.0},
        {"top_k", 25},
        {"top_p", 0.95},
        {"greedy", false},
        {"num_queries", 8},
        {"num_examples", 4},
        {"ablation_queries", 8},
        {"max_new_tokens", 64},
        {"filter", true},
        {"log_prompts", false},
        {"checkpoint_every", 1000},
        {"few_shot_examples", ""}}},
      {"embed", {{"backend", "hash"}, {"dims", 256}, {"url", ""}, {"model", ""}}},
      {"train",
       {{"objective", "DPR"},
        {"batch_size", 75},
        {"learning_rate", 2e-5},
        {"warmup_steps", 1000},
        {"epochs", nullptr},
        {"max_steps", nullptr},
        {"optimizer", "sgd"},
        {"dims_out", 128},
        {"tied", false},
        {"init", "random"},
        {"teacher", "none"},
        {"teacher_url", ""},
        {"teacher_model", ""}}},
      {"eval", {{"k", 10}}},
  };
  if (name == "paper") return j;
  if (name == "desk") {
    j["generation"]["num_queries"] = 4;
    j["generation"]["num_examples"] = 2;
    j["train"]["batch_size"] = 32;
    j["train"]["learning_rate"] = 1e-2;
    j["train"]["warmup_steps"] = 10;
    j["train"]["optimizer"] = "adam";
    j["train"]["init"] = "identity";
    j["train"]["dims_out"] = 256;
    return j;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

namespace detail {

inline void reject_unknown_keys(const ConfigJson& actual, const ConfigJson& known, const std::string& where) {
  for (const auto& [key, value] : actual.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    if (value.is_object() && known[key].is_object()) reject_unknown_keys(value, known[key], where + key + ".");
  }
}

template <typename T>
T get(const ConfigJson& j, std::string_view section, std::string_view key) {
  const auto& s = section.empty() ? j : j.at(std::string(section));
  try {
    return s.at(std::string(key)).get<T>();
  } catch (const std::exception& e) {
    throw ConfigError("config value '" + std::string(section) + (section.empty() ? "" : ".") + std::string(key) +
                      "': " + e.what());
  }
}

inline std::optional<std::size_t> get_optional(const ConfigJson& j, std::string_view section, std::string_view key) {
  const auto& s = j.at(std::string(section));
  auto it = s.find(std::string(key));
  if (it == s.end() || it->is_null()) return std::nullopt;
  return get<std::size_t>(j, section, key);
}

}  // namespace detail

// preset <- file <- overrides (JSON merge patch), fully populated.
inline ConfigJson resolve_config_json(const ConfigJson& file, const ConfigJson& overrides) {
  std::string preset = "desk";
  if (overrides.contains("preset"))
    preset = overrides["preset"].get<std::string>();
  else if (file.contains("preset"))
    preset = file["preset"].get<std::string>();
  auto resolved = preset_json(preset);
  for (const auto* layer : {&file, &overrides}) {
    if (layer->is_null()) continue;
    if (!layer->is_object()) throw ConfigError("configuration must be a JSON object");
    detail::reject_unknown_keys(*layer, resolved, "");
    resolved.merge_patch(*layer);
  }
  resolved["preset"] = preset;
  return resolved;
}

inline PipelineConfig parse_config(const ConfigJson& j) {
  using detail::get;
  PipelineConfig c;
  c.preset = get<std::string>(j, "", "preset");
  c.seed = get<std::uint64_t>(j, "", "seed");
  c.max_tokens = get<std::size_t>(j, "corpus", "max_tokens");
  c.sample_cap = get<std::size_t>(j, "corpus", "sample_cap");
  if (c.max_tokens < 1) throw ConfigError("corpus.max_tokens must be >= 1");
  if (c.sample_cap < 1) throw ConfigError("corpus.sample_cap must be >= 1");
  c.intent = get<std::string>(j, "intent", "name");
  c.intent_catalog = get<std::string>(j, "intent", "catalog");

  c.gen_backend = get<std::string>(j, "generation", "backend");
  if (c.gen_backend != "mock" && c.gen_backend != "remote")
    throw ConfigError("generation.backend must be mock or remote");
  c.mode = parse_gen_mode(get<std::string>(j, "generation", "mode"));
  c.gen_endpoint.url = get<std::string>(j, "generation", "url");
  c.gen_endpoint.model = get<std::string>(j, "generation", "model");
  c.gen_endpoint.auth_token_env = get<std::string>(j, "generation", "auth_token_env");
  c.gen_endpoint.timeout = std::chrono::milliseconds(get<long long>(j, "generation", "timeout_ms"));
  c.gen_endpoint.max_retries = get<int>(j, "generation", "max_retries");
  c.server_max_n = get<std::size_t>(j, "generation", "server_max_n");
  c.concurrency = get<std::size_t>(j, "generation", "concurrency");
  c.temperature = get<double>(j, "generation", "temperature");
  c.top_k = get<int>(j, "generation", "top_k");
  c.top_p = get<double>(j, "generation", "top_p");
  c.greedy = get<bool>(j, "generation", "greedy");
  c.num_queries = get<std::size_t>(j, "generation", "num_queries");
  c.num_examples = get<std::size_t>(j, "generation", "num_examples");
  c.ablation_queries = get<std::size_t>(j, "generation", "ablation_queries");
  c.max_new_tokens = get<std::size_t>(j, "generation", "max_new_tokens");
  c.filter = get<bool>(j, "generation", "filter");
  c.log_prompts = get<bool>(j, "generation", "log_prompts");
  c.checkpoint_every = get<std::size_t>(j, "generation", "checkpoint_every");
  c.few_shot_examples = get<std::string>(j, "generation", "few_shot_examples");
  if (c.gen_backend == "remote" && c.gen_endpoint.url.empty())
    throw ConfigError("generation.url is required for the remote backend");
  c.sampling(c.num_queries).validate();
  if (c.num_examples < 1) throw ConfigError("generation.num_examples must be >= 1");

  c.embed_backend = get<std::string>(j, "embed", "backend");
  if (c.embed_backend != "hash" && c.embed_backend != "remote") throw ConfigError("embed.backend must be hash or remote");
  c.embed_dims = get<std::size_t>(j, "embed", "dims");
  c.embed_endpoint.url = get<std::string>(j, "embed", "url");
  c.embed_endpoint.model = get<std::string>(j, "embed", "model");
  c.embed_endpoint.auth_token_env = c.gen_endpoint.auth_token_env;
  if (c.embed_backend == "remote" && c.embed_endpoint.url.empty())
    throw ConfigError("embed.url is required for the remote backend");

  auto& t = c.train;
  t.objective = parse_objective(get<std::string>(j, "train", "objective"));
  t.batch_size = get<std::size_t>(j, "train", "batch_size");
  t.learning_rate = get<double>(j, "train", "learning_rate");
  t.warmup_steps = get<std::size_t>(j, "train", "warmup_steps");
  t.epochs = detail::get_optional(j, "train", "epochs");
  t.max_steps = detail::get_optional(j, "train", "max_steps");
  t.optimizer = parse_optimizer(get<std::string>(j, "train", "optimizer"));
  t.dims_out = get<std::size_t>(j, "train", "dims_out");
  t.tied = get<bool>(j, "train", "tied");
  t.init = parse_encoder_init(get<std::string>(j, "train", "init"));
  t.seed = c.seed;
  t.validate();
  c.teacher = get<std::string>(j, "train", "teacher");
  if (c.teacher != "none" && c.teacher != "lexical" && c.teacher != "remote")
    throw ConfigError("train.teacher must be none, lexical, or remote");
  c.teacher_endpoint.url = get<std::string>(j, "train", "teacher_url");
  c.teacher_endpoint.model = get<std::string>(j, "train", "teacher_model");
  c.teacher_endpoint.auth_token_env = c.gen_endpoint.auth_token_env;
  if (t.objective == Objective::GPL && c.teacher == "none")
    throw ConfigError("objective GPL requires a teacher (train.teacher = lexical or remote)");
  if (c.teacher == "remote" && c.teacher_endpoint.url.empty())
    throw ConfigError("train.teacher_url is required for the remote teacher");

  c.eval_k = get<std::size_t>(j, "eval", "k");
  if (c.eval_k < 1) throw ConfigError("eval.k must be >= 1");
  return c;
}

// Reads a config file. A run manifest is accepted too: its "config" member
// is the resolved configuration of that run.
inline ConfigJson read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  ConfigJson j;
  try {
    j = ConfigJson::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  if (j.contains("config") && j["config"].is_object()) return j["config"];
  return j;
}

}  // namespace egg
