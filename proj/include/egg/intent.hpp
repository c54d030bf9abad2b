#pragma once

// Search intents and the meta-prompt templates that compile them into
// generation prompts.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "egg/corpus.hpp"
#include "egg/error.hpp"

namespace egg {

enum class IntentCategory { Informational, Navigational, Transactional, Mixed };

inline std::string_view to_string(IntentCategory c) {
  switch (c) {
    case IntentCategory::Informational: return "Informational";
    case IntentCategory::Navigational: return "Navigational";
    case IntentCategory::Transactional: return "Transactional";
    case IntentCategory::Mixed: return "Mixed";
  }
  return "Mixed";
}

inline IntentCategory parse_intent_category(std::string_view s) {
  if (s == "Informational") return IntentCategory::Informational;
  if (s == "Navigational") return IntentCategory::Navigational;
  if (s == "Transactional") return IntentCategory::Transactional;
  if (s == "Mixed") return IntentCategory::Mixed;
  throw ConfigError("unknown intent category '" + std::string(s) + "'");
}

struct IntentSpec {
  std::string task_name;
  IntentCategory category = IntentCategory::Informational;
  std::string e_q;  // query description substituted into templates

  friend bool operator==(const IntentSpec&, const IntentSpec&) = default;
};

inline IntentSpec make_intent(std::string task_name, IntentCategory category, std::string e_q) {
  if (e_q.empty()) throw PreconditionError("intent '" + task_name + "' has an empty query description");
  return {std::move(task_name), category, std::move(e_q)};
}

inline std::vector<IntentSpec> builtin_intents() {
  return {
      {"Fact Checking", IntentCategory::Transactional, "Claim"},
      {"Argument Retrieval", IntentCategory::Transactional, "Argument"},
      {"Citation Prediction", IntentCategory::Navigational, "Title"},
      {"Entity Retrieval", IntentCategory::Mixed, "Entity"},
      {"zero-shot", IntentCategory::Informational, "query"},
  };
}

// Catalog file: {"<task_name>": {"intent_category": "...", "e_q": "..."}, ...}
inline std::vector<IntentSpec> load_intent_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open intent catalog '" + path.string() + "'");
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("intent catalog '" + path.string() + "': " + e.what());
  }
  if (!j.is_object()) throw ConfigError("intent catalog must be a JSON object");
  std::vector<IntentSpec> out;
  for (const auto& [name, entry] : j.items()) {
    if (!entry.contains("e_q") || !entry["e_q"].is_string())
      throw ConfigError("intent '" + name + "' lacks a string e_q");
    auto category = parse_intent_category(entry.value("intent_category", std::string("Informational")));
    out.push_back(make_intent(name, category, entry["e_q"].get<std::string>()));
  }
  return out;
}

// Looks an intent up by task name or by e_q, task name first.
inline IntentSpec find_intent(const std::vector<IntentSpec>& catalog, std::string_view key) {
  for (const auto& i : catalog)
    if (i.task_name == key) return i;
  for (const auto& i : catalog)
    if (i.e_q == key) return i;
  throw ConfigError("unknown intent '" + std::string(key) + "'");
}

enum class PromptKind { FlanMeta, LlamaPrototype, LlamaIcl };

struct PromptString {
  std::string text;
  PromptKind kind = PromptKind::FlanMeta;
  std::string e_q;  // the description the prompt was rendered with
};

namespace prompt {

inline constexpr std::string_view kFlanHead = "Write a ";
inline constexpr std::string_view kFlanTail =
    " related to topic of the passage. Do not directly use wordings from the passage. ";
inline constexpr std::string_view kProtoHead = "[INST] Read the passage and generate a ";
inline constexpr std::string_view kProtoMid = ". [/INST] ";
inline constexpr std::string_view kPassage = "Passage: ";

// Characters the FLAN template contributes besides e_q and the document.
inline constexpr std::size_t kFlanConstantLength = kFlanHead.size() + kFlanTail.size();

}  // namespace prompt

namespace detail {

inline const std::string& require_text(const std::string& doc_text, const char* op) {
  if (doc_text.empty()) throw PreconditionError(std::string(op) + ": document text is empty");
  return doc_text;
}

}  // namespace detail

inline PromptString render_flan_prompt(const IntentSpec& intent, std::string_view doc_text) {
  std::string d(doc_text);
  detail::require_text(d, "render_flan_prompt");
  std::string out;
  out.reserve(prompt::kFlanConstantLength + intent.e_q.size() + d.size());
  out.append(prompt::kFlanHead).append(intent.e_q).append(prompt::kFlanTail).append(d);
  return {std::move(out), PromptKind::FlanMeta, intent.e_q};
}

inline PromptString render_flan_prompt(const IntentSpec& intent, const Document& doc) {
  return render_flan_prompt(intent, std::string_view(doc.prompt_text()));
}

inline PromptString render_prototype_prompt(const IntentSpec& intent, std::string_view doc_text) {
  std::string d(doc_text);
  detail::require_text(d, "render_prototype_prompt");
  std::string out;
  out.append(prompt::kProtoHead).append(intent.e_q).append(prompt::kProtoMid).append(d);
  out.append(" ").append(intent.e_q).append(":");
  return {std::move(out), PromptKind::LlamaPrototype, intent.e_q};
}

inline PromptString render_prototype_prompt(const IntentSpec& intent, const Document& doc) {
  return render_prototype_prompt(intent, std::string_view(doc.prompt_text()));
}

struct IclExample {
  Document document;
  std::string query;
};

struct IclOptions {
  std::string separator = " ";  // between Passage blocks
};

inline PromptString render_icl_prompt(const IntentSpec& intent, const std::vector<IclExample>& examples,
                                      const Document& target, const IclOptions& options = {}) {
  if (examples.empty()) throw PreconditionError("render_icl_prompt: no in-context examples");
  std::string target_text = target.prompt_text();
  detail::require_text(target_text, "render_icl_prompt");
  std::string out;
  for (const auto& ex : examples) {
    if (ex.document.doc_id == target.doc_id)
      throw PreconditionError("render_icl_prompt: target document '" + target.doc_id + "' is among the examples");
    if (ex.query.empty()) throw PreconditionError("render_icl_prompt: example query is empty");
    auto example_text = ex.document.prompt_text();
    detail::require_text(example_text, "render_icl_prompt");
    out.append(prompt::kPassage).append(example_text);
    out.append(" ").append(intent.e_q).append(": ").append(ex.query);
    out.append(options.separator);
  }
  out.append(prompt::kPassage).append(target_text).append(" ").append(intent.e_q).append(":");
  return {std::move(out), PromptKind::LlamaIcl, intent.e_q};
}

}  // namespace egg
