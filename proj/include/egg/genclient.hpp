#pragma once

// Text-generation backends: an OpenAI-compatible completions client and a
// deterministic offline mock.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "egg/error.hpp"
#include "egg/http.hpp"
#include "egg/intent.hpp"
#include "egg/random.hpp"
#include "egg/text.hpp"

namespace egg {

struct SamplingParams {
  double temperature = 1.0;
  int top_k = 25;
  double top_p = 0.95;
  std::size_t n = 1;  // completions per prompt
  std::size_t max_new_tokens = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
    if (n < 1) throw ConfigError("n must be >= 1");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  }
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;

  // Raw completions for one prompt; exactly params.n entries, possibly empty.
  virtual std::vector<std::string> complete(const PromptString& prompt, const SamplingParams& params) = 0;

  // Largest n a single request may ask for.
  virtual std::size_t max_n_per_request() const { return 64; }

  // Bound on concurrent in-flight prompts.
  virtual std::size_t concurrency() const { return 1; }

  virtual std::string describe() const = 0;
};

inline constexpr std::size_t kMockQueryTokens = 5;

namespace detail {

inline std::string_view strip_suffix(std::string_view s, std::string_view suffix) {
  if (s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix)
    return s.substr(0, s.size() - suffix.size());
  return s;
}

}  // namespace detail

// Recovers the document a rendered prompt embeds.
inline std::string_view prompt_document(const PromptString& prompt) {
  std::string_view t = prompt.text;
  std::string answer_slot = " " + prompt.e_q + ":";
  switch (prompt.kind) {
    case PromptKind::FlanMeta: {
      auto pos = t.find(prompt::kFlanTail);
      return pos == std::string_view::npos ? t : t.substr(pos + prompt::kFlanTail.size());
    }
    case PromptKind::LlamaPrototype: {
      auto pos = t.find(prompt::kProtoMid);
      auto rest = pos == std::string_view::npos ? t : t.substr(pos + prompt::kProtoMid.size());
      return detail::strip_suffix(rest, answer_slot);
    }
    case PromptKind::LlamaIcl: {
      auto pos = t.rfind(prompt::kPassage);
      auto rest = pos == std::string_view::npos ? t : t.substr(pos + prompt::kPassage.size());
      return detail::strip_suffix(rest, answer_slot);
    }
  }
  return t;
}

// Completion j is the intent word followed by up to five document tokens.
// Positions are drawn without replacement by a partial Fisher-Yates shuffle
// driven by Rng(params.seed + j), then emitted in document order.
inline std::vector<std::string> mock_generate(const PromptString& prompt, const SamplingParams& params) {
  auto tokens = text::split_whitespace(prompt_document(prompt));
  std::vector<std::string> out;
  out.reserve(params.n);
  for (std::size_t j = 0; j < params.n; ++j) {
    std::vector<std::size_t> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    std::size_t take = std::min(kMockQueryTokens, tokens.size());
    if (tokens.size() > kMockQueryTokens) {
      Rng rng(params.seed + j);
      for (std::size_t i = 0; i < take; ++i) std::swap(positions[i], positions[i + rng.index(tokens.size() - i)]);
      positions.resize(take);
      std::sort(positions.begin(), positions.end());
    }
    std::string completion = prompt.e_q;
    for (std::size_t i = 0; i < take; ++i) {
      completion += ' ';
      completion += tokens[positions[i]];
    }
    out.push_back(std::move(completion));
  }
  return out;
}

class MockBackend final : public GenerationBackend {
 public:
  explicit MockBackend(std::uint64_t seed_offset = 0, std::size_t concurrency = 1)
      : seed_offset_(seed_offset), concurrency_(std::max<std::size_t>(1, concurrency)) {}

  std::vector<std::string> complete(const PromptString& prompt, const SamplingParams& params) override {
    SamplingParams p = params;
    p.seed += seed_offset_;
    return mock_generate(prompt, p);
  }
  std::size_t concurrency() const override { return concurrency_; }
  std::string describe() const override { return "mock"; }

 private:
  std::uint64_t seed_offset_;
  std::size_t concurrency_;
};

struct RemoteGenerationOptions {
  RemoteEndpoint endpoint;
  std::size_t server_max_n = 8;
  std::size_t concurrency = 8;
  bool send_top_k = true;  // vendor extension; servers may ignore it
  bool log_prompts = false;
};

// OpenAI-compatible POST /v1/completions.
class RemoteBackend final : public GenerationBackend {
 public:
  explicit RemoteBackend(RemoteGenerationOptions options) : options_(std::move(options)) {}

  std::vector<std::string> complete(const PromptString& prompt, const SamplingParams& params) override {
    nlohmann::json body = {
        {"model", options_.endpoint.model},
        {"prompt", prompt.text},
        {"temperature", params.temperature},
        {"top_p", params.top_p},
        {"n", params.n},
        {"max_tokens", params.max_new_tokens},
        {"seed", params.seed},
    };
    if (options_.send_top_k) body["top_k"] = params.top_k;
    auto id = text::hex64(text::fnv1a64(prompt.text));
    if (options_.log_prompts)
      spdlog::debug("completion request prompt={} n={} text={}", id, params.n, prompt.text);
    else
      spdlog::debug("completion request prompt={} n={}", id, params.n);

    nlohmann::json response;
    try {
      response = post_json(options_.endpoint, "/v1/completions", body, &requests_);
    } catch (const BackendError& e) {
      throw BackendError("prompt " + id + ": " + e.what());
    }
    std::vector<std::string> out(params.n);
    if (!response.contains("choices") || !response["choices"].is_array())
      throw BackendError("prompt " + id + ": response lacks a choices array");
    std::size_t next = 0;
    for (const auto& choice : response["choices"]) {
      std::size_t idx = choice.contains("index") ? choice["index"].get<std::size_t>() : next;
      ++next;
      if (idx < out.size() && choice.contains("text") && choice["text"].is_string())
        out[idx] = choice["text"].get<std::string>();
    }
    return out;
  }

  std::size_t max_n_per_request() const override { return std::max<std::size_t>(1, options_.server_max_n); }
  std::size_t concurrency() const override { return std::max<std::size_t>(1, options_.concurrency); }
  std::string describe() const override { return "remote:" + options_.endpoint.url; }

  std::size_t request_count() const { return requests_.load(); }

 private:
  RemoteGenerationOptions options_;
  std::atomic<std::size_t> requests_{0};
};

// Strips surrounding whitespace and keeps only the first line.
inline std::string clean_completion(std::string_view raw) {
  auto s = text::trim(raw);
  auto nl = s.find_first_of("\r\n");
  if (nl != std::string_view::npos) s = text::trim(s.substr(0, nl));
  return std::string(s);
}

inline constexpr int kResampleRounds = 2;

// Returns exactly params.n cleaned, non-empty queries. Requests are split
// into chunks of at most max_n_per_request(); chunk seeds are offset by the
// completion index so that splitting does not change mock output. Empty
// completions are dropped and resampled.
inline std::vector<std::string> generate(GenerationBackend& backend, const PromptString& prompt,
                                         const SamplingParams& params) {
  if (prompt.text.empty()) throw PreconditionError("generate: empty prompt");
  params.validate();
  std::vector<std::string> out;
  out.reserve(params.n);
  std::uint64_t offset = 0;
  for (int round = 0; round <= kResampleRounds && out.size() < params.n; ++round) {
    if (round > 0)
      spdlog::warn("prompt {}: {} empty completion(s), resampling", text::hex64(text::fnv1a64(prompt.text)),
                   params.n - out.size());
    std::size_t missing = params.n - out.size();
    while (missing > 0) {
      SamplingParams chunk = params;
      chunk.n = std::min(missing, backend.max_n_per_request());
      chunk.seed = params.seed + offset;
      auto raw = backend.complete(prompt, chunk);
      offset += chunk.n;
      missing -= chunk.n;
      for (const auto& r : raw) {
        auto q = clean_completion(r);
        if (!q.empty() && out.size() < params.n) out.push_back(std::move(q));
      }
    }
  }
  if (out.size() < params.n)
    throw BackendError("prompt " + text::hex64(text::fnv1a64(prompt.text)) + ": only " + std::to_string(out.size()) +
                       " of " + std::to_string(params.n) + " completions were non-empty");
  return out;
}

}  // namespace egg
