#pragma once

// A small separable retrieval task: four topic clusters of documents that
// mix topic words with shared filler words, and held-out queries made of
// topic words. Every document in a query's cluster is relevant.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "egg/corpus.hpp"
#include "egg/random.hpp"

namespace egg::toy {

struct Topic {
  std::string_view name;
  std::array<std::string_view, 40> words;
};

inline constexpr std::array<Topic, 4> kTopics = {{
    {"astronomy",
     {"galaxy", "nebula", "telescope", "orbit", "comet", "asteroid", "planet", "quasar", "pulsar", "supernova",
      "redshift", "eclipse", "meteor", "cosmos", "stellar", "lunar", "solar", "exoplanet", "spectrograph", "parallax",
      "magnitude", "zenith", "equinox", "perihelion", "aphelion", "constellation", "observatory", "astronaut",
      "satellite", "gravity", "blackhole", "wormhole", "starlight", "nova", "dwarf", "giant", "cluster", "halo",
      "interstellar", "celestial"}},
    {"cooking",
     {"recipe", "saute", "simmer", "braise", "oven", "skillet", "garlic", "onion", "butter", "flour", "yeast",
      "dough", "knead", "whisk", "marinade", "broth", "stew", "roast", "grill", "spice", "oregano", "basil", "thyme",
      "cumin", "paprika", "caramelize", "glaze", "batter", "pastry", "sourdough", "risotto", "noodle", "dumpling",
      "ladle", "colander", "casserole", "vinaigrette", "emulsion", "poach", "blanch"}},
    {"finance",
     {"dividend", "equity", "bond", "yield", "portfolio", "hedge", "liquidity", "inflation", "interest", "mortgage",
      "collateral", "derivative", "futures", "option", "broker", "ledger", "audit", "revenue", "margin", "valuation",
      "capital", "leverage", "solvency", "bankruptcy", "treasury", "coupon", "maturity", "arbitrage", "volatility",
      "index", "shareholder", "stock", "credit", "debt", "loan", "asset", "liability", "depreciation", "fiscal",
      "monetary"}},
    {"football",
     {"striker", "goalkeeper", "midfielder", "defender", "penalty", "corner", "offside", "referee", "tackle",
      "dribble", "header", "volley", "freekick", "stadium", "league", "tournament", "derby", "captain", "coach",
      "transfer", "fixture", "kickoff", "halftime", "extratime", "shootout", "crossbar", "goalpost", "winger",
      "sweeper", "formation", "pitch", "supporters", "anthem", "trophy", "relegation", "promotion", "substitute",
      "yellowcard", "redcard", "assist"}},
}};

inline constexpr auto kFiller = std::to_array<std::string_view>({
    "the",      "of",       "and",      "to",       "in",       "is",       "was",      "for",      "on",
    "with",     "as",       "by",       "at",       "from",     "that",     "this",     "which",    "were",
    "are",      "been",     "has",      "had",      "have",     "after",    "before",   "during",   "about",
    "over",     "under",    "between",  "through",  "into",     "many",     "several",  "some",     "most",
    "often",    "usually",  "sometimes", "always",  "never",    "early",    "late",     "new",      "old",
    "first",    "second",   "third",    "last",     "next",     "large",    "small",    "long",     "short",
    "high",     "low",      "major",    "minor",    "common",   "rare",     "general",  "specific", "local",
    "national", "global",   "modern",   "ancient",  "recent",   "current",  "annual",   "daily",    "weekly",
    "people",   "group",    "part",     "place",    "case",     "point",    "way",      "time",     "year",
    "day",      "week",     "month",    "number",   "example",  "result",   "change",   "level",    "form",
    "type",     "kind",     "area",     "region",   "city",     "country",  "world",    "history",  "period",
    "process",  "system",   "method",   "approach", "study",    "report",   "review",   "account",  "story",
    "record",   "known",    "called",   "named",    "described", "considered", "used",  "made",     "found",
    "seen",     "given",    "taken"});

struct Options {
  std::size_t docs_per_topic = 50;
  std::size_t queries_per_topic = 10;
  std::size_t topic_words_per_doc = 6;
  std::size_t filler_words_per_doc = 18;
  std::size_t topic_words_per_query = 3;
  std::size_t filler_words_per_query = 2;
  std::uint64_t seed = 2024;
};

struct Task {
  Corpus corpus;
  QuerySet queries;
  Qrels qrels;
};

namespace detail {

inline std::vector<std::string> pick_distinct(const std::array<std::string_view, 40>& words, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(words.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k && i < idx.size(); ++i) {
    std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    out.emplace_back(words[idx[i]]);
  }
  return out;
}

inline std::string assemble(std::vector<std::string> tokens, Rng& rng) {
  rng.shuffle(tokens);
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace detail

inline Task make_task(const Options& opt = {}) {
  Rng rng(opt.seed);
  std::vector<Document> docs;
  std::vector<Query> queries;
  Qrels qrels;
  for (std::size_t t = 0; t < kTopics.size(); ++t) {
    const auto& topic = kTopics[t];
    for (std::size_t i = 0; i < opt.docs_per_topic; ++i) {
      auto tokens = detail::pick_distinct(topic.words, opt.topic_words_per_doc, rng);
      for (std::size_t f = 0; f < opt.filler_words_per_doc; ++f) tokens.emplace_back(kFiller[rng.index(kFiller.size())]);
      char id[32];
      std::snprintf(id, sizeof id, "%s-%03zu", std::string(topic.name).c_str(), i);
      docs.push_back({id, "", detail::assemble(std::move(tokens), rng)});
    }
  }
  for (std::size_t t = 0; t < kTopics.size(); ++t) {
    const auto& topic = kTopics[t];
    for (std::size_t i = 0; i < opt.queries_per_topic; ++i) {
      auto tokens = detail::pick_distinct(topic.words, opt.topic_words_per_query, rng);
      for (std::size_t f = 0; f < opt.filler_words_per_query; ++f)
        tokens.emplace_back(kFiller[rng.index(kFiller.size())]);
      char id[32];
      std::snprintf(id, sizeof id, "q-%s-%02zu", std::string(topic.name).c_str(), i);
      queries.push_back({id, detail::assemble(std::move(tokens), rng)});
      for (std::size_t d = 0; d < opt.docs_per_topic; ++d) {
        char doc[32];
        std::snprintf(doc, sizeof doc, "%s-%03zu", std::string(topic.name).c_str(), d);
        qrels.add({id, doc, 1});
      }
    }
  }
  return {Corpus(std::move(docs), "toy"), QuerySet(std::move(queries)), std::move(qrels)};
}

// Writes the task in BeIR layout: corpus.jsonl, queries.jsonl, qrels/test.tsv.
inline void write_task(const Task& task, const std::filesystem::path& dir) {
  write_corpus(task.corpus, dir / "corpus.jsonl");
  write_queries(task.queries, dir / "queries.jsonl");
  write_qrels(task.qrels, dir / "qrels" / "test.tsv");
}

}  // namespace egg::toy
