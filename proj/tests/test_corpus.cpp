#include <catch_amalgamated.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "egg/corpus.hpp"
#include "oracles.hpp"

using namespace egg;

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string words(std::size_t n, const std::string& stem = "w") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += (i ? " " : "") + stem + std::to_string(i);
  return out;
}

Corpus numbered_corpus(std::size_t n) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n; ++i) docs.push_back({"d" + std::to_string(i), "", "text " + std::to_string(i)});
  return Corpus(std::move(docs), "mem");
}

}  // namespace

TEST_CASE("load_corpus parses BeIR lines in file order", "[corpus]") {
  oracle::TempDir dir("corpus");
  write_file(dir / "c.jsonl",
             "{\"_id\":\"d1\",\"title\":\"T\",\"text\":\"alpha beta\"}\n"
             "{\"_id\":\"d0\",\"title\":\"\",\"text\":\"gamma\"}\n");
  auto c = load_corpus(dir / "c.jsonl");
  REQUIRE(c.size() == 2);
  CHECK(c[0] == Document{"d1", "T", "alpha beta"});
  CHECK(c[1].doc_id == "d0");
  CHECK(c.find("d0") == std::optional<std::size_t>(1));
  CHECK(c[0].prompt_text() == "T. alpha beta");
  CHECK(c[1].prompt_text() == "gamma");
}

TEST_CASE("load_corpus handles empty files and rejects bad input", "[corpus]") {
  oracle::TempDir dir("corpus");
  write_file(dir / "empty.jsonl", "");
  CHECK(load_corpus(dir / "empty.jsonl").size() == 0);

  write_file(dir / "dup.jsonl",
             "{\"_id\":\"d1\",\"title\":\"\",\"text\":\"a\"}\n{\"_id\":\"d1\",\"title\":\"\",\"text\":\"b\"}\n");
  CHECK_THROWS_AS(load_corpus(dir / "dup.jsonl"), FormatError);

  write_file(dir / "bad.jsonl", "{\"_id\":\"d1\",\"title\":\"\",\"text\":\"a\"}\n{not json\n");
  CHECK_THROWS_WITH(load_corpus(dir / "bad.jsonl"), Catch::Matchers::ContainsSubstring(":2"));

  CHECK_THROWS_AS(load_corpus(dir / "missing.jsonl"), Error);
}

TEST_CASE("load_qrels parses scores and enforces the invariants", "[corpus]") {
  oracle::TempDir dir("qrels");
  write_file(dir / "q.tsv", "query-id\tcorpus-id\tscore\nq1\td5\t1\nq1\td6\t0\n");
  auto q = load_qrels(dir / "q.tsv");
  REQUIRE(q.size() == 2);
  CHECK(q.relevance("q1", "d5") == 1);
  CHECK(q.relevance("q1", "d6") == 0);

  write_file(dir / "header.tsv", "query-id\tcorpus-id\tscore\n");
  CHECK(load_qrels(dir / "header.tsv").empty());

  write_file(dir / "neg.tsv", "query-id\tcorpus-id\tscore\nq1\td5\t-1\n");
  CHECK_THROWS(load_qrels(dir / "neg.tsv"));

  write_file(dir / "frac.tsv", "query-id\tcorpus-id\tscore\nq1\td5\t0.5\n");
  CHECK_THROWS(load_qrels(dir / "frac.tsv"));

  write_file(dir / "dup.tsv", "query-id\tcorpus-id\tscore\nq1\td5\t1\nq1\td5\t2\n");
  CHECK_THROWS(load_qrels(dir / "dup.tsv"));
}

TEST_CASE("load_queries rejects duplicate ids", "[corpus]") {
  oracle::TempDir dir("queries");
  write_file(dir / "q.jsonl", "{\"_id\":\"q1\",\"text\":\"a\"}\n{\"_id\":\"q2\",\"text\":\"b\"}\n");
  auto q = load_queries(dir / "q.jsonl");
  REQUIRE(q.size() == 2);
  CHECK(q.queries()[1].text == "b");
  write_file(dir / "dup.jsonl", "{\"_id\":\"q1\",\"text\":\"a\"}\n{\"_id\":\"q1\",\"text\":\"b\"}\n");
  CHECK_THROWS(load_queries(dir / "dup.jsonl"));
}

TEST_CASE("load and write round-trip bit-exactly", "[corpus][property]") {
  oracle::TempDir dir("roundtrip");
  const std::string corpus_text =
      "{\"_id\":\"d1\",\"title\":\"Caf\xC3\xA9 \\\"quoted\\\"\",\"text\":\"tab\\there\"}\n"
      "{\"_id\":\"d2\",\"title\":\"\",\"text\":\"plain\"}\n";
  const std::string queries_text = "{\"_id\":\"q1\",\"text\":\"what is \xC3\xA9\"}\n";
  const std::string qrels_text = "query-id\tcorpus-id\tscore\nq1\td1\t2\nq1\td2\t0\n";
  write_file(dir / "corpus.jsonl", corpus_text);
  write_file(dir / "queries.jsonl", queries_text);
  write_file(dir / "qrels.tsv", qrels_text);

  write_corpus(load_corpus(dir / "corpus.jsonl"), dir / "corpus2.jsonl");
  write_queries(load_queries(dir / "queries.jsonl"), dir / "queries2.jsonl");
  write_qrels(load_qrels(dir / "qrels.tsv"), dir / "qrels2.tsv");
  CHECK(read_file(dir / "corpus2.jsonl") == corpus_text);
  CHECK(read_file(dir / "queries2.jsonl") == queries_text);
  CHECK(read_file(dir / "qrels2.tsv") == qrels_text);

  Rng rng(3);
  std::vector<Document> docs;
  for (int i = 0; i < 50; ++i) docs.push_back({"id" + std::to_string(i), i % 3 ? "" : "t", words(rng.index(20), "x")});
  Corpus c(std::move(docs), "mem");
  write_corpus(c, dir / "r1.jsonl");
  auto back = load_corpus(dir / "r1.jsonl");
  CHECK(back.docs() == c.docs());
  write_corpus(back, dir / "r2.jsonl");
  CHECK(read_file(dir / "r1.jsonl") == read_file(dir / "r2.jsonl"));
}

TEST_CASE("truncate_text keeps the first max_tokens tokens", "[corpus]") {
  auto long_text = words(400);
  auto cut = truncate_text(long_text, 350);
  CHECK(cut == words(350));
  CHECK(text::count_tokens(cut) == 350);

  std::string short_text = "  ten   tokens here\tand there a b c d e ";
  CHECK(truncate_text(short_text, 350) == short_text);

  auto exact = "  " + words(350) + "\n";
  CHECK(truncate_text(exact, 350) == exact);

  CHECK(truncate_text("a\xE2\x80\x83" "b c", 2) == "a b");  // U+2003 EM SPACE separates tokens
  CHECK_THROWS(truncate_text("x", 0));
}

TEST_CASE("truncate_text is idempotent", "[corpus][property]") {
  Rng rng(11);
  const char* seps[] = {" ", "  ", "\t", "\n", " \r\n"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string t;
    auto n = rng.index(30);
    for (std::size_t i = 0; i < n; ++i) t += std::string(seps[rng.index(5)]) + "tok" + std::to_string(rng.index(9));
    auto max = 1 + rng.index(20);
    auto once = truncate_text(t, max);
    CHECK(truncate_text(once, max) == once);
    CHECK(text::count_tokens(once) == std::min<std::size_t>(max, text::count_tokens(t)));
  }
}

TEST_CASE("sample_corpus caps, preserves order, and is deterministic", "[corpus][property]") {
  auto small = numbered_corpus(99);
  CHECK(sample_corpus(small, 100, 42).docs() == small.docs());

  auto big = numbered_corpus(150'000);
  auto a = sample_corpus(big, 100'000, 42);
  auto b = sample_corpus(big, 100'000, 42);
  CHECK(a.size() == 100'000);
  CHECK(a.docs() == b.docs());
  CHECK(sample_corpus(big, 100'000, 43).docs() != a.docs());

  CHECK(sample_corpus(small, 1, 5).size() == 1);
  CHECK_THROWS(sample_corpus(small, 0, 5));

  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto n = 1 + rng.index(200);
    auto cap = 1 + rng.index(250);
    auto c = numbered_corpus(n);
    auto s = sample_corpus(c, cap, rng.next());
    REQUIRE(s.size() == std::min(n, cap));
    std::size_t cursor = 0;
    for (const auto& d : s.docs()) {
      while (cursor < c.size() && c[cursor].doc_id != d.doc_id) ++cursor;
      REQUIRE(cursor < c.size());
      ++cursor;
    }
  }
}

TEST_CASE("sample_corpus draws every document with equal frequency", "[corpus][property]") {
  auto c = numbered_corpus(20);
  std::vector<int> hits(20, 0);
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    auto s = sample_corpus(c, 5, static_cast<std::uint64_t>(t));
    for (const auto& d : s.docs()) ++hits[std::stoi(d.doc_id.substr(1))];
  }
  // Expected 1000 per document; binomial sd is about 27.
  for (int h : hits) CHECK(std::abs(h - 1000) < 150);
}

TEST_CASE("Corpus rejects empty and duplicate ids", "[corpus]") {
  CHECK_THROWS(Corpus({{"", "", "x"}}, "mem"));
  CHECK_THROWS(Corpus({{"a", "", "x"}, {"a", "", "y"}}, "mem"));
}
