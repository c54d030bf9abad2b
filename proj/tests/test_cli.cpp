#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "egg/config.hpp"
#include "egg/pipeline.hpp"
#include "oracles.hpp"

using namespace egg;
using Catch::Matchers::ContainsSubstring;

namespace {

struct Outcome {
  int status = -1;
  std::string output;
};

// Runs the CLI through the shell with stderr folded into the captured output.
Outcome egg_cli(const std::string& args) {
  std::string cmd = std::string(EGG_CLI_PATH) + " " + args + " 2>&1";
  Outcome out;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.output.append(buf.data(), n);
  int raw = ::pclose(pipe);
  out.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

const std::vector<std::string> kArtifacts = {"corpus/corpus.jsonl", "synthetic.jsonl", "encoder.bin", "encoder.json",
                                             "train_log.csv", "report.json"};

}  // namespace

TEST_CASE("preset paper resolves its fixed constants", "[cli][config]") {
  auto c = parse_config(resolve_config_json({}, {{"preset", "paper"}}));
  CHECK(c.temperature == 1.0);
  CHECK(c.top_k == 25);
  CHECK(c.top_p == 0.95);
  CHECK(c.num_queries == 8);
  CHECK(c.num_examples == 4);
  CHECK(c.sample_cap == 100000);
  CHECK(c.max_tokens == 350);
  CHECK(c.train.batch_size == 75);
  CHECK(c.train.learning_rate == 2e-5);
  CHECK(c.train.warmup_steps == 1000);
  CHECK(!c.train.epochs);
  CHECK(c.train.objective == Objective::DPR);
}

TEST_CASE("desk preset and overrides layer on the defaults", "[cli][config]") {
  auto desk = parse_config(resolve_config_json({}, {}));
  CHECK(desk.preset == "desk");
  CHECK(desk.num_queries == 4);
  CHECK(desk.train.optimizer == Optimizer::Adam);
  auto file = nlohmann::ordered_json{{"generation", {{"num_queries", 6}}}};
  auto over = nlohmann::ordered_json{{"generation", {{"num_queries", 2}}}, {"seed", 9}};
  auto c = parse_config(resolve_config_json(file, over));
  CHECK(c.num_queries == 2);
  CHECK(c.seed == 9);
  CHECK(c.num_examples == 2);
  CHECK(parse_config(resolve_config_json(file, {})).num_queries == 6);
}

TEST_CASE("unknown configuration keys are rejected", "[cli][config]") {
  CHECK_THROWS_AS(resolve_config_json({{"train", {{"lr", 1}}}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_config_json({{"bogus", 1}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_config_json({{"preset", "huge"}}, {}), ConfigError);
  CHECK_THROWS_AS(parse_config(resolve_config_json({{"generation", {{"mode", "nope"}}}}, {})), ConfigError);

  oracle::TempDir dir("cli-badcfg");
  std::ofstream(dir / "c.json") << R"({"train": {"learning_rte": 0.1}})";
  auto r = egg_cli("ingest --config " + quoted(dir / "c.json") + " --run-dir " + quoted(dir / "run"));
  CHECK(r.status == 2);
  CHECK_THAT(r.output, ContainsSubstring("learning_rte"));
  CHECK(!std::filesystem::exists(dir / "run" / "corpus"));
}

TEST_CASE("GPL without a teacher is a configuration error raised before any work", "[cli]") {
  oracle::TempDir dir("cli-gpl");
  auto run = quoted(dir / "run");
  REQUIRE(egg_cli("ingest --run-dir " + run).status == 0);
  REQUIRE(egg_cli("gen-queries --run-dir " + run).status == 0);
  auto r = egg_cli("train --objective GPL --run-dir " + run);
  CHECK(r.status == 2);
  CHECK_THAT(r.output, ContainsSubstring("teacher"));
  CHECK(!std::filesystem::exists(dir / "run" / "encoder.bin"));

  CHECK(egg_cli("train --objective GPL --teacher lexical --max-steps 5 --run-dir " + run).status == 0);
  CHECK(std::filesystem::exists(dir / "run" / "encoder.bin"));
}

TEST_CASE("llama-icl generation needs the prototype stage", "[cli]") {
  oracle::TempDir dir("cli-icl");
  auto run = quoted(dir / "run");
  REQUIRE(egg_cli("ingest --run-dir " + run).status == 0);
  auto r = egg_cli("gen-queries --mode llama-icl --run-dir " + run);
  CHECK(r.status == 1);
  CHECK_THAT(r.output, ContainsSubstring("gen-prototypes"));

  REQUIRE(egg_cli("gen-prototypes --run-dir " + run).status == 0);
  CHECK(egg_cli("gen-queries --mode llama-icl --run-dir " + run).status == 0);
  CHECK(std::filesystem::exists(dir / "run" / "embeddings.bin"));
}

TEST_CASE("run-all is reproducible and equals the stages run by hand", "[cli]") {
  oracle::TempDir dir("cli-runall");
  for (const char* name : {"a", "b"}) REQUIRE(egg_cli("run-all --seed 7 --run-dir " + quoted(dir / name)).status == 0);
  auto manual = quoted(dir / "m");
  for (const char* stage : {"ingest", "gen-queries", "train", "eval"})
    REQUIRE(egg_cli(std::string(stage) + " --seed 7 --run-dir " + manual).status == 0);
  for (const auto& f : kArtifacts) {
    INFO(f);
    auto a = slurp(dir / "a" / f);
    CHECK(!a.empty());
    CHECK(a == slurp(dir / "b" / f));
    CHECK(a == slurp(dir / "m" / f));
  }
}

TEST_CASE("the manifest hashes every artifact and replays as a config", "[cli]") {
  oracle::TempDir dir("cli-manifest");
  REQUIRE(egg_cli("run-all --seed 3 --num-queries 2 --run-dir " + quoted(dir / "a")).status == 0);
  auto manifest = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  for (const char* stage : {"ingest", "gen-queries", "train", "eval"}) {
    INFO(stage);
    REQUIRE(manifest["stages"].contains(stage));
    const auto& outputs = manifest["stages"][stage]["outputs"];
    CHECK(!outputs.empty());
    for (const auto& o : outputs) {
      auto path = dir / "a" / o["path"].get<std::string>();
      FILE* p = ::popen(("sha256sum " + quoted(path)).c_str(), "r");
      REQUIRE(p != nullptr);
      char hex[65] = {};
      REQUIRE(std::fread(hex, 1, 64, p) == 64);
      ::pclose(p);
      CHECK(o["sha256"] == std::string(hex));
    }
  }
  CHECK(manifest["config"]["seed"] == 3);
  CHECK(manifest["config"]["generation"]["num_queries"] == 2);

  REQUIRE(egg_cli("run-all --config " + quoted(dir / "a" / "manifest.json") + " --run-dir " + quoted(dir / "b")).status ==
          0);
  CHECK(slurp(dir / "a" / "synthetic.jsonl") == slurp(dir / "b" / "synthetic.jsonl"));
  CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));
}

TEST_CASE("eval writes the baseline and per-query reports separately", "[cli]") {
  oracle::TempDir dir("cli-eval");
  auto run = quoted(dir / "run");
  REQUIRE(egg_cli("run-all --run-dir " + run).status == 0);
  REQUIRE(egg_cli("eval --baseline --per-query --run-dir " + run).status == 0);
  auto trained = nlohmann::json::parse(slurp(dir / "run" / "report.json"));
  auto baseline = nlohmann::json::parse(slurp(dir / "run" / "report_baseline.json"));
  CHECK(trained["ndcg_at_k"].get<double>() > baseline["ndcg_at_k"].get<double>());
  auto tsv = slurp(dir / "run" / "per_query_baseline.tsv");
  CHECK(tsv.starts_with("query_id\tndcg\n"));
}

TEST_CASE("make-toy reproduces the bundled task and export writes BeIR files", "[cli]") {
  oracle::TempDir dir("cli-toy");
  REQUIRE(egg_cli("make-toy --out " + quoted(dir / "toy")).status == 0);
  std::filesystem::path bundled = EGG_TOY_DATA_DIR;
  for (const char* f : {"corpus.jsonl", "queries.jsonl", "qrels/test.tsv"}) CHECK(slurp(dir / "toy" / f) == slurp(bundled / f));

  auto run = quoted(dir / "run");
  REQUIRE(egg_cli("ingest --data " + quoted(dir / "toy") + " --run-dir " + run).status == 0);
  REQUIRE(egg_cli("gen-queries --run-dir " + run).status == 0);
  REQUIRE(egg_cli("export --out " + quoted(dir / "beir") + " --run-dir " + run).status == 0);
  auto q = load_queries(dir / "beir" / "queries.jsonl");
  CHECK(q.size() == 200 * 4);
  CHECK(std::filesystem::exists(dir / "beir" / "qrels" / "train.tsv"));
}

TEST_CASE("usage errors and missing inputs report failure", "[cli]") {
  CHECK(egg_cli("").status != 0);
  CHECK(egg_cli("train --lr").status != 0);
  oracle::TempDir dir("cli-missing");
  auto r = egg_cli("train --run-dir " + quoted(dir / "empty"));
  CHECK(r.status == 1);
  CHECK_THAT(r.output, ContainsSubstring("train"));
  CHECK(egg_cli("--version").output.find(EGG_VERSION) != std::string::npos);
}
