#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "checks.hpp"
#include "egg/train.hpp"
#include "oracles.hpp"

using namespace egg;
using Catch::Approx;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Two topical clusters whose queries share vocabulary with their documents.
struct TwoClusters {
  Corpus corpus;
  std::vector<SyntheticPair> pairs;
};

TwoClusters two_clusters() {
  const std::vector<std::string> a = {"river", "boat", "water", "fish", "bank", "stream"};
  const std::vector<std::string> b = {"planet", "orbit", "star", "moon", "comet", "space"};
  std::vector<Document> docs;
  std::vector<SyntheticPair> pairs;
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    const auto& words = i % 2 ? b : a;
    std::string text;
    for (int k = 0; k < 8; ++k) text += words[rng.index(words.size())] + " ";
    text += "doc" + std::to_string(i);
    docs.push_back({"d" + std::to_string(i), "", text});
    for (int q = 0; q < 4; ++q)
      pairs.push_back({"d" + std::to_string(i), words[rng.index(6)] + " " + words[rng.index(6)] + " doc" + std::to_string(i),
                       PairSource::FlanMeta, "t"});
  }
  return {Corpus(std::move(docs), "mem"), std::move(pairs)};
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 8;
  c.learning_rate = 1e-2;
  c.warmup_steps = 10;
  c.optimizer = Optimizer::Adam;
  c.init = EncoderInit::Identity;
  c.dims_out = 64;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("encode applies the transposed map", "[train]") {
  auto id = identity_encoder(4);
  std::vector<double> x{1.5, -2, 0, 3};
  CHECK(encode(id, x, Side::Query) == x);
  CHECK(encode(id, x, Side::Doc) == x);

  auto zero = make_encoder(4, 3, false, EncoderInit::Identity, 0);
  zero.w_query.setZero();
  for (double v : encode(zero, x, Side::Query)) CHECK(v == 0.0);
  CHECK_THROWS(encode(id, std::vector<double>{1, 2}, Side::Query));

  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    auto base = 1 + rng.index(20), out = 1 + rng.index(20);
    auto p = make_encoder(base, out, t % 2 == 0, EncoderInit::Random, rng.next());
    std::vector<std::vector<double>> w(base, std::vector<double>(out));
    for (std::size_t r = 0; r < base; ++r)
      for (std::size_t c = 0; c < out; ++c) w[r][c] = p.weights(Side::Doc)(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    auto xb = random_vec(rng, base);
    auto got = encode(p, xb, Side::Doc);
    auto want = oracle::matvec_t(w, xb);
    for (std::size_t i = 0; i < out; ++i) CHECK(std::fabs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("tied encoders share one map; untied ones start equal", "[train]") {
  auto tied = make_encoder(5, 3, true, EncoderInit::Random, 9);
  CHECK(&tied.weights(Side::Query) == &tied.weights(Side::Doc));
  auto untied = make_encoder(5, 3, false, EncoderInit::Random, 9);
  CHECK(untied.w_query == untied.w_doc);
  CHECK(untied.w_query == tied.w_query);
  CHECK_THROWS_AS(make_encoder(0, 3, false, EncoderInit::Random, 1), ConfigError);
}

TEST_CASE("DPR loss closed forms", "[train]") {
  Eigen::MatrixXd one(1, 3);
  one << 0.3, -1, 2;
  auto single = dpr_loss(one, one);
  CHECK(single.loss == 0.0);
  CHECK(single.grad_queries.isZero());

  Eigen::MatrixXd e = Eigen::MatrixXd::Identity(2, 2);
  CHECK(dpr_loss(e, e).loss == Approx(std::log(1.0 + std::exp(-1.0))).margin(1e-9));
  CHECK(dpr_loss(e, e).loss == Approx(0.313262).margin(1e-6));

  Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(4, 3);
  CHECK(dpr_loss(zeros, zeros).loss == Approx(std::log(4.0)).margin(1e-9));
  CHECK(dpr_loss(zeros.topRows(2), zeros.topRows(2)).loss == Approx(std::log(2.0)).margin(1e-9));

  CHECK_THROWS(dpr_loss(Eigen::MatrixXd(0, 2), Eigen::MatrixXd(0, 2)));
  CHECK_THROWS(dpr_loss(e, Eigen::MatrixXd::Identity(3, 3)));
}

TEST_CASE("DPR loss is stable for large scores", "[train]") {
  Eigen::MatrixXd s(2, 2);
  s << 1000, 0, 0, 1000;
  auto l = dpr_loss_from_scores(s);
  CHECK(std::isfinite(l.loss));
  CHECK(l.loss == Approx(0.0).margin(1e-12));
}

TEST_CASE("DPR gradients match central differences", "[train][property]") {
  CHECK(checks::dpr_gradient_error(101, 100) < 1e-4);
}

TEST_CASE("MarginMSE gradients match central differences", "[train][property]") {
  CHECK(checks::margin_mse_gradient_error(202, 100) < 1e-4);
}

TEST_CASE("DPR loss is non-negative and invariant to row shifts of the scores", "[train][property]") {
  Rng rng(15);
  for (int t = 0; t < 100; ++t) {
    auto b = 1 + rng.index(8);
    auto s = checks::random_matrix(rng, b, b);
    auto base = dpr_loss_from_scores(s);
    CHECK(base.loss >= 0.0);
    Eigen::MatrixXd shifted = s;
    for (Eigen::Index r = 0; r < s.rows(); ++r) shifted.row(r).array() += 5.0 * rng.normal();
    CHECK(dpr_loss_from_scores(shifted).loss == Approx(base.loss).margin(1e-9));
  }
}

TEST_CASE("MarginMSE examples and shift invariance", "[train]") {
  std::vector<double> a{0.5, -2}, z{0}, o{1};
  CHECK(margin_mse_loss(a, a).loss == 0.0);
  CHECK(margin_mse_loss(z, o).loss == 1.0);
  CHECK(margin_mse_loss(std::vector<double>{1, 1}, std::vector<double>{2, 0}).loss == 1.0);
  CHECK_THROWS(margin_mse_loss(std::vector<double>{}, std::vector<double>{}));
  CHECK_THROWS(margin_mse_loss(a, z));

  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    auto s = random_vec(rng, 1 + rng.index(8));
    auto tt = random_vec(rng, s.size());
    double c = rng.normal();
    auto s2 = s, t2 = tt;
    for (auto& v : s2) v += c;
    for (auto& v : t2) v += c;
    CHECK(margin_mse_loss(s2, t2).loss == Approx(margin_mse_loss(s, tt).loss).margin(1e-9));
  }
}

TEST_CASE("jaccard teacher scores token overlap", "[train]") {
  CHECK(jaccard("a b c", "b c d") == Approx(0.5));
  CHECK(jaccard("A b", "a B") == 1.0);
  CHECK(jaccard("", "") == 0.0);
  LexicalTeacher t;
  CHECK(t.score("a b", {"a b", "c"}) == std::vector<double>{10.0, 0.0});
}

TEST_CASE("mine_negative picks the best-scoring non-positive document", "[train]") {
  EmbeddingMatrix docs(2);
  docs.push_back("pos", std::vector<double>{1, 0});
  docs.push_back("neg", std::vector<double>{0, 1});
  auto id = identity_encoder(2);
  CHECK(mine_negative(std::vector<double>{1, 0}, "pos", docs, id) == "neg");

  EmbeddingMatrix three(2);
  three.push_back("c", std::vector<double>{1, 1});
  three.push_back("a", std::vector<double>{1, 1});
  three.push_back("b", std::vector<double>{1, 1});
  CHECK(mine_negative(std::vector<double>{1, 1}, "a", three, id) == "b");
  CHECK(mine_negative(std::vector<double>{1, 1}, "b", three, id) == "a");

  EmbeddingMatrix lone(2);
  lone.push_back("x", std::vector<double>{1, 0});
  CHECK_THROWS(mine_negative(std::vector<double>{1, 0}, "x", lone, id));
}

TEST_CASE("epoch count depends on corpus size", "[train]") {
  CHECK(epochs_for_corpus(100000) == 1);
  CHECK(epochs_for_corpus(60001) == 1);
  CHECK(epochs_for_corpus(60000) == 3);
  CHECK(epochs_for_corpus(5000) == 3);
}

TEST_CASE("learning rate warms up linearly", "[train]") {
  CHECK(warmup_lr(2e-5, 1, 1000) == 2e-5 * 1.0 / 1000.0);
  CHECK(warmup_lr(2e-5, 500, 1000) == 2e-5 * 0.5);
  CHECK(warmup_lr(2e-5, 1000, 1000) == 2e-5);
  CHECK(warmup_lr(2e-5, 5000, 1000) == 2e-5);
  CHECK(warmup_lr(0.1, 1, 0) == 0.1);
}

TEST_CASE("batches cover every pair once and never repeat a document", "[train][property]") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::size_t> pair_doc(1 + rng.index(200));
    auto docs = 1 + rng.index(30);
    for (auto& d : pair_doc) d = rng.index(docs);
    auto size = 1 + rng.index(16);
    Rng shuffle(rng.next());
    auto batches = detail::make_batches(pair_doc, size, shuffle);
    std::vector<int> seen(pair_doc.size(), 0);
    for (const auto& b : batches) {
      CHECK(!b.empty());
      CHECK(b.size() <= size);
      std::unordered_set<std::size_t> in_batch;
      for (auto i : b) {
        ++seen[i];
        CHECK(in_batch.insert(pair_doc[i]).second);
      }
    }
    for (int s : seen) CHECK(s == 1);
  }
}

TEST_CASE("train config validation", "[train]") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.objective = Objective::GPL;
  CHECK_NOTHROW(c.validate());
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("train_retriever rejects bad inputs", "[train]") {
  auto data = two_clusters();
  HashEmbedder h(64);
  CHECK_THROWS_AS(train_retriever({}, data.corpus, h, small_config()), PreconditionError);
  auto gpl = small_config();
  gpl.objective = Objective::GPL;
  CHECK_THROWS_AS(train_retriever(data.pairs, data.corpus, h, gpl), PreconditionError);
  auto bad = data.pairs;
  bad.push_back({"missing", "q", PairSource::FlanMeta, "t"});
  CHECK_THROWS_WITH(train_retriever(bad, data.corpus, h, small_config()), Catch::Matchers::ContainsSubstring("missing"));
}

TEST_CASE("training is bit-identical for a fixed seed", "[train]") {
  auto data = two_clusters();
  HashEmbedder h(64);
  auto cfg = small_config();
  cfg.init = EncoderInit::Random;
  auto a = train_retriever(data.pairs, data.corpus, h, cfg);
  auto b = train_retriever(data.pairs, data.corpus, h, cfg);
  CHECK(a.params.w_query == b.params.w_query);
  CHECK(a.params.w_doc == b.params.w_doc);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
  cfg.seed = 4;
  CHECK(train_retriever(data.pairs, data.corpus, h, cfg).params.w_query != a.params.w_query);
}

TEST_CASE("DPR training lowers the loss on separable data", "[train]") {
  auto data = two_clusters();
  HashEmbedder h(64);
  auto cfg = small_config();
  cfg.epochs = 100;
  cfg.max_steps = 200;
  auto r = train_retriever(data.pairs, data.corpus, h, cfg);
  REQUIRE(r.log.size() == 200);
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += r.log[i].loss;
    return s / static_cast<double>(to - from);
  };
  CHECK(mean(180, 200) < 0.5 * mean(0, 20));
  CHECK(r.log.front().lr == Approx(cfg.learning_rate / 10.0));
  CHECK(r.log.back().lr == cfg.learning_rate);
}

TEST_CASE("GPL training with the lexical teacher runs and lowers the loss", "[train]") {
  auto data = two_clusters();
  HashEmbedder h(64);
  auto cfg = small_config();
  cfg.objective = Objective::GPL;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 20;
  LexicalTeacher teacher;
  auto r = train_retriever(data.pairs, data.corpus, h, cfg, &teacher);
  REQUIRE(r.log.size() > 20);
  CHECK(r.params.objective == Objective::GPL);
  for (const auto& e : r.log) CHECK(std::isfinite(e.loss));
  CHECK(r.log.back().loss < r.log.front().loss);
}

TEST_CASE("encoders and logs persist", "[train]") {
  oracle::TempDir dir("encoder");
  for (bool tied : {false, true}) {
    auto p = make_encoder(6, 4, tied, EncoderInit::Random, 11);
    p.objective = Objective::GPL;
    save_encoder(p, dir / "enc.bin");
    CHECK(std::filesystem::file_size(dir / "enc.bin") == (tied ? 1u : 2u) * 6 * 4 * 4);
    auto back = load_encoder(dir / "enc.bin");
    CHECK(back.tied == tied);
    CHECK(back.objective == Objective::GPL);
    CHECK(back.seed == 11);
    CHECK(back.w_query == p.w_query.cast<float>().cast<double>());
  }
  write_train_log({{1, 0, 0.5, 2.25}, {2, 0, 1.0, 1.5}}, dir / "log.csv");
  std::ifstream in(dir / "log.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "step,lr,loss\n1,0.5,2.25\n2,1,1.5\n");
}
