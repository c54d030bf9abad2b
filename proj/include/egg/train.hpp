#pragma once

// Dual-encoder training over base embeddings: a linear map per side, trained
// with in-batch-negative likelihood (DPR) or MarginMSE distillation (GPL).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "egg/corpus.hpp"
#include "egg/embed.hpp"
#include "egg/error.hpp"
#include "egg/http.hpp"
#include "egg/random.hpp"
#include "egg/synth.hpp"
#include "egg/text.hpp"

namespace egg {

enum class Objective { DPR, GPL };
enum class Side { Query, Doc };
enum class Optimizer { Sgd, Adam };
enum class EncoderInit { Identity, Random };

inline std::string_view to_string(Objective o) { return o == Objective::DPR ? "DPR" : "GPL"; }
inline Objective parse_objective(std::string_view s) {
  if (s == "DPR" || s == "dpr") return Objective::DPR;
  if (s == "GPL" || s == "gpl") return Objective::GPL;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}
inline std::string_view to_string(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }
inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "adam") return Optimizer::Adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}
inline std::string_view to_string(EncoderInit i) { return i == EncoderInit::Identity ? "identity" : "random"; }
inline EncoderInit parse_encoder_init(std::string_view s) {
  if (s == "identity") return EncoderInit::Identity;
  if (s == "random") return EncoderInit::Random;
  throw ConfigError("unknown encoder init '" + std::string(s) + "'");
}

// Query and document maps, each dims_base x dims_out. When tied, the query
// map serves both sides.
struct EncoderParams {
  Eigen::MatrixXd w_query;
  Eigen::MatrixXd w_doc;
  bool tied = false;
  Objective objective = Objective::DPR;
  std::uint64_t seed = 0;

  std::size_t dims_base() const { return static_cast<std::size_t>(w_query.rows()); }
  std::size_t dims_out() const { return static_cast<std::size_t>(w_query.cols()); }
  const Eigen::MatrixXd& weights(Side side) const { return side == Side::Query || tied ? w_query : w_doc; }
};

inline EncoderParams make_encoder(std::size_t dims_base, std::size_t dims_out, bool tied, EncoderInit init,
                                  std::uint64_t seed) {
  if (dims_base == 0 || dims_out == 0) throw ConfigError("encoder dims must be >= 1");
  EncoderParams p;
  p.tied = tied;
  p.seed = seed;
  auto fill = [&](Eigen::MatrixXd& w, std::uint64_t s) {
    w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dims_base), static_cast<Eigen::Index>(dims_out));
    if (init == EncoderInit::Identity) {
      for (std::size_t i = 0; i < std::min(dims_base, dims_out); ++i)
        w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 1.0;
    } else {
      // Gaussian projection scaled to preserve dot products in expectation.
      Rng rng(s);
      double scale = 1.0 / std::sqrt(static_cast<double>(dims_out));
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.normal() * scale;
    }
  };
  fill(p.w_query, seed);
  // Both sides start from the same map so initial scores approximate x_q . x_d.
  if (!tied) p.w_doc = p.w_query;
  return p;
}

// Square tied identity map: the untrained baseline.
inline EncoderParams identity_encoder(std::size_t dims) {
  return make_encoder(dims, dims, true, EncoderInit::Identity, 0);
}

// W_side^T x.
inline EmbeddingVector encode(const EncoderParams& params, std::span<const double> base, Side side) {
  if (base.size() != params.dims_base())
    throw PreconditionError("encode: base embedding has " + std::to_string(base.size()) + " dims, encoder expects " +
                            std::to_string(params.dims_base()));
  Eigen::Map<const Eigen::VectorXd> x(base.data(), static_cast<Eigen::Index>(base.size()));
  Eigen::VectorXd y = params.weights(side).transpose() * x;
  return EmbeddingVector(y.data(), y.data() + y.size());
}

struct DprScoreLoss {
  double loss = 0.0;
  Eigen::MatrixXd grad_scores;  // d loss / d S
};

// In-batch negative likelihood from a B x B score matrix whose diagonal
// holds the positives: -(1/B) sum_i log softmax(S_i)_i, max-stabilised.
inline DprScoreLoss dpr_loss_from_scores(const Eigen::MatrixXd& scores) {
  const Eigen::Index b = scores.rows();
  if (b < 1 || scores.cols() != b) throw PreconditionError("dpr_loss: score matrix must be square and non-empty");
  if (!scores.allFinite()) throw PreconditionError("dpr_loss: non-finite scores");
  DprScoreLoss out;
  out.grad_scores.resize(b, b);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    double mx = scores.row(i).maxCoeff();
    double denom = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) denom += std::exp(scores(i, j) - mx);
    double log_denom = std::log(denom);
    out.loss -= (scores(i, i) - mx - log_denom) * inv_b;
    for (Eigen::Index j = 0; j < b; ++j) {
      double p = std::exp(scores(i, j) - mx - log_denom);
      out.grad_scores(i, j) = (p - (i == j ? 1.0 : 0.0)) * inv_b;
    }
  }
  if (b == 1) out.loss = 0.0;
  return out;
}

struct DprLoss {
  double loss = 0.0;
  Eigen::MatrixXd grad_queries;  // B x d
  Eigen::MatrixXd grad_docs;     // B x d
};

// Rows of `queries` and `docs` are aligned positives; every other document
// in the batch is a negative.
inline DprLoss dpr_loss(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& docs) {
  if (queries.rows() < 1) throw PreconditionError("dpr_loss: empty batch");
  if (queries.rows() != docs.rows() || queries.cols() != docs.cols())
    throw PreconditionError("dpr_loss: query and document batches differ in shape");
  if (!queries.allFinite() || !docs.allFinite()) throw PreconditionError("dpr_loss: non-finite inputs");
  auto s = dpr_loss_from_scores(queries * docs.transpose());
  return {s.loss, s.grad_scores * docs, s.grad_scores.transpose() * queries};
}

struct MarginMseLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d student margin
};

inline MarginMseLoss margin_mse_loss(std::span<const double> student, std::span<const double> teacher) {
  if (student.empty() || student.size() != teacher.size())
    throw PreconditionError("margin_mse_loss: student and teacher margins must have equal non-zero length");
  MarginMseLoss out;
  out.grad.resize(student.size());
  const double b = static_cast<double>(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    double r = student[i] - teacher[i];
    out.loss += r * r / b;
    out.grad[i] = 2.0 * r / b;
  }
  return out;
}

// Teacher relevance scores for distillation.
class TeacherScorer {
 public:
  virtual ~TeacherScorer() = default;
  virtual std::vector<double> score(const std::string& query, const std::vector<std::string>& docs) = 0;
  virtual std::string describe() const = 0;
};

inline constexpr double kLexicalTeacherScale = 10.0;

inline double jaccard(std::string_view a, std::string_view b) {
  auto la = text::to_lower(a);
  auto lb = text::to_lower(b);
  auto ta = text::split_whitespace(la);
  auto tb = text::split_whitespace(lb);
  std::set<std::string_view> sa(ta.begin(), ta.end());
  std::set<std::string_view> sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (auto t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

// Token-set Jaccard scaled by kLexicalTeacherScale.
class LexicalTeacher final : public TeacherScorer {
 public:
  std::vector<double> score(const std::string& query, const std::vector<std::string>& docs) override {
    std::vector<double> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(kLexicalTeacherScale * jaccard(query, d));
    return out;
  }
  std::string describe() const override { return "lexical"; }
};

// Cross-encoder behind a rerank endpoint: POST /v1/rerank
// {model, query, documents} -> {results: [{index, relevance_score}]}.
class RemoteCrossEncoder final : public TeacherScorer {
 public:
  explicit RemoteCrossEncoder(RemoteEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

  std::vector<double> score(const std::string& query, const std::vector<std::string>& docs) override {
    auto response = post_json(endpoint_, "/v1/rerank",
                              {{"model", endpoint_.model}, {"query", query}, {"documents", docs}});
    std::vector<double> out(docs.size(), 0.0);
    std::vector<bool> filled(docs.size(), false);
    for (const auto& r : response.at("results")) {
      auto idx = r.at("index").get<std::size_t>();
      if (idx >= out.size()) throw BackendError("rerank response index out of range");
      out[idx] = r.contains("relevance_score") ? r["relevance_score"].get<double>() : r.at("score").get<double>();
      filled[idx] = true;
    }
    if (std::find(filled.begin(), filled.end(), false) != filled.end())
      throw BackendError("rerank response omitted documents");
    return out;
  }
  std::string describe() const override { return "remote:" + endpoint_.url; }

 private:
  RemoteEndpoint endpoint_;
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const std::vector<EmbeddingVector>& rows, std::size_t dims) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dims));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != dims) throw PreconditionError("base embedding dims mismatch");
    for (std::size_t c = 0; c < dims; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

inline Eigen::MatrixXd to_eigen(const EmbeddingMatrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.dims()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.dims(); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return out;
}

// Highest-scoring row other than `exclude`; ties by ascending doc_id.
inline std::size_t argmax_excluding(const Eigen::VectorXd& scores, std::size_t exclude,
                                    const std::vector<std::string>& doc_ids) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    if (i == exclude) continue;
    auto s = scores(static_cast<Eigen::Index>(i));
    if (!best) {
      best = i;
      continue;
    }
    auto bs = scores(static_cast<Eigen::Index>(*best));
    if (s > bs || (s == bs && doc_ids[i] < doc_ids[*best])) best = i;
  }
  return *best;
}

}  // namespace detail

// The document other than `pos_doc_id` that the current student ranks
// highest for the query, ties by ascending doc_id.
inline std::string mine_negative(std::span<const double> query_base, const std::string& pos_doc_id,
                                 const EmbeddingMatrix& doc_base, const EncoderParams& params) {
  if (doc_base.rows() < 2) throw PreconditionError("mine_negative: corpus needs at least 2 documents");
  auto q = encode(params, query_base, Side::Query);
  Eigen::Map<const Eigen::VectorXd> qv(q.data(), static_cast<Eigen::Index>(q.size()));
  Eigen::VectorXd scores = detail::to_eigen(doc_base) * (params.weights(Side::Doc) * qv);
  std::size_t pos = doc_base.rows();
  for (std::size_t i = 0; i < doc_base.rows(); ++i)
    if (doc_base.doc_id(i) == pos_doc_id) pos = i;
  return doc_base.doc_id(detail::argmax_excluding(scores, pos, doc_base.doc_ids()));
}

inline std::size_t epochs_for_corpus(std::size_t corpus_size) { return corpus_size > 60'000 ? 1 : 3; }

// lr_max * min(1, step / warmup), step counted from 1.
inline double warmup_lr(double lr_max, std::size_t step, std::size_t warmup_steps) {
  if (warmup_steps == 0) return lr_max;
  return lr_max * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

struct TrainConfig {
  std::size_t batch_size = 75;
  double learning_rate = 1e-2;
  std::size_t warmup_steps = 1000;
  std::optional<std::size_t> epochs;     // default: epochs_for_corpus
  std::optional<std::size_t> max_steps;  // stop early after this many updates
  std::uint64_t seed = 0;
  Objective objective = Objective::DPR;
  Optimizer optimizer = Optimizer::Sgd;
  std::size_t dims_out = 128;
  bool tied = false;
  EncoderInit init = EncoderInit::Random;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (objective == Objective::DPR && batch_size < 2)
      throw ConfigError("DPR needs batch_size >= 2 for in-batch negatives");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (epochs && *epochs < 1) throw ConfigError("epochs must be >= 1");
    if (dims_out < 1) throw ConfigError("dims_out must be >= 1");
  }
};

struct TrainLogEntry {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<TrainLogEntry> log;
};

namespace detail {

// Shuffled batches in which no document appears twice, so in-batch
// negatives are never copies of the positive.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& pair_doc, std::size_t batch_size,
                                                          Rng& rng) {
  std::vector<std::size_t> order(pair_doc.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<bool> taken(order.size(), false);
  std::vector<std::vector<std::size_t>> batches;
  std::size_t cursor = 0;
  while (cursor < order.size()) {
    std::vector<std::size_t> batch;
    std::unordered_set<std::size_t> docs;
    for (std::size_t k = cursor; k < order.size() && batch.size() < batch_size; ++k) {
      if (taken[k] || !docs.insert(pair_doc[order[k]]).second) continue;
      taken[k] = true;
      batch.push_back(order[k]);
    }
    while (cursor < order.size() && taken[cursor]) ++cursor;
    batches.push_back(std::move(batch));
  }
  return batches;
}

struct AdamState {
  Eigen::MatrixXd m, v;
};

}  // namespace detail

// Mini-batch training with linear warmup. Deterministic for a fixed seed.
inline TrainResult train_retriever(const std::vector<SyntheticPair>& pairs, const Corpus& corpus, Embedder& embedder,
                                   const TrainConfig& config, TeacherScorer* teacher = nullptr) {
  config.validate();
  if (pairs.empty()) throw PreconditionError("train_retriever: no training pairs");
  if (config.objective == Objective::GPL && !teacher)
    throw PreconditionError("train_retriever: GPL needs a teacher scorer");
  if (config.objective == Objective::GPL && corpus.size() < 2)
    throw PreconditionError("train_retriever: GPL negative mining needs at least 2 documents");

  std::vector<std::size_t> pair_doc(pairs.size());
  std::vector<std::string> query_texts(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto idx = corpus.find(pairs[i].doc_id);
    if (!idx) throw PreconditionError("train_retriever: pair " + std::to_string(i) + " references unknown doc '" +
                                      pairs[i].doc_id + "'");
    pair_doc[i] = *idx;
    query_texts[i] = pairs[i].query;
  }
  const std::size_t dims = embedder.dims();
  Eigen::MatrixXd xq = detail::to_eigen(embedder.embed_batch(query_texts), dims);
  auto doc_matrix = embed_corpus(corpus, embedder);
  Eigen::MatrixXd xd = detail::to_eigen(doc_matrix);

  TrainResult result;
  auto& p = result.params;
  p = make_encoder(dims, config.dims_out, config.tied, config.init, config.seed);
  p.objective = config.objective;

  std::map<std::pair<std::size_t, std::size_t>, double> teacher_cache;
  auto teacher_score = [&](std::size_t pair, std::size_t doc) {
    auto key = std::make_pair(pair, doc);
    if (auto it = teacher_cache.find(key); it != teacher_cache.end()) return it->second;
    double s = teacher->score(pairs[pair].query, {corpus[doc].prompt_text()}).front();
    teacher_cache.emplace(key, s);
    return s;
  };

  detail::AdamState adam_q, adam_d;
  auto apply = [&](Eigen::MatrixXd& w, const Eigen::MatrixXd& g, detail::AdamState& st, double lr, std::size_t t) {
    if (config.optimizer == Optimizer::Sgd) {
      w -= lr * g;
      return;
    }
    if (st.m.size() == 0) {
      st.m = Eigen::MatrixXd::Zero(w.rows(), w.cols());
      st.v = Eigen::MatrixXd::Zero(w.rows(), w.cols());
    }
    st.m = config.adam_beta1 * st.m + (1.0 - config.adam_beta1) * g;
    st.v = config.adam_beta2 * st.v + (1.0 - config.adam_beta2) * g.cwiseProduct(g);
    double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(t));
    w.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + config.adam_eps);
  };

  const std::size_t epochs = config.epochs.value_or(epochs_for_corpus(corpus.size()));
  const std::size_t min_batch = config.objective == Objective::DPR ? 2 : 1;
  Rng rng(config.seed);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (const auto& batch : detail::make_batches(pair_doc, config.batch_size, rng)) {
      if (config.max_steps && step >= *config.max_steps) return result;
      if (batch.size() < min_batch) continue;
      const auto b = static_cast<Eigen::Index>(batch.size());
      Eigen::MatrixXd bq(b, xq.cols()), bd(b, xd.cols());
      for (Eigen::Index r = 0; r < b; ++r) {
        bq.row(r) = xq.row(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(r)]));
        bd.row(r) = xd.row(static_cast<Eigen::Index>(pair_doc[batch[static_cast<std::size_t>(r)]]));
      }
      const Eigen::MatrixXd& wd = p.weights(Side::Doc);
      Eigen::MatrixXd q = bq * p.w_query;
      double loss = 0.0;
      Eigen::MatrixXd grad_wq, grad_wd;
      if (config.objective == Objective::DPR) {
        auto l = dpr_loss(q, bd * wd);
        loss = l.loss;
        grad_wq = bq.transpose() * l.grad_queries;
        grad_wd = bd.transpose() * l.grad_docs;
      } else {
        Eigen::MatrixXd encoded_docs = xd * wd;
        Eigen::MatrixXd bn(b, xd.cols());
        std::vector<double> student(batch.size()), target(batch.size());
        for (Eigen::Index r = 0; r < b; ++r) {
          auto pair = batch[static_cast<std::size_t>(r)];
          Eigen::VectorXd scores = encoded_docs * q.row(r).transpose();
          auto neg = detail::argmax_excluding(scores, pair_doc[pair], doc_matrix.doc_ids());
          bn.row(r) = xd.row(static_cast<Eigen::Index>(neg));
          student[static_cast<std::size_t>(r)] =
              scores(static_cast<Eigen::Index>(pair_doc[pair])) - scores(static_cast<Eigen::Index>(neg));
          target[static_cast<std::size_t>(r)] = teacher_score(pair, pair_doc[pair]) - teacher_score(pair, neg);
        }
        auto l = margin_mse_loss(student, target);
        loss = l.loss;
        Eigen::Map<const Eigen::VectorXd> gm(l.grad.data(), b);
        Eigen::MatrixXd dpos = bd * wd, dneg = bn * wd;
        Eigen::MatrixXd grad_q = gm.asDiagonal() * (dpos - dneg);
        Eigen::MatrixXd grad_pos = gm.asDiagonal() * q;
        grad_wq = bq.transpose() * grad_q;
        grad_wd = bd.transpose() * grad_pos - bn.transpose() * grad_pos;
      }
      ++step;
      if (!std::isfinite(loss)) throw Error("training diverged: non-finite loss at step " + std::to_string(step));
      double lr = warmup_lr(config.learning_rate, step, config.warmup_steps);
      result.log.push_back({step, epoch, lr, loss});
      if (p.tied) {
        apply(p.w_query, grad_wq + grad_wd, adam_q, lr, step);
      } else {
        apply(p.w_query, grad_wq, adam_q, lr, step);
        apply(p.w_doc, grad_wd, adam_d, lr, step);
      }
      if (!p.w_query.allFinite() || (!p.tied && !p.w_doc.allFinite()))
        throw Error("training diverged: non-finite weights after step " + std::to_string(step));
    }
  }
  return result;
}

// Float32 little-endian weights (query map, then document map unless tied),
// row-major dims_base x dims_out, with a JSON sidecar.
inline void save_encoder(const EncoderParams& p, const std::filesystem::path& bin) {
  {
    auto out = detail::open_output(bin);
    auto write = [&](const Eigen::MatrixXd& w) {
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) detail::write_f32_le(out, w(r, c));
    };
    write(p.w_query);
    if (!p.tied) write(p.w_doc);
  }
  nlohmann::ordered_json side;
  side["dims_base"] = p.dims_base();
  side["dims_out"] = p.dims_out();
  side["tied"] = p.tied;
  side["objective"] = to_string(p.objective);
  side["seed"] = p.seed;
  detail::write_json_file(side, sidecar_path(bin));
}

inline EncoderParams load_encoder(const std::filesystem::path& bin) {
  auto side = detail::read_json_file(sidecar_path(bin));
  EncoderParams p;
  auto base = side.at("dims_base").get<std::size_t>();
  auto out = side.at("dims_out").get<std::size_t>();
  p.tied = side.at("tied").get<bool>();
  p.objective = parse_objective(side.at("objective").get<std::string>());
  p.seed = side.at("seed").get<std::uint64_t>();
  auto values = detail::read_f32_le(bin, base * out * (p.tied ? 1 : 2));
  auto read = [&](Eigen::MatrixXd& w, std::size_t offset) {
    w.resize(static_cast<Eigen::Index>(base), static_cast<Eigen::Index>(out));
    for (std::size_t r = 0; r < base; ++r)
      for (std::size_t c = 0; c < out; ++c)
        w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[offset + r * out + c];
  };
  read(p.w_query, 0);
  if (!p.tied) read(p.w_doc, base * out);
  return p;
}

inline void write_train_log(const std::vector<TrainLogEntry>& log, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "step,lr,loss\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", e.step, e.lr, e.loss);
    out << buf;
  }
}

}  // namespace egg
