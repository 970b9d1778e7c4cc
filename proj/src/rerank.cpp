#include "todrr/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "todrr/error.hpp"
#include "todrr/metrics.hpp"
#include "todrr/random.hpp"

namespace todrr::rerank {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::classification: return "classification";
    case Method::knn: return "knn";
    case Method::greedy_passthrough: return "greedy_passthrough";
    case Method::oracle_max: return "oracle_max";
    case Method::oracle_min: return "oracle_min";
    case Method::random: return "random";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "classification" || s == "class") return Method::classification;
  if (s == "knn") return Method::knn;
  if (s == "greedy_passthrough" || s == "greedy") return Method::greedy_passthrough;
  if (s == "oracle_max" || s == "oracle-max") return Method::oracle_max;
  if (s == "oracle_min" || s == "oracle-min") return Method::oracle_min;
  if (s == "random") return Method::random;
  throw UsageError("unknown rerank method \"" + std::string(s) + "\"");
}

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("argmax over an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::size_t argmin_lowest(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("argmin over an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] < scores[best]) best = i;
  }
  return best;
}

RerankResult rerank_classification(const encoder::Model& model, const corpus::Context& c,
                                   std::span<const std::string> cands) {
  if (cands.empty()) throw UsageError("rerank needs at least one candidate");
  RerankResult r;
  r.method = Method::classification;
  r.scores.reserve(cands.size());
  for (const auto& cand : cands) {
    const auto p = model.config.mode == encoder::Mode::bi ? encoder::biencoder_classify(model, c, cand)
                                                          : encoder::classify(model, c, cand);
    r.scores.push_back(p[1]);
  }
  r.chosen_index = argmax_lowest(r.scores);
  return r;
}

double AnchorPool::positive_fraction() const {
  if (labels.empty()) return 0.0;
  return static_cast<double>(std::count(labels.begin(), labels.end(), 1)) / static_cast<double>(labels.size());
}

AnchorPool build_anchor_pool(const encoder::Model& model, std::span<const LabeledExample> examples,
                             std::size_t n_anchors, std::uint64_t seed) {
  if (n_anchors == 0) throw UsageError("n_anchors must be >= 1");
  if (examples.size() < n_anchors) {
    throw DataError("anchor pool of " + std::to_string(n_anchors) + " requested from only " +
                    std::to_string(examples.size()) + " examples");
  }
  std::vector<std::size_t> picks;
  bool both = false;
  for (std::size_t attempt = 0; attempt < kAnchorRetries && !both; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    picks = rng.sample(examples.size(), n_anchors);
    bool pos = false, neg = false;
    for (std::size_t i : picks) (examples[i].label == 1 ? pos : neg) = true;
    both = pos && neg;
  }
  if (!both) throw DataError("anchor sample lacks one of the labels after retries");
  AnchorPool pool;
  for (std::size_t i : picks) {
    const auto& e = examples[i];
    pool.encodings.push_back(encoder::encode_for_similarity(model, e.context, e.response));
    pool.labels.push_back(e.label);
    pool.context_ids.push_back(e.context.context_id);
    pool.response_hashes.push_back(metrics::fnv1a64(e.response));
  }
  return pool;
}

Json to_json(const AnchorPool& pool) {
  Json anchors = Json::array();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& e = pool.encodings[i];
    anchors.push_back(Json{{"context_id", pool.context_ids[i]},
                           {"response_hash", pool.response_hashes[i]},
                           {"label", pool.labels[i]},
                           {"encoding", std::vector<double>(e.data(), e.data() + e.size())}});
  }
  return Json{{"format_version", 1}, {"anchors", anchors}};
}

AnchorPool anchor_pool_from_json(const Json& j) {
  AnchorPool pool;
  const Json& anchors = require(j, "anchors");
  if (!anchors.is_array() || anchors.empty()) throw DataError("anchor pool is empty");
  for (const auto& a : anchors) {
    const auto enc = require(a, "encoding").get<std::vector<double>>();
    pool.encodings.push_back(Eigen::Map<const Eigen::VectorXd>(enc.data(), static_cast<Eigen::Index>(enc.size())));
    pool.labels.push_back(require(a, "label").get<int>());
    pool.context_ids.push_back(require_string(a, "context_id"));
    pool.response_hashes.push_back(require(a, "response_hash").get<std::uint64_t>());
    if (pool.encodings.back().size() != pool.encodings.front().size()) {
      throw DataError("anchor encodings have inconsistent dimensions");
    }
  }
  return pool;
}

KnnScore knn_score_detail(const AnchorPool& pool, const Eigen::VectorXd& e, std::size_t k) {
  if (k == 0 || k > pool.size()) {
    throw UsageError("k=" + std::to_string(k) + " outside [1, " + std::to_string(pool.size()) + "]");
  }
  const double en = e.norm();
  std::vector<double> sims(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double an = pool.encodings[i].norm();
    sims[i] = (en == 0.0 || an == 0.0) ? 0.0 : e.dot(pool.encodings[i]) / (en * an);
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
  std::size_t positives = 0;
  double pos_sim = 0.0;
  for (std::size_t n = 0; n < k; ++n) {
    if (pool.labels[order[n]] == 1) {
      ++positives;
      pos_sim += sims[order[n]];
    }
  }
  KnnScore s;
  s.score = static_cast<double>(positives) / static_cast<double>(k);
  s.positive_similarity = positives == 0 ? 0.0 : pos_sim / static_cast<double>(positives);
  return s;
}

double knn_score(const AnchorPool& pool, const Eigen::VectorXd& e, std::size_t k) {
  return knn_score_detail(pool, e, k).score;
}

RerankResult rerank_knn(const encoder::Model& model, const AnchorPool& pool, const corpus::Context& c,
                        std::span<const std::string> cands, std::size_t k) {
  if (cands.empty()) throw UsageError("rerank needs at least one candidate");
  RerankResult r;
  r.method = Method::knn;
  std::vector<double> tie_break;
  for (const auto& cand : cands) {
    const KnnScore s = knn_score_detail(pool, encoder::encode_for_similarity(model, c, cand), k);
    r.scores.push_back(s.score);
    tie_break.push_back(s.positive_similarity);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < cands.size(); ++i) {
    if (r.scores[i] > r.scores[best] || (r.scores[i] == r.scores[best] && tie_break[i] > tie_break[best])) {
      best = i;
    }
  }
  r.chosen_index = best;
  return r;
}

RerankResult select_baseline(const corpus::CandidateSet& cs, Method method, std::uint64_t seed) {
  RerankResult r;
  r.method = method;
  const std::size_t j = cs.candidates.size();
  if (method == Method::greedy_passthrough) {
    r.scores.assign(j + 1, 0.0);
    r.scores[j] = 1.0;
    r.chosen_index = j;
    return r;
  }
  if (method != Method::random) throw UsageError("select_baseline supports greedy and random only");
  if (j == 0) throw UsageError("random selection needs at least one candidate");
  Rng rng(seed);
  r.chosen_index = rng.index(j);
  r.scores.assign(j, 0.0);
  r.scores[r.chosen_index] = 1.0;
  return r;
}

RerankResult select_oracle(const corpus::CandidateSet& cs, Method method) {
  if (method != Method::oracle_max && method != Method::oracle_min) {
    throw UsageError("select_oracle supports oracle_max and oracle_min only");
  }
  if (cs.candidates.empty()) throw UsageError("oracle selection needs at least one candidate");
  const auto ref = metrics::tokenize(cs.gold);
  RerankResult r;
  r.method = method;
  for (const auto& c : cs.candidates) r.scores.push_back(metrics::sentence_bleu(metrics::tokenize(c), ref));
  r.chosen_index = method == Method::oracle_max ? argmax_lowest(r.scores) : argmin_lowest(r.scores);
  return r;
}

const std::string& chosen_response(const corpus::CandidateSet& cs, const RerankResult& r) {
  if (r.chosen_index < cs.candidates.size()) return cs.candidates[r.chosen_index];
  if (r.chosen_index == cs.candidates.size()) return cs.greedy;
  throw InvariantError("chosen index out of range");
}

Json to_json(const RerankResult& r, const corpus::CandidateSet& cs) {
  return Json{{"context_id", cs.context.context_id},
              {"method", std::string(to_string(r.method))},
              {"chosen_index", r.chosen_index},
              {"chosen", chosen_response(cs, r)},
              {"scores", r.scores}};
}

}  // namespace todrr::rerank
