#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "todrr/corpus.hpp"
#include "todrr/encoder.hpp"
#include "todrr/labeled_example.hpp"

namespace todrr::rerank {

enum class Method { classification, knn, greedy_passthrough, oracle_max, oracle_min, random };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);

struct RerankResult {
  std::size_t chosen_index = 0;
  std::vector<double> scores;
  Method method = Method::classification;
};

// Index of the maximal score, lowest index on ties.
std::size_t argmax_lowest(std::span<const double> scores);
std::size_t argmin_lowest(std::span<const double> scores);

RerankResult rerank_classification(const encoder::Model& model, const corpus::Context& c,
                                   std::span<const std::string> cands);

struct AnchorPool {
  std::vector<Eigen::VectorXd> encodings;
  std::vector<int> labels;
  std::vector<std::string> context_ids;
  std::vector<std::uint64_t> response_hashes;

  std::size_t size() const { return labels.size(); }
  double positive_fraction() const;
};

inline constexpr std::size_t kAnchorRetries = 16;

AnchorPool build_anchor_pool(const encoder::Model& model, std::span<const LabeledExample> examples,
                             std::size_t n_anchors, std::uint64_t seed);

Json to_json(const AnchorPool& pool);
AnchorPool anchor_pool_from_json(const Json& j);

struct KnnScore {
  double score = 0.0;                // positive fraction among the k nearest
  double positive_similarity = 0.0;  // mean cosine to the positive neighbours (0 if none)
};

// Neighbours ranked by cosine similarity, ties by anchor order.
KnnScore knn_score_detail(const AnchorPool& pool, const Eigen::VectorXd& e, std::size_t k);
double knn_score(const AnchorPool& pool, const Eigen::VectorXd& e, std::size_t k);

RerankResult rerank_knn(const encoder::Model& model, const AnchorPool& pool, const corpus::Context& c,
                        std::span<const std::string> cands, std::size_t k);

// greedy_passthrough selects index j (the slot after the sampled candidates);
// random draws uniformly among the sampled candidates.
RerankResult select_baseline(const corpus::CandidateSet& cs, Method method, std::uint64_t seed);

// Extremal sentence BLEU against gold over the sampled candidates.
RerankResult select_oracle(const corpus::CandidateSet& cs, Method method);

// The response string a result refers to, treating index j as the greedy
// response.
const std::string& chosen_response(const corpus::CandidateSet& cs, const RerankResult& r);

Json to_json(const RerankResult& r, const corpus::CandidateSet& cs);

}  // namespace todrr::rerank
