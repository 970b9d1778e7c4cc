#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "todrr/corpus.hpp"
#include "todrr/labeled_example.hpp"
#include "todrr/metrics.hpp"

namespace todrr::staging {

inline constexpr std::size_t kDefaultNegatives = 19;

// Response-selection data: per entry one gold positive and n_neg negatives
// whose responses are the golds of other entries, drawn uniformly without
// replacement. Output order: entry by entry, positive first.
std::vector<LabeledExample> build_stage1(std::span<const corpus::ContextGold> entries, std::size_t n_neg,
                                         std::uint64_t seed);

struct ScoredCandidate {
  std::size_t index = 0;
  double score = 0.0;
};

// Split of a candidate set around the greedy response's score.
struct Partition {
  std::vector<ScoredCandidate> candidate_scores;
  double threshold = 0.0;
  std::vector<std::size_t> high;  // score >= threshold
  std::vector<std::size_t> low;   // score < threshold
};

Partition partition_scores(std::span<const double> scores, double threshold);
Partition partition(const corpus::CandidateSet& cs, metrics::ScoringKind kind,
                    const metrics::SentenceEmbedder* embedder = nullptr);

// Subsamples the larger side to the size of the smaller one; both sides end
// up empty when either is empty. Surviving indices keep their original order.
Partition downsample(const Partition& part, std::uint64_t seed);

struct Stage2Options {
  metrics::ScoringKind kind = metrics::ScoringKind::cosine;
  bool balance = true;
  // false keeps only the best-scoring member of the high side as positive.
  bool multiple_positives = true;
  bool deduplicate = true;
  std::uint64_t seed = 13;
};

std::vector<LabeledExample> build_stage2(std::span<const corpus::CandidateSet> sets, const Stage2Options& opts,
                                         const metrics::SentenceEmbedder* embedder = nullptr);

}  // namespace todrr::staging
