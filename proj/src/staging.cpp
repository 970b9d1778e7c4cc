#include "todrr/staging.hpp"

#include <algorithm>
#include <set>

#include "todrr/error.hpp"
#include "todrr/parallel.hpp"
#include "todrr/random.hpp"

namespace todrr::staging {

std::vector<LabeledExample> build_stage1(std::span<const corpus::ContextGold> entries, std::size_t n_neg,
                                         std::uint64_t seed) {
  if (n_neg == 0) throw UsageError("n_neg must be >= 1");
  if (entries.size() < n_neg + 1) {
    throw DataError("stage 1 needs at least " + std::to_string(n_neg + 1) + " entries for " +
                    std::to_string(n_neg) + " negatives, got " + std::to_string(entries.size()));
  }
  std::vector<LabeledExample> out;
  out.reserve(entries.size() * (n_neg + 1));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out.push_back({entries[i].context, entries[i].gold, 1, Origin::gold});
    Rng rng(derive_seed(seed, i));
    // Sample from the N-1 other entries, then shift past i.
    for (std::size_t k : rng.sample(entries.size() - 1, n_neg)) {
      const std::size_t j = k < i ? k : k + 1;
      out.push_back({entries[i].context, entries[j].gold, 0, Origin::random_negative});
    }
  }
  return out;
}

Partition partition_scores(std::span<const double> scores, double threshold) {
  Partition p;
  p.threshold = threshold;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p.candidate_scores.push_back({i, scores[i]});
    (scores[i] >= threshold ? p.high : p.low).push_back(i);
  }
  return p;
}

Partition partition(const corpus::CandidateSet& cs, metrics::ScoringKind kind,
                    const metrics::SentenceEmbedder* embedder) {
  if (cs.gold.empty()) throw DataError("candidate set has an empty gold response");
  std::vector<double> scores;
  scores.reserve(cs.candidates.size());
  for (const auto& c : cs.candidates) scores.push_back(metrics::score(kind, c, cs.gold, embedder));
  return partition_scores(scores, metrics::score(kind, cs.greedy, cs.gold, embedder));
}

Partition downsample(const Partition& part, std::uint64_t seed) {
  Partition out = part;
  const std::size_t keep = std::min(part.high.size(), part.low.size());
  Rng rng(seed);
  auto shrink = [&](std::vector<std::size_t>& side) {
    if (side.size() == keep) return;
    auto picks = rng.sample(side.size(), keep);
    std::sort(picks.begin(), picks.end());
    std::vector<std::size_t> kept;
    kept.reserve(keep);
    for (std::size_t k : picks) kept.push_back(side[k]);
    side = std::move(kept);
  };
  shrink(out.high);
  shrink(out.low);
  return out;
}

namespace {

// Keeps the first occurrence of each distinct response.
std::vector<std::size_t> unique_responses(const std::vector<std::size_t>& side,
                                          const std::vector<std::string>& cands) {
  std::set<std::string_view> seen;
  std::vector<std::size_t> out;
  for (std::size_t i : side) {
    if (seen.insert(cands[i]).second) out.push_back(i);
  }
  return out;
}

}  // namespace

std::vector<LabeledExample> build_stage2(std::span<const corpus::CandidateSet> sets, const Stage2Options& opts,
                                         const metrics::SentenceEmbedder* embedder) {
  std::vector<std::vector<LabeledExample>> per_set(sets.size());
  parallel_for(sets.size(), [&](std::size_t s) {
    const auto& cs = sets[s];
    Partition part = partition(cs, opts.kind, embedder);
    if (opts.deduplicate) {
      part.high = unique_responses(part.high, cs.candidates);
      part.low = unique_responses(part.low, cs.candidates);
    }
    if (!opts.multiple_positives && !part.high.empty()) {
      std::size_t best = part.high.front();
      for (std::size_t i : part.high) {
        if (part.candidate_scores[i].score > part.candidate_scores[best].score) best = i;
      }
      part.high = {best};
    }
    if (opts.balance) part = downsample(part, derive_seed(opts.seed, s));
    auto& out = per_set[s];
    for (std::size_t i : part.high) out.push_back({cs.context, cs.candidates[i], 1, Origin::self_generated});
    for (std::size_t i : part.low) out.push_back({cs.context, cs.candidates[i], 0, Origin::self_generated});
  });
  std::vector<LabeledExample> out;
  for (auto& v : per_set) {
    for (auto& e : v) out.push_back(std::move(e));
  }
  return out;
}

}  // namespace todrr::staging
