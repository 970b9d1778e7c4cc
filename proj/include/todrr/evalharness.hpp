#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "todrr/corpus.hpp"
#include "todrr/encoder.hpp"
#include "todrr/metrics.hpp"
#include "todrr/rerank.hpp"

namespace todrr::eval {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

struct Selection {
  std::string context_id;
  std::string chosen;
};

struct EvalRun {
  std::string method;
  std::vector<Selection> selections;
  metrics::MetricReport report;
  double wall_time_s = 0.0;
};

// Corpus BLEU plus mean ROUGE-L and METEOR of the selections against golds.
metrics::MetricReport evaluate(std::span<const Selection> selections,
                               const std::map<std::string, std::string>& golds);

std::map<std::string, std::string> gold_map(std::span<const corpus::CandidateSet> sets);

// A configured inference-time selection policy.
struct Reranker {
  rerank::Method method = rerank::Method::classification;
  std::shared_ptr<const encoder::Model> model;
  std::shared_ptr<const rerank::AnchorPool> pool;
  std::size_t k = 100;
  bool include_greedy = true;
  std::uint64_t seed = 13;
};

rerank::RerankResult apply(const Reranker& r, const corpus::CandidateSet& cs, std::size_t set_index);

// Reranks every set (in parallel, merged in input order) and evaluates.
struct RerankedRun {
  EvalRun run;
  std::vector<rerank::RerankResult> results;
};
RerankedRun run_reranker(const Reranker& r, std::span<const corpus::CandidateSet> sets);

EvalRun oracle_rerank(std::span<const corpus::CandidateSet> sets, rerank::Method mode);

std::vector<corpus::CandidateSet> truncate_candidates(std::span<const corpus::CandidateSet> sets,
                                                      std::size_t count);

struct CurvePoint {
  std::size_t count = 0;
  metrics::MetricReport report;
  double wall_time_s = 0.0;
};

enum class SweepPhase { inference, training };

// Builds a reranker from (truncated) training sets.
using RerankerFactory = std::function<Reranker(std::span<const corpus::CandidateSet>)>;

// Inference phase: evaluates `reranker` on eval sets truncated to each
// count. Training phase: builds a reranker from train sets truncated to each
// count via `factory` and evaluates it on the full eval sets.
std::vector<CurvePoint> sweep_candidate_count(std::span<const corpus::CandidateSet> eval_sets,
                                              const Reranker& reranker, std::span<const std::size_t> counts,
                                              SweepPhase phase,
                                              std::span<const corpus::CandidateSet> train_sets = {},
                                              const RerankerFactory& factory = {});

struct KnnCell {
  std::size_t pool_size = 0;
  std::size_t k = 0;
  std::optional<metrics::MetricReport> report;
  std::string skip_reason;
  double wall_time_s = 0.0;
};

std::vector<KnnCell> sweep_knn(const Reranker& base, std::span<const LabeledExample> anchor_source,
                               std::span<const corpus::CandidateSet> eval_sets,
                               std::span<const std::size_t> pool_sizes, std::span<const std::size_t> ks);

std::string curve_csv(std::span<const CurvePoint> curve);
std::string knn_grid_csv(std::span<const KnnCell> grid);

struct Diversity {
  double mean_unique = 0.0;
  std::map<std::size_t, std::size_t> histogram;  // unique count -> number of sets
};

Diversity diversity(std::span<const corpus::CandidateSet> sets);

Json to_json(const EvalRun& run);

}  // namespace todrr::eval
