#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "todrr/jsonl.hpp"

namespace todrr::metrics {

using TokenSeq = std::vector<std::string>;

// Lowercases, splits on whitespace and separates ASCII punctuation into its
// own tokens. "[value_xxx]" placeholders stay single tokens.
TokenSeq tokenize(std::string_view text);

// Zero clipped-match counts are replaced by this value under smoothing.
inline constexpr double kBleuEpsilon = 0.1;
inline constexpr std::size_t kBleuOrder = 4;

struct NgramCounts {
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;

  NgramCounts& operator+=(const NgramCounts& o);
};

NgramCounts ngram_counts(const TokenSeq& cand, const TokenSeq& ref);

// BLEU-4 from (possibly aggregated) counts. Orders for which the candidate
// has no n-grams at all are left out and the remaining orders are weighted
// uniformly.
double bleu_from_counts(const NgramCounts& counts, bool smooth = true);

double sentence_bleu(const TokenSeq& cand, const TokenSeq& ref, bool smooth = true);
double corpus_bleu(std::span<const std::pair<TokenSeq, TokenSeq>> pairs);

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);
double rouge_l(const TokenSeq& cand, const TokenSeq& ref);

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
};

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// Exact-then-stem unigram alignment with the maximal number of matches per
// stage and, among those, the fewest chunks.
MeteorAlignment meteor_align(const TokenSeq& cand, const TokenSeq& ref);
double meteor(const TokenSeq& cand, const TokenSeq& ref, const MeteorParams& params = {});

std::string porter_stem(std::string_view word);

double cosine_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

enum class ScoringKind { cosine, bleu, rouge, meteor };

std::string_view to_string(ScoringKind k);
ScoringKind parse_scoring_kind(std::string_view s);

// Sentence encoder used by the cosine scoring function.
class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
};

// Training-free general-purpose embedder: term counts of hashed unigrams and
// bigrams. Deterministic and identical on every platform.
class HashingEmbedder final : public SentenceEmbedder {
 public:
  explicit HashingEmbedder(std::size_t dim = 512) : dim_(dim) {}
  Eigen::VectorXd embed(std::string_view text) const override;

 private:
  std::size_t dim_;
};

// s(cand, ref). kind == cosine requires an embedder.
double score(ScoringKind kind, std::string_view cand, std::string_view ref,
             const SentenceEmbedder* embedder = nullptr);

struct MetricReport {
  double bleu = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  std::size_t n_examples = 0;
};

Json to_json(const MetricReport& r);
MetricReport report_from_json(const Json& j);

std::uint64_t fnv1a64(std::string_view s);

}  // namespace todrr::metrics
