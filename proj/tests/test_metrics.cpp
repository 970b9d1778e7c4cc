#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "todrr/error.hpp"
#include "todrr/metrics.hpp"

using namespace todrr;
using namespace todrr::metrics;

namespace {
TokenSeq T(const char* s) { return tokenize(s); }
}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("tokenize splits punctuation and keeps placeholders") {
  CHECK(tokenize("Hello, world") == TokenSeq{"hello", ",", "world"});
  CHECK(tokenize("[value_phone] .") == TokenSeq{"[value_phone]", "."});
  CHECK(tokenize("").empty());
  CHECK(tokenize("call [value_phone].") == TokenSeq{"call", "[value_phone]", "."});
  CHECK(tokenize("[notaplaceholder]") == TokenSeq{"[", "notaplaceholder", "]"});
}

TEST_CASE("tokenize is idempotent on joined output") {
  for (const char* s : {"Hello, world!", "i need a taxi to [value_place] at [value_time].", "  spaced   out  "}) {
    const auto once = tokenize(s);
    std::string joined;
    for (const auto& t : once) joined += t + " ";
    CHECK(tokenize(joined) == once);
  }
}

TEST_CASE("sentence_bleu examples") {
  CHECK(sentence_bleu(T("i can help with that ."), T("i can help with that .")) == doctest::Approx(1.0));
  CHECK(sentence_bleu({}, T("a b")) == 0.0);
  CHECK(std::abs(sentence_bleu(T("a b c d"), T("a b c d e")) - std::exp(-0.25)) < 1e-9);
  CHECK_THROWS_AS(sentence_bleu(T("a"), {}), UsageError);
  // A single token still scores 1 against itself: higher orders are absent.
  CHECK(sentence_bleu(T("hello"), T("hello")) == doctest::Approx(1.0));
}

TEST_CASE("sentence_bleu smoothing replaces zero numerators") {
  // No matching 3/4-grams: precisions 3/3, 1/2, 0.1/1.
  const double expect = std::pow(1.0 * 0.5 * 0.1, 1.0 / 3.0);
  CHECK(sentence_bleu(T("a b c"), T("a b x c")) == doctest::Approx(expect * std::exp(1.0 - 4.0 / 3.0)));
  CHECK(sentence_bleu(T("a b c"), T("a b x c"), false) == 0.0);
}

TEST_CASE("corpus_bleu examples") {
  std::vector<std::pair<TokenSeq, TokenSeq>> one{{T("a b c"), T("a b c")}};
  CHECK(corpus_bleu(one) == doctest::Approx(1.0));
  std::vector<std::pair<TokenSeq, TokenSeq>> two{{T("a b c d"), T("a b c d")}, {T("a b c d"), T("a b c d e")}};
  CHECK(std::abs(corpus_bleu(two) - std::exp(-1.0 / 8.0)) < 1e-9);
  CHECK_THROWS_AS(corpus_bleu(std::span<const std::pair<TokenSeq, TokenSeq>>{}), UsageError);
}

TEST_CASE("corpus_bleu on one pair equals unsmoothed sentence_bleu") {
  Rng rng(5);
  const std::vector<std::string> vocab{"a", "b", "c"};
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const auto c = testutil::random_seq(rng, vocab, 4, 10);
    const auto r = testutil::random_seq(rng, vocab, 4, 10);
    const auto counts = ngram_counts(c, r);
    if (std::find(counts.matches.begin(), counts.matches.end(), 0u) != counts.matches.end()) continue;
    std::vector<std::pair<TokenSeq, TokenSeq>> p{{c, r}};
    CHECK(std::abs(corpus_bleu(p) - sentence_bleu(c, r, false)) <= 1e-12);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("metrics agree with brute-force oracles on random pairs") {
  Rng rng(2024);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "the", "."};
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  for (int i = 0; i < 200; ++i) {
    auto c = testutil::random_seq(rng, vocab, 0, 14);
    auto r = testutil::random_seq(rng, vocab, 1, 14);
    CHECK(std::abs(sentence_bleu(c, r) - oracle::sentence_bleu(c, r)) <= 1e-12);
    CHECK(std::abs(rouge_l(c, r) - oracle::rouge_l(c, r)) <= 1e-12);
    CHECK(lcs_length(c, r) == oracle::lcs(c, r));
    pairs.emplace_back(std::move(c), std::move(r));
  }
  CHECK(std::abs(corpus_bleu(pairs) - oracle::corpus_bleu(pairs)) <= 1e-12);
  for (std::size_t n = 1; n <= pairs.size(); n += 37) {
    std::vector<std::pair<TokenSeq, TokenSeq>> prefix(pairs.begin(), pairs.begin() + static_cast<long>(n));
    CHECK(std::abs(corpus_bleu(prefix) - oracle::corpus_bleu(prefix)) <= 1e-12);
  }
}

TEST_CASE("rouge_l examples") {
  CHECK(rouge_l(T("a b c"), T("a b c")) == doctest::Approx(1.0));
  CHECK(std::abs(rouge_l(T("a b c"), T("a c b")) - 2.0 / 3.0) < 1e-9);
  CHECK(rouge_l(T("x y"), T("a b")) == 0.0);
  CHECK(rouge_l({}, T("a")) == 0.0);
  CHECK_THROWS_AS(rouge_l(T("a"), {}), UsageError);
}

TEST_CASE("meteor examples") {
  CHECK(std::abs(meteor(T("a b c"), T("a b c")) - 0.98148) < 1e-4);
  CHECK(meteor(T("hello"), T("hello")) == doctest::Approx(0.5));
  CHECK(meteor(T("x y"), T("a b")) == 0.0);
  CHECK(meteor({}, T("a")) == 0.0);
  CHECK_THROWS_AS(meteor(T("a"), {}), UsageError);
  for (std::size_t m = 1; m <= 12; ++m) {
    TokenSeq s;
    for (std::size_t i = 0; i < m; ++i) s.push_back("w" + std::to_string(i));
    CHECK(meteor(s, s) == doctest::Approx(1.0 - 0.5 / std::pow(static_cast<double>(m), 3.0)).epsilon(1e-12));
  }
}

TEST_CASE("meteor stem stage matches inflected forms") {
  const auto a = meteor_align(T("he runs fast"), T("he running fast"));
  CHECK(a.matches == 3);
  CHECK(a.chunks == 1);
  // Exact stage takes precedence: "cats" pairs with "cats", the leftover
  // "cat" stem-matches nothing.
  const auto b = meteor_align(T("cats cat"), T("cats dog"));
  CHECK(b.matches == 1);
}

TEST_CASE("meteor agrees with exhaustive alignment search") {
  Rng rng(77);
  const std::vector<std::string> vocab{"run", "runs", "running", "cat", "cats", "a", "the", "b"};
  for (int i = 0; i < 150; ++i) {
    const auto c = testutil::random_seq(rng, vocab, 0, 6);
    const auto r = testutil::random_seq(rng, vocab, 1, 6);
    const auto got = meteor_align(c, r);
    const auto want = oracle::meteor_align(c, r);
    CHECK(got.matches == want.matches);
    if (want.matches > 0) CHECK(got.chunks == want.chunks);
    CHECK(std::abs(meteor(c, r) - oracle::meteor(c, r)) <= 1e-12);
  }
}

TEST_CASE("porter stemmer reference words") {
  const std::vector<std::pair<const char*, const char*>> cases{
      {"caresses", "caress"}, {"ponies", "poni"},     {"cats", "cat"},         {"running", "run"},
      {"hopping", "hop"},     {"filing", "file"},     {"happy", "happi"},      {"relational", "relat"},
      {"agreed", "agre"},     {"adjustable", "adjust"}, {"goodness", "good"}, {"replacement", "replac"},
  };
  for (const auto& [w, s] : cases) CHECK_MESSAGE(porter_stem(w) == s, w);
  CHECK(porter_stem("[value_name]") == "[value_name]");
  CHECK(porter_stem(".") == ".");
}

TEST_CASE("cosine_score") {
  Eigen::VectorXd a(3), b(2), c(2), d(2);
  a << 1, 2, 3;
  b << 1, 0;
  c << 0, 1;
  d << -1, 0;
  CHECK(cosine_score(a, a) == doctest::Approx(1.0));
  CHECK(cosine_score(b, c) == doctest::Approx(0.0));
  CHECK(cosine_score(b, d) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(cosine_score(a, b), UsageError);
  CHECK_THROWS_AS(cosine_score(b, Eigen::VectorXd::Zero(2)), UsageError);
}

TEST_CASE("score dispatch") {
  CHECK(score(ScoringKind::bleu, "a b c", "a b c") == doctest::Approx(1.0));
  CHECK(score(ScoringKind::rouge, "x y", "a b") == 0.0);
  CHECK_THROWS_AS(score(ScoringKind::cosine, "a", "a"), UsageError);
  HashingEmbedder he;
  CHECK(score(ScoringKind::cosine, "a b", "a b", &he) == doctest::Approx(1.0));
  CHECK(parse_scoring_kind("meteor") == ScoringKind::meteor);
  CHECK_THROWS_AS(parse_scoring_kind("bertscore"), UsageError);
}

TEST_CASE("all metric scores lie in [0, 1]") {
  Rng rng(9);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "runs", "run", ","};
  for (int i = 0; i < 300; ++i) {
    const auto c = testutil::random_seq(rng, vocab, 0, 12);
    const auto r = testutil::random_seq(rng, vocab, 1, 12);
    for (double s : {sentence_bleu(c, r), rouge_l(c, r), meteor(c, r)}) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
  }
}

TEST_CASE("MetricReport JSON round trip") {
  MetricReport r{0.25, 0.5, 0.75, 12};
  const auto j = to_json(r);
  CHECK(j.at("n_examples") == 12);
  const auto back = report_from_json(j);
  CHECK(back.bleu == r.bleu);
  CHECK(back.rouge_l == r.rouge_l);
  CHECK(back.meteor == r.meteor);
  CHECK_THROWS_AS(report_from_json(Json{{"bleu", 1}}), DataError);
}

}
