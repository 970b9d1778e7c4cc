#include <algorithm>
#include <set>

#include "doctest.h"
#include "todrr/error.hpp"
#include "todrr/random.hpp"
#include "todrr/parallel.hpp"
#include "todrr/staging.hpp"
#include "todrr/synth.hpp"

using namespace todrr;
using namespace todrr::staging;
using corpus::CandidateSet;
using corpus::Speaker;

namespace {

std::vector<corpus::ContextGold> entries(std::size_t n) {
  std::vector<corpus::ContextGold> out;
  for (std::size_t i = 0; i < n; ++i) {
    corpus::ContextGold e;
    e.context.context_id = "d" + std::to_string(i) + ":1";
    e.context.utterances = {{Speaker::user, "request " + std::to_string(i)}};
    e.gold = "gold response " + std::to_string(i);
    out.push_back(e);
  }
  return out;
}

CandidateSet make_set(const std::string& id, const std::string& gold, const std::string& greedy,
                      std::vector<std::string> cands) {
  CandidateSet cs;
  cs.context.context_id = id;
  cs.context.utterances = {{Speaker::user, "hello"}};
  cs.gold = gold;
  cs.greedy = greedy;
  cs.candidates = std::move(cands);
  return cs;
}

const std::vector<CandidateSet>& synthetic_sets() {
  static const auto sets = [] {
    const auto dialogues = synth::synth_dialogues({120, 13});
    return synth::synth_candidate_sets(dialogues, synth::CandidateOptions{});
  }();
  return sets;
}

}  // namespace

TEST_SUITE("staging") {

TEST_CASE("build_stage1 sizes and labels") {
  const auto e = entries(100);
  const auto out = build_stage1(e, 19, 13);
  CHECK(out.size() == 2000);
  CHECK(std::count_if(out.begin(), out.end(), [](const auto& x) { return x.label == 1; }) == 100);
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& pos = out[i * 20];
    CHECK(pos.label == 1);
    CHECK(pos.origin == Origin::gold);
    CHECK(pos.response == e[i].gold);
    std::set<std::string> negs;
    for (std::size_t k = 1; k < 20; ++k) {
      const auto& neg = out[i * 20 + k];
      CHECK(neg.label == 0);
      CHECK(neg.origin == Origin::random_negative);
      CHECK(neg.context == e[i].context);
      CHECK(neg.response != e[i].gold);
      negs.insert(neg.response);
    }
    CHECK(negs.size() == 19);  // without replacement
  }
  CHECK(build_stage1(e, 19, 13) == out);
  CHECK(build_stage1(e, 19, 14) != out);
}

TEST_CASE("build_stage1 with two entries pairs each with the other") {
  const auto e = entries(2);
  const auto out = build_stage1(e, 1, 5);
  REQUIRE(out.size() == 4);
  CHECK(out[1].response == e[1].gold);
  CHECK(out[3].response == e[0].gold);
  CHECK_THROWS_AS(build_stage1(e, 2, 5), DataError);
  CHECK_THROWS_AS(build_stage1(e, 0, 5), UsageError);
}

TEST_CASE("partition threshold rule") {
  const std::vector<double> s{0.9, 0.5, 0.7};
  const auto p = partition_scores(s, 0.6);
  CHECK(p.high == std::vector<std::size_t>{0, 2});
  CHECK(p.low == std::vector<std::size_t>{1});
  const auto tie = partition_scores(s, 0.7);
  CHECK(tie.high == std::vector<std::size_t>{0, 2});
}

TEST_CASE("partition with greedy equal to gold") {
  const auto cs = make_set("x", "the train leaves at 5", "the train leaves at 5",
                           {"the train leaves at 5", "a train leaves", "the train leaves at 5", "no"});
  const auto p = partition(cs, metrics::ScoringKind::bleu);
  CHECK(p.threshold == doctest::Approx(1.0));
  CHECK(p.high == std::vector<std::size_t>{0, 2});
  CHECK(p.low == std::vector<std::size_t>{1, 3});
  auto empty_gold = cs;
  empty_gold.gold.clear();
  CHECK_THROWS_AS(partition(empty_gold, metrics::ScoringKind::bleu), DataError);
}

TEST_CASE("downsample examples") {
  std::vector<double> s{1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  const auto p = partition_scores(s, 0.5);
  const auto d = downsample(p, 3);
  CHECK(d.high.size() == 3);
  CHECK(d.low == p.low);
  CHECK(std::is_sorted(d.high.begin(), d.high.end()));
  for (auto i : d.high) CHECK(std::find(p.high.begin(), p.high.end(), i) != p.high.end());
  CHECK(downsample(p, 3).high == d.high);

  const auto even = partition_scores(std::vector<double>{1, 0, 1, 0}, 0.5);
  CHECK(downsample(even, 1).high == even.high);
  CHECK(downsample(even, 1).low == even.low);

  const auto no_low = downsample(partition_scores(std::vector<double>{1, 1}, 0.5), 1);
  CHECK(no_low.high.empty());
  CHECK(no_low.low.empty());
}

TEST_CASE("partition and downsample invariants on random score vectors") {
  Rng rng(99);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.index(25);
    std::vector<double> s(n);
    // Coarse grid so ties with the threshold are common.
    for (auto& v : s) v = static_cast<double>(rng.index(5)) / 4.0;
    const double thr = static_cast<double>(rng.index(5)) / 4.0;
    const auto p = partition_scores(s, thr);
    std::vector<std::size_t> all(p.high);
    all.insert(all.end(), p.low.begin(), p.low.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(n);
    for (std::size_t i = 0; i < n; ++i) expect[i] = i;
    CHECK(all == expect);
    for (auto i : p.high) CHECK(s[i] >= thr);
    for (auto i : p.low) CHECK(s[i] < thr);
    const auto d = downsample(p, rng.index(1000));
    CHECK(d.high.size() == d.low.size());
    CHECK(d.high.size() == std::min(p.high.size(), p.low.size()));
    for (auto i : d.high) CHECK(s[i] >= thr);
    for (auto i : d.low) CHECK(s[i] < thr);
  }
}

TEST_CASE("build_stage2 degenerate sets") {
  const auto cs = make_set("x", "book the hotel", "a hotel", {"a hotel", "a hotel", "a hotel"});
  Stage2Options opts;
  opts.kind = metrics::ScoringKind::bleu;
  CHECK(build_stage2(std::vector<CandidateSet>{cs}, opts).empty());
  opts.balance = false;
  opts.deduplicate = false;
  const auto all = build_stage2(std::vector<CandidateSet>{cs}, opts);
  CHECK(all.size() == 3);
  for (const auto& e : all) {
    CHECK(e.label == 1);
    CHECK(e.origin == Origin::self_generated);
  }
  opts.deduplicate = true;
  CHECK(build_stage2(std::vector<CandidateSet>{cs}, opts).size() == 1);
}

TEST_CASE("build_stage2 single positive option") {
  const auto cs = make_set("x", "the train leaves at 5", "train", {"the train leaves at 5", "the train leaves", "no"});
  Stage2Options opts;
  opts.kind = metrics::ScoringKind::bleu;
  opts.balance = false;
  opts.multiple_positives = false;
  const auto out = build_stage2(std::vector<CandidateSet>{cs}, opts);
  std::vector<std::string> pos;
  for (const auto& e : out) {
    if (e.label == 1) pos.push_back(e.response);
  }
  CHECK(pos == std::vector<std::string>{"the train leaves at 5"});
}

TEST_CASE("build_stage2 balance on synthetic sets") {
  const auto& sets = synthetic_sets();
  REQUIRE(sets.size() == 500);
  for (auto kind : {metrics::ScoringKind::bleu, metrics::ScoringKind::cosine}) {
    Stage2Options opts;
    opts.kind = kind;
    metrics::HashingEmbedder he;
    const auto out = build_stage2(sets, opts, &he);
    const auto pos = std::count_if(out.begin(), out.end(), [](const auto& e) { return e.label == 1; });
    CHECK(out.size() > 0);
    CHECK(2 * static_cast<std::size_t>(pos) == out.size());
    std::set<std::tuple<std::string, std::string, int>> seen;
    for (const auto& e : out) CHECK(seen.emplace(e.context.context_id, e.response, e.label).second);
  }
}

TEST_CASE("build_stage2 is deterministic across thread counts") {
  const std::vector<CandidateSet> sets(synthetic_sets().begin(), synthetic_sets().begin() + 80);
  Stage2Options opts;
  opts.kind = metrics::ScoringKind::rouge;
  set_max_threads(1);
  const auto one = build_stage2(sets, opts);
  set_max_threads(4);
  const auto four = build_stage2(sets, opts);
  set_max_threads(1);
  CHECK(one == four);
  opts.seed = 14;
  CHECK(build_stage2(sets, opts) != one);
}

}
