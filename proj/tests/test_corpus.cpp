#include <atomic>
#include <fstream>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "todrr/corpus.hpp"
#include "todrr/error.hpp"
#include "todrr/evalharness.hpp"
#include "todrr/labeled_example.hpp"
#include "todrr/parallel.hpp"
#include "todrr/random.hpp"
#include "todrr/synth.hpp"

using namespace todrr;
using namespace todrr::corpus;

namespace {

void write(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

Dialogue five_turns() {
  Dialogue d{"d1", {}};
  for (int i = 0; i < 5; ++i) {
    d.turns.push_back({i % 2 == 0 ? Speaker::user : Speaker::system, "turn " + std::to_string(i)});
  }
  return d;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("load_corpus") {
  const auto dir = testutil::temp_dir("corpus");
  write(dir / "empty.jsonl", "");
  CHECK(load_corpus(dir / "empty.jsonl").empty());

  write(dir / "one.jsonl", R"({"id":"d1","turns":[{"speaker":"user","text":"hi"}]})" "\n");
  const auto one = load_corpus(dir / "one.jsonl");
  REQUIRE(one.size() == 1);
  CHECK(one[0].id == "d1");
  REQUIRE(one[0].turns.size() == 1);
  CHECK(one[0].turns[0].speaker == Speaker::user);
  CHECK(one[0].turns[0].text == "hi");

  write(dir / "noid.jsonl", R"({"id":"d1","turns":[{"speaker":"user","text":"hi"}]})" "\n"
                            R"({"turns":[{"speaker":"user","text":"hi"}]})" "\n");
  try {
    load_corpus(dir / "noid.jsonl");
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  write(dir / "dup.jsonl", R"({"id":"d1","turns":[{"speaker":"user","text":"a"}]})" "\n"
                           R"({"id":"d1","turns":[{"speaker":"user","text":"b"}]})" "\n");
  CHECK_THROWS_AS(load_corpus(dir / "dup.jsonl"), DataError);
  write(dir / "bad.jsonl", "{not json\n");
  CHECK_THROWS_AS(load_corpus(dir / "bad.jsonl"), DataError);
  write(dir / "speaker.jsonl", R"({"id":"d1","turns":[{"speaker":"robot","text":"a"}]})" "\n");
  CHECK_THROWS_AS(load_corpus(dir / "speaker.jsonl"), DataError);
  write(dir / "blank.jsonl", R"({"id":"d1","turns":[{"speaker":"user","text":"   "}]})" "\n");
  CHECK_THROWS_AS(load_corpus(dir / "blank.jsonl"), DataError);
  CHECK_THROWS_AS(load_corpus(dir / "missing.jsonl"), DataError);
}

TEST_CASE("corpus serialization round trip") {
  const auto dialogues = synth::synth_dialogues({10, 3});
  const auto dir = testutil::temp_dir("roundtrip");
  write(dir / "c.jsonl", serialize_corpus(dialogues));
  CHECK(load_corpus(dir / "c.jsonl") == dialogues);

  auto sets = synth::synth_candidate_sets(dialogues, {20, 4, 0.3, 3, 7});
  write(dir / "s.jsonl", serialize_candidate_sets(sets));
  const auto back = load_candidate_sets(dir / "s.jsonl");
  REQUIRE(back.size() == sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    CHECK(back[i].context.context_id == sets[i].context.context_id);
    CHECK(back[i].context.utterances == sets[i].context.utterances);
    CHECK(back[i].gold == sets[i].gold);
    CHECK(back[i].greedy == sets[i].greedy);
    CHECK(back[i].candidates == sets[i].candidates);
  }
}

TEST_CASE("load_candidate_sets") {
  const auto dir = testutil::temp_dir("sets");
  Json rec{{"context_id", "d1:1"},
           {"context", Json::array({Json{{"speaker", "user"}, {"text", "hi"}}})},
           {"gold", "hello"},
           {"greedy", "hello there"}};
  Json cands = Json::array();
  for (int i = 0; i < 20; ++i) cands.push_back("c" + std::to_string(i));
  rec["candidates"] = cands;
  write(dir / "20.jsonl", rec.dump() + "\n");
  CHECK(load_candidate_sets(dir / "20.jsonl").at(0).j() == 20);
  rec["candidates"] = Json::array({"only"});
  write(dir / "1.jsonl", rec.dump() + "\n");
  CHECK(load_candidate_sets(dir / "1.jsonl").at(0).j() == 1);
  rec["candidates"] = Json::array();
  write(dir / "0.jsonl", rec.dump() + "\n");
  CHECK_THROWS_AS(load_candidate_sets(dir / "0.jsonl"), DataError);
  rec["candidates"] = Json::array({"x"});
  rec["gold"] = "";
  write(dir / "g.jsonl", rec.dump() + "\n");
  CHECK_THROWS_AS(load_candidate_sets(dir / "g.jsonl"), DataError);
}

TEST_CASE("build_context examples") {
  const Dialogue d = five_turns();
  auto c = build_context(d, 3, 3);
  REQUIRE(c.utterances.size() == 3);
  CHECK(c.utterances[0].text == "turn 0");
  CHECK(c.utterances[2].text == "turn 2");
  CHECK(c.context_id == "d1:3");

  Dialogue six = d;
  six.turns.push_back({Speaker::system, "turn 5"});
  c = build_context(six, 5, 3);
  REQUIRE(c.utterances.size() == 3);
  CHECK(c.utterances[0].text == "turn 2");

  c = build_context(d, 1, 3);
  REQUIRE(c.utterances.size() == 1);
  CHECK(c.utterances[0].text == "turn 0");

  c = build_context(d, 3, 1);
  REQUIRE(c.utterances.size() == 1);
  CHECK(c.utterances[0].text == "turn 2");

  CHECK_THROWS_AS(build_context(d, 2, 3), UsageError);  // user turn
  CHECK_THROWS_AS(build_context(d, 9, 3), UsageError);
  CHECK_THROWS_AS(build_context(d, 1, 0), UsageError);
}

TEST_CASE("build_context window property over random dialogues") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    Dialogue d{"r" + std::to_string(trial), {}};
    const std::size_t n = 2 + rng.index(12);
    for (std::size_t i = 0; i < n; ++i) {
      d.turns.push_back({rng.bernoulli(0.5) ? Speaker::user : Speaker::system, "u" + std::to_string(i)});
    }
    const std::size_t window = 1 + rng.index(6);
    for (std::size_t t = 1; t < n; ++t) {
      if (d.turns[t].speaker != Speaker::system) continue;
      const auto c = build_context(d, t, window);
      CHECK(c.utterances.size() == std::min(window, t));
      for (std::size_t k = 0; k < c.utterances.size(); ++k) {
        CHECK(c.utterances[k] == d.turns[t - c.utterances.size() + k]);
      }
    }
  }
}

TEST_CASE("context_gold_pairs skips opening system turns") {
  Dialogue d{"x", {{Speaker::system, "welcome"}, {Speaker::user, "hi"}, {Speaker::system, "hello"}}};
  const std::vector<Dialogue> corpus{d};
  const auto pairs = context_gold_pairs(corpus, 3);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].gold == "hello");
  CHECK(pairs[0].context.utterances.size() == 2);
}

TEST_CASE("validate_delex") {
  CHECK(validate_delex("the phone is [value_phone] .") == std::vector<std::string>{"value_phone"});
  CHECK(validate_delex("no placeholders here").empty());
  CHECK(validate_delex("[value_a1] and [value_b_2]") == std::vector<std::string>{"value_a1", "value_b_2"});
  CHECK_THROWS_AS(validate_delex("broken [value_"), DataError);
  CHECK_THROWS_AS(validate_delex("stray ] here"), DataError);
  CHECK_THROWS_AS(validate_delex("[Value_x]"), DataError);
  CHECK_THROWS_AS(validate_delex("[name]"), DataError);
  CHECK_THROWS_AS(validate_delex("[value_]"), DataError);
}

TEST_CASE("inference_candidates appends greedy on request") {
  CandidateSet cs;
  cs.gold = "g";
  cs.greedy = "greedy";
  cs.candidates = {"a", "b"};
  CHECK(inference_candidates(cs, false) == std::vector<std::string>{"a", "b"});
  CHECK(inference_candidates(cs, true) == std::vector<std::string>{"a", "b", "greedy"});
}

}

TEST_SUITE("synth") {

TEST_CASE("zero noise is the identity") {
  const auto cs = synth::synth_candidates("do you need parking ?", 5, 0.0, 13);
  CHECK(cs.candidates.size() == 5);
  for (const auto& c : cs.candidates) CHECK(c == "do you need parking ?");
  CHECK(cs.greedy == "do you need parking ?");
  CHECK(cs.gold == "do you need parking ?");
}

TEST_CASE("synth_candidates is deterministic and seed-sensitive") {
  const std::vector<std::string> vocab{"x", "y", "z"};
  const auto a = synth::synth_candidates("a b c d e f g", 20, 0.3, 5, vocab);
  const auto b = synth::synth_candidates("a b c d e f g", 20, 0.3, 5, vocab);
  const auto c = synth::synth_candidates("a b c d e f g", 20, 0.3, 6, vocab);
  CHECK(a == b);
  CHECK(a.candidates != c.candidates);
  for (const auto& cand : a.candidates) CHECK_FALSE(cand.empty());
}

TEST_CASE("diversity increases with noise") {
  const std::vector<std::string> vocab{"x", "y", "z", "w"};
  const std::string gold = "i recommend the place in the north of town .";
  double prev = 0.0;
  for (double noise : {0.0, 0.05, 0.15, 0.3}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto cs = synth::synth_candidates(gold, 20, noise, seed, vocab);
      total += static_cast<double>(std::set<std::string>(cs.candidates.begin(), cs.candidates.end()).size());
    }
    CHECK(total / 30.0 > prev);
    prev = total / 30.0;
  }
}

TEST_CASE("full noise never yields an empty candidate") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto cs = synth::synth_candidates("one two three", 10, 1.0, seed, std::vector<std::string>{"q"});
    for (const auto& c : cs.candidates) CHECK_FALSE(c.empty());
  }
}

TEST_CASE("reference corpus diversity regression") {
  const auto dialogues = synth::synth_dialogues({120, 13});
  const auto sets = synth::synth_candidate_sets(dialogues, {});
  REQUIRE(sets.size() == 500);
  const double mean = eval::diversity(sets).mean_unique;
  CHECK(mean > 1.0);
  CHECK(mean < 20.0);
  CHECK(mean == doctest::Approx(19.694).epsilon(1e-12));
}

TEST_CASE("synthetic dialogues are delexicalised and well formed") {
  const auto dialogues = synth::synth_dialogues({40, 21});
  CHECK(dialogues.size() == 40);
  std::set<std::string> ids;
  for (const auto& d : dialogues) {
    CHECK(ids.insert(d.id).second);
    CHECK(d.turns.size() >= 2);
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
      CHECK(d.turns[i].speaker == (i % 2 == 0 ? Speaker::user : Speaker::system));
      CHECK_NOTHROW(validate_delex(d.turns[i].text));
    }
  }
  CHECK(synth::synth_dialogues({40, 21}) == dialogues);
}

TEST_CASE("too few contexts is a data error") {
  const auto dialogues = synth::synth_dialogues({2, 1});
  CHECK_THROWS_AS(synth::synth_candidate_sets(dialogues, {500, 20, 0.3, 3, 13}), DataError);
}

}

TEST_SUITE("support") {

TEST_CASE("Rng streams are reproducible") {
  Rng a(42), b(42), c(derive_seed(42, 1));
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng d(42);
  CHECK(c.next() != d.next());
  Rng e(1);
  auto s = e.sample(10, 4);
  CHECK(s.size() == 4);
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 4);
  for (auto x : s) CHECK(x < 10);
}

TEST_CASE("parallel_for covers every index and rethrows") {
  set_max_threads(4);
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw DataError("boom");
                  }),
                  DataError);
  set_max_threads(1);
}

TEST_CASE("labeled example schema") {
  LabeledExample e{{"d:1", {{Speaker::user, "hi"}}, 1}, "hello", 1, Origin::gold};
  const auto back = labeled_example_from_json(to_json(e));
  CHECK(back == e);
  auto j = to_json(e);
  j["label"] = 2;
  CHECK_THROWS_AS(labeled_example_from_json(j), DataError);
  j["label"] = 0;
  CHECK_THROWS_AS(labeled_example_from_json(j), DataError);  // gold must be positive
  CHECK(parse_origin("self_generated") == Origin::self_generated);
}

TEST_CASE("write_file_atomic replaces content") {
  const auto dir = testutil::temp_dir("atomic");
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  CHECK(read_text_file(dir / "f.txt") == "two");
  CHECK_FALSE(std::filesystem::exists(dir / "f.txt.tmp"));
}

}
