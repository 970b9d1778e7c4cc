#include <cmath>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "test_util.hpp"
#include "todrr/ab.hpp"
#include "todrr/ab_server.hpp"
#include "todrr/error.hpp"
#include "todrr/random.hpp"

// After Eigen: httplib pulls in system headers whose macros clash with it.
#include "httplib.h"

using namespace todrr;
using namespace todrr::ab;
using corpus::Speaker;

namespace {

struct Inputs {
  std::vector<eval::EvalRun> runs;
  std::map<std::string, corpus::Context> contexts;
};

Inputs inputs(const std::vector<std::string>& systems, std::size_t n_contexts) {
  Inputs in;
  for (std::size_t i = 0; i < n_contexts; ++i) {
    const std::string cid = "dlg" + std::to_string(i) + ":1";
    corpus::Context c;
    c.context_id = cid;
    c.utterances = {{Speaker::user, "i need a taxi"}, {Speaker::system, "where to ?"}, {Speaker::user, "the museum"}};
    in.contexts[cid] = c;
  }
  for (const auto& s : systems) {
    eval::EvalRun r;
    r.method = s;
    for (const auto& [cid, c] : in.contexts) r.selections.push_back({cid, "reply " + std::to_string(s.size()) + " for " + cid});
    in.runs.push_back(r);
  }
  return in;
}

// Fleiss' kappa straight from the definition, used as the offline oracle.
double kappa_oracle(const std::vector<std::array<double, 2>>& rows, double n) {
  double pbar = 0, pa = 0;
  for (const auto& r : rows) {
    pbar += (r[0] * r[0] + r[1] * r[1] - n) / (n * (n - 1));
    pa += r[0];
  }
  pbar /= static_cast<double>(rows.size());
  pa /= n * static_cast<double>(rows.size());
  const double pe = pa * pa + (1 - pa) * (1 - pa);
  return pe == 1.0 ? 1.0 : (pbar - pe) / (1 - pe);
}

struct Running {
  ABServer server;
  int port;
  std::thread thread;
  Running(ABStore& store) : server(store), port(server.bind("127.0.0.1", 0)), thread([this] { server.listen(); }) {}
  ~Running() {
    server.stop();
    thread.join();
  }
};

}  // namespace

TEST_SUITE("ab") {

TEST_CASE("task construction") {
  const auto in = inputs({"greedy", "class", "knn"}, 100);
  const auto ts = ab_build_tasks(in.runs, in.contexts, 99, 13);
  CHECK(ts.tasks.size() == 99);
  CHECK(ts.systems == std::vector<std::string>{"greedy", "class", "knn"});
  std::map<std::set<std::string>, int> per_pair;
  std::size_t greedy_left = 0, greedy_tasks = 0;
  for (const auto& t : ts.tasks) {
    CHECK(t.left.system != t.right.system);
    per_pair[{t.left.system, t.right.system}]++;
    if (t.left.system == "greedy" || t.right.system == "greedy") {
      ++greedy_tasks;
      greedy_left += t.left.system == "greedy";
    }
  }
  CHECK(per_pair.size() == 3);
  for (const auto& [k, v] : per_pair) CHECK(v == 33);
  CHECK(greedy_left > 0);
  CHECK(greedy_left < greedy_tasks);

  const auto back = task_set_from_json(to_json(ts));
  CHECK(back.tasks.size() == ts.tasks.size());
  CHECK(back.tasks[5].left.response == ts.tasks[5].left.response);
  CHECK(ab_build_tasks(in.runs, in.contexts, 99, 13).tasks[0].task_id == ts.tasks[0].task_id);

  auto disjoint = inputs({"x", "y"}, 5);
  for (auto& s : disjoint.runs[1].selections) s.context_id += "_other";
  CHECK_THROWS_AS(ab_build_tasks(disjoint.runs, disjoint.contexts, 1, 1), DataError);
  CHECK_THROWS_AS(ab_build_tasks(std::span(in.runs).first(1), in.contexts, 1, 1), UsageError);
}

TEST_CASE("judgment parsing and blind task view") {
  CHECK(judgment_from_json(Json{{"task_id", "t1"}, {"evaluator", "e"}, {"choice", "B"}}).choice == Choice::right);
  CHECK_THROWS_AS(judgment_from_json(Json{{"task_id", "t1"}, {"evaluator", "e"}, {"choice", "tie"}}), DataError);
  CHECK_THROWS_AS(judgment_from_json(Json{{"task_id", "t1"}, {"evaluator", ""}, {"choice", "A"}}), DataError);
  const auto in = inputs({"alpha_sys", "beta_sys"}, 3);
  const auto ts = ab_build_tasks(in.runs, in.contexts, 3, 2);
  const auto v = task_view(ts.tasks[0], {0, 3});
  std::set<std::string> keys;
  for (const auto& [k, _] : v.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"task_id", "history", "option_a", "option_b", "progress"});
  CHECK(v.dump().find("_sys") == std::string::npos);
  CHECK(v.at("history").size() == 3);
}

TEST_CASE("store persists and replays the log") {
  const auto dir = testutil::temp_dir("ab_store");
  const auto in = inputs({"a", "b"}, 4);
  const auto ts = ab_build_tasks(in.runs, in.contexts, 4, 1);
  {
    ABStore store(ts, dir / "log.jsonl");
    CHECK(store.submit({ts.tasks[0].task_id, "e1", Choice::left, ""}) == SubmitStatus::ok);
    CHECK(store.submit({ts.tasks[0].task_id, "e1", Choice::right, ""}) == SubmitStatus::duplicate);
    CHECK(store.submit({"nope", "e1", Choice::left, ""}) == SubmitStatus::unknown_task);
    CHECK(store.progress("e1").done == 1);
  }
  ABStore again(ts, dir / "log.jsonl");
  CHECK(again.judgments().size() == 1);
  CHECK(again.progress("e1").done == 1);
  CHECK(again.stats() == compute_stats(ts, load_judgments(dir / "log.jsonl")));
  // Evaluators get different orders over the same tasks.
  std::set<std::string> firsts;
  for (int e = 0; e < 6; ++e) firsts.insert(again.next_task("ev" + std::to_string(e))->task_id);
  CHECK(firsts.size() > 1);
  std::ofstream(dir / "log.jsonl", std::ios::app) << R"({"task_id":"zzz","evaluator":"e","choice":"left"})" << "\n";
  CHECK_THROWS_AS(ABStore(ts, dir / "log.jsonl"), DataError);
}

TEST_CASE("HTTP status codes and exhausted marker") {
  const auto dir = testutil::temp_dir("ab_http");
  const auto in = inputs({"a", "b"}, 2);
  const auto ts = ab_build_tasks(in.runs, in.contexts, 2, 1);
  ABStore store(ts, dir / "log.jsonl");
  Running run(store);
  httplib::Client cli("127.0.0.1", run.port);

  CHECK(cli.Get("/api/tasks/next")->status == 400);
  CHECK(cli.Post("/api/judgments", "{not json", "application/json")->status == 400);
  CHECK(cli.Post("/api/judgments", R"({"task_id":"x","evaluator":"e","choice":"left"})", "application/json")->status ==
        404);
  for (int i = 0; i < 2; ++i) {
    auto res = cli.Get("/api/tasks/next?evaluator=e");
    REQUIRE(res->status == 200);
    const auto view = Json::parse(res->body);
    CHECK(view.at("progress").at("done") == i);
    const Json body{{"task_id", view.at("task_id")}, {"evaluator", "e"}, {"choice", "A"}};
    CHECK(cli.Post("/api/judgments", body.dump(), "application/json")->status == 201);
    CHECK(cli.Post("/api/judgments", body.dump(), "application/json")->status == 409);
  }
  const auto done = Json::parse(cli.Get("/api/tasks/next?evaluator=e")->body);
  CHECK(done.at("exhausted") == true);
  CHECK(done.at("progress").at("done") == 2);
  const auto prog = Json::parse(cli.Get("/api/progress?evaluator=e")->body);
  CHECK(prog.at("done") == 2);
  CHECK(prog.at("total") == 2);
  const auto st = Json::parse(cli.Get("/api/stats")->body);
  CHECK(st.at("n_judgments") == 2);
}

TEST_CASE("six simulated evaluators match an offline recomputation") {
  const auto dir = testutil::temp_dir("ab_sim");
  const auto in = inputs({"greedy", "classification", "knn"}, 120);
  const auto ts = ab_build_tasks(in.runs, in.contexts, 100, 13);
  ABStore store(ts, dir / "log.jsonl");
  Running run(store);
  httplib::Client cli("127.0.0.1", run.port);
  const std::set<std::string> view_keys{"task_id", "history", "option_a", "option_b", "progress"};

  std::map<std::string, const ABTask*> by_id;
  for (const auto& t : ts.tasks) by_id[t.task_id] = &t;
  Rng rng(5);
  for (int e = 0; e < 6; ++e) {
    const std::string ev = "evaluator" + std::to_string(e);
    for (int n = 0;; ++n) {
      const auto view = Json::parse(cli.Get("/api/tasks/next?evaluator=" + ev)->body);
      if (view.contains("exhausted")) {
        CHECK(n == 100);
        break;
      }
      std::set<std::string> keys;
      for (const auto& [k, _] : view.items()) keys.insert(k);
      CHECK(keys == view_keys);
      for (const auto& s : ts.systems) CHECK(view.dump().find("\"" + s + "\"") == std::string::npos);
      // Evaluators lean towards the later systems in the list.
      const ABTask& t = *by_id.at(view.at("task_id").get<std::string>());
      const bool left_later = std::find(ts.systems.begin(), ts.systems.end(), t.left.system) >
                              std::find(ts.systems.begin(), ts.systems.end(), t.right.system);
      const bool pick_later = rng.bernoulli(0.6);
      const bool left = left_later == pick_later;
      const Json body{{"task_id", t.task_id}, {"evaluator", ev}, {"choice", left ? "left" : "right"}};
      REQUIRE(cli.Post("/api/judgments", body.dump(), "application/json")->status == 201);
    }
  }

  // Offline recomputation from the persisted log.
  const auto log = load_judgments(dir / "log.jsonl");
  REQUIRE(log.size() == 600);
  struct Pair {
    double a = 0, b = 0;
    std::map<std::string, std::array<double, 2>> rows;
  };
  std::map<std::pair<std::string, std::string>, Pair> pairs;
  for (const auto& j : log) {
    const ABTask& t = *by_id.at(j.task_id);
    const auto rank = [&](const std::string& s) { return std::find(ts.systems.begin(), ts.systems.end(), s); };
    const bool left_first = rank(t.left.system) < rank(t.right.system);
    const auto key = left_first ? std::make_pair(t.left.system, t.right.system)
                                : std::make_pair(t.right.system, t.left.system);
    const bool prefers_a = (j.choice == Choice::left) == left_first;
    auto& p = pairs[key];
    (prefers_a ? p.a : p.b) += 1;
    p.rows[j.task_id][prefers_a ? 0 : 1] += 1;
  }
  const auto st = Json::parse(cli.Get("/api/stats")->body);
  CHECK(st.at("n_judgments") == 600);
  REQUIRE(st.at("comparisons").size() == 3);
  for (const auto& row : st.at("comparisons")) {
    const auto& p = pairs.at({row.at("system_a"), row.at("system_b")});
    CHECK(row.at("count_a").get<double>() == p.a);
    CHECK(row.at("count_b").get<double>() == p.b);
    const double total = p.a + p.b;
    CHECK(row.at("pct_a").get<double>() == doctest::Approx(std::round(1000.0 * p.a / total) / 10.0));
    // Two-sided p-value by direct summation over the binomial pmf.
    const auto n = static_cast<std::size_t>(total);
    const auto k = static_cast<std::size_t>(std::min(p.a, p.b));
    double tail = 0.0;
    for (std::size_t i = 0; i <= k; ++i) {
      tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
    }
    CHECK(row.at("p_value").get<double>() == doctest::Approx(std::min(1.0, 2 * tail)).epsilon(1e-9));
    std::vector<std::array<double, 2>> rows;
    for (const auto& [task, r] : p.rows) rows.push_back(r);
    CHECK(row.at("kappa_tasks") == rows.size());
    CHECK(row.at("kappa_raters") == 6);
    CHECK(row.at("kappa").get<double>() == doctest::Approx(kappa_oracle(rows, 6.0)).epsilon(1e-12));
  }
  // Replaying the log reproduces the served statistics.
  CHECK(compute_stats(ts, log) == st);
}

TEST_CASE("347 of 600 is reported as 57.8 percent and significant") {
  const auto in = inputs({"greedy", "knn"}, 600);
  const auto ts = ab_build_tasks(in.runs, in.contexts, 600, 4);
  std::vector<ABJudgment> log;
  for (std::size_t i = 0; i < ts.tasks.size(); ++i) {
    const auto& t = ts.tasks[i];
    const bool want_knn = i < 347;
    const bool left_is_knn = t.left.system == "knn";
    log.push_back({t.task_id, "e" + std::to_string(i % 6), want_knn == left_is_knn ? Choice::left : Choice::right, ""});
  }
  const auto st = compute_stats(ts, log);
  const auto& row = st.at("comparisons").at(0);
  CHECK(row.at("system_a") == "greedy");
  CHECK(row.at("count_b") == 347);
  CHECK(row.at("pct_b").get<double>() == doctest::Approx(57.8));
  CHECK(row.at("significant") == true);
  CHECK(row.at("kappa").is_null());
}

}
