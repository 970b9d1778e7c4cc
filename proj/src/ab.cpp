#include "todrr/ab.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "todrr/error.hpp"
#include "todrr/metrics.hpp"
#include "todrr/random.hpp"
#include "todrr/stats.hpp"

namespace todrr::ab {
namespace {

std::string task_id_for(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "t%05zu", i + 1);
  return buf;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json side_to_json(const ABSide& s) { return Json{{"system", s.system}, {"response", s.response}}; }
ABSide side_from_json(const Json& j) { return {require_string(j, "system"), require_string(j, "response")}; }

}  // namespace

TaskSet ab_build_tasks(std::span<const eval::EvalRun> runs, const std::map<std::string, corpus::Context>& contexts,
                       std::size_t n_tasks, std::uint64_t seed) {
  if (runs.size() < 2) throw UsageError("A/B tasks need at least two runs");
  TaskSet ts;
  std::vector<std::map<std::string, std::string>> chosen(runs.size());
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (std::find(ts.systems.begin(), ts.systems.end(), runs[r].method) != ts.systems.end()) {
      throw UsageError("duplicate system name \"" + runs[r].method + "\"");
    }
    ts.systems.push_back(runs[r].method);
    for (const auto& s : runs[r].selections) chosen[r][s.context_id] = s.chosen;
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < runs.size(); ++a)
    for (std::size_t b = a + 1; b < runs.size(); ++b) pairs.emplace_back(a, b);

  Rng rng(seed);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const std::size_t quota = n_tasks / pairs.size() + (p < n_tasks % pairs.size() ? 1 : 0);
    const auto [a, b] = pairs[p];
    std::vector<std::string> shared;
    for (const auto& [cid, resp] : chosen[a]) {
      if (chosen[b].count(cid) && contexts.count(cid)) shared.push_back(cid);
    }
    if (shared.size() < quota) {
      throw DataError("systems \"" + ts.systems[a] + "\" and \"" + ts.systems[b] + "\" share only " +
                      std::to_string(shared.size()) + " contexts; " + std::to_string(quota) + " tasks requested");
    }
    for (std::size_t k : rng.sample(shared.size(), quota)) {
      const std::string& cid = shared[k];
      ABTask t;
      t.context = contexts.at(cid);
      ABSide sa{ts.systems[a], chosen[a].at(cid)};
      ABSide sb{ts.systems[b], chosen[b].at(cid)};
      if (rng.bernoulli(0.5)) std::swap(sa, sb);
      t.left = std::move(sa);
      t.right = std::move(sb);
      ts.tasks.push_back(std::move(t));
    }
  }
  rng.shuffle(ts.tasks);
  for (std::size_t i = 0; i < ts.tasks.size(); ++i) ts.tasks[i].task_id = task_id_for(i);
  return ts;
}

Json to_json(const TaskSet& ts) {
  Json tasks = Json::array();
  for (const auto& t : ts.tasks) {
    tasks.push_back(Json{{"task_id", t.task_id},
                         {"context_id", t.context.context_id},
                         {"context", corpus::context_to_json(t.context.utterances)},
                         {"left", side_to_json(t.left)},
                         {"right", side_to_json(t.right)}});
  }
  return Json{{"systems", ts.systems}, {"tasks", tasks}};
}

TaskSet task_set_from_json(const Json& j) {
  TaskSet ts;
  ts.systems = require(j, "systems").get<std::vector<std::string>>();
  std::set<std::string> ids;
  for (const auto& t : require(j, "tasks")) {
    ABTask task;
    task.task_id = require_string(t, "task_id");
    task.context.context_id = require_string(t, "context_id");
    task.context.utterances = corpus::utterances_from_json(require(t, "context"));
    task.left = side_from_json(require(t, "left"));
    task.right = side_from_json(require(t, "right"));
    if (task.left.system == task.right.system) throw DataError("task \"" + task.task_id + "\" compares a system with itself");
    for (const auto* s : {&task.left.system, &task.right.system}) {
      if (std::find(ts.systems.begin(), ts.systems.end(), *s) == ts.systems.end()) {
        throw DataError("task \"" + task.task_id + "\" names unknown system \"" + *s + "\"");
      }
    }
    if (!ids.insert(task.task_id).second) throw DataError("duplicate task id \"" + task.task_id + "\"");
    ts.tasks.push_back(std::move(task));
  }
  return ts;
}

Json to_json(const ABJudgment& j) {
  return Json{{"task_id", j.task_id},
              {"evaluator", j.evaluator},
              {"choice", j.choice == Choice::left ? "left" : "right"},
              {"timestamp", j.timestamp}};
}

ABJudgment judgment_from_json(const Json& j) {
  ABJudgment out;
  out.task_id = require_string(j, "task_id");
  out.evaluator = require_string(j, "evaluator");
  if (out.evaluator.empty()) throw DataError("evaluator must be non-empty");
  const std::string choice = require_string(j, "choice");
  if (choice == "left" || choice == "A" || choice == "a") {
    out.choice = Choice::left;
  } else if (choice == "right" || choice == "B" || choice == "b") {
    out.choice = Choice::right;
  } else {
    throw DataError("choice must be left/right (or A/B)");
  }
  if (j.contains("timestamp") && j["timestamp"].is_string()) out.timestamp = j["timestamp"].get<std::string>();
  return out;
}

Json compute_stats(const TaskSet& ts, std::span<const ABJudgment> judgments) {
  std::map<std::string, const ABTask*> by_id;
  for (const auto& t : ts.tasks) by_id[t.task_id] = &t;
  auto rank = [&](const std::string& system) {
    return std::find(ts.systems.begin(), ts.systems.end(), system) - ts.systems.begin();
  };

  struct PairStats {
    std::size_t count_a = 0, count_b = 0;
    // task -> evaluator -> preferred system is A
    std::map<std::string, std::map<std::string, bool>> votes;
  };
  std::map<std::pair<std::string, std::string>, PairStats> pairs;
  for (std::size_t a = 0; a < ts.systems.size(); ++a)
    for (std::size_t b = a + 1; b < ts.systems.size(); ++b) pairs[{ts.systems[a], ts.systems[b]}];

  for (const auto& j : judgments) {
    auto it = by_id.find(j.task_id);
    if (it == by_id.end()) continue;
    const ABTask& t = *it->second;
    const bool left_is_a = rank(t.left.system) < rank(t.right.system);
    const std::string& sys_a = left_is_a ? t.left.system : t.right.system;
    const std::string& sys_b = left_is_a ? t.right.system : t.left.system;
    PairStats& ps = pairs[{sys_a, sys_b}];
    const bool prefers_a = (j.choice == Choice::left) == left_is_a;
    (prefers_a ? ps.count_a : ps.count_b) += 1;
    ps.votes[j.task_id][j.evaluator] = prefers_a;
  }

  Json comparisons = Json::array();
  for (const auto& [key, ps] : pairs) {
    const std::size_t total = ps.count_a + ps.count_b;
    Json row{{"system_a", key.first}, {"system_b", key.second}, {"count_a", ps.count_a},
             {"count_b", ps.count_b}, {"total", total}};
    if (total > 0) {
      const double pct_a = 100.0 * static_cast<double>(ps.count_a) / static_cast<double>(total);
      row["pct_a"] = std::round(pct_a * 10.0) / 10.0;
      row["pct_b"] = std::round((100.0 - pct_a) * 10.0) / 10.0;
      const double p = stats::binomial_test_two_sided(ps.count_a, total);
      row["p_value"] = p;
      row["significant"] = p < 0.05;
    } else {
      row["pct_a"] = nullptr;
      row["pct_b"] = nullptr;
      row["p_value"] = nullptr;
      row["significant"] = false;
    }
    // Agreement over the tasks judged by every evaluator active on this pair.
    std::set<std::string> evaluators;
    for (const auto& [task, votes] : ps.votes)
      for (const auto& [ev, pref] : votes) evaluators.insert(ev);
    std::vector<std::vector<std::size_t>> matrix;
    if (evaluators.size() >= 2) {
      for (const auto& [task, votes] : ps.votes) {
        if (votes.size() != evaluators.size()) continue;
        std::size_t a = 0;
        for (const auto& [ev, pref] : votes) a += pref ? 1 : 0;
        matrix.push_back({a, votes.size() - a});
      }
    }
    if (matrix.empty()) {
      row["kappa"] = nullptr;
    } else {
      row["kappa"] = stats::fleiss_kappa(matrix);
    }
    row["kappa_tasks"] = matrix.size();
    row["kappa_raters"] = matrix.empty() ? 0 : evaluators.size();
    comparisons.push_back(std::move(row));
  }
  return Json{{"n_judgments", judgments.size()}, {"comparisons", comparisons}};
}

Json task_view(const ABTask& t, const Progress& p) {
  Json history = Json::array();
  for (const auto& u : t.context.utterances) {
    history.push_back(Json{{"speaker", std::string(corpus::to_string(u.speaker))}, {"text", u.text}});
  }
  return Json{{"task_id", t.task_id},
              {"history", history},
              {"option_a", t.left.response},
              {"option_b", t.right.response},
              {"progress", Json{{"done", p.done}, {"total", p.total}}}};
}

std::vector<ABJudgment> load_judgments(const std::filesystem::path& path) {
  std::vector<ABJudgment> out;
  if (!std::filesystem::exists(path)) return out;
  read_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(judgment_from_json(j)); });
  return out;
}

ABStore::ABStore(TaskSet tasks, std::filesystem::path log_path)
    : tasks_(std::move(tasks)), log_path_(std::move(log_path)) {
  for (std::size_t i = 0; i < tasks_.tasks.size(); ++i) task_index_[tasks_.tasks[i].task_id] = i;
  for (auto& j : load_judgments(log_path_)) {
    if (!task_index_.count(j.task_id)) throw DataError("judgment log references unknown task \"" + j.task_id + "\"");
    if (!judged_.emplace(j.task_id, j.evaluator).second) {
      throw DataError("judgment log has a duplicate (task, evaluator) entry for \"" + j.task_id + "\"");
    }
    judgments_.push_back(std::move(j));
  }
}

std::vector<std::size_t> ABStore::order_for(const std::string& evaluator) const {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(tasks_.tasks.size());
  for (std::size_t i = 0; i < tasks_.tasks.size(); ++i) {
    keyed.emplace_back(metrics::fnv1a64(evaluator + '\x1f' + tasks_.tasks[i].task_id), i);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> order;
  order.reserve(keyed.size());
  for (const auto& [k, i] : keyed) order.push_back(i);
  return order;
}

std::optional<ABTask> ABStore::next_task(const std::string& evaluator) const {
  const auto order = order_for(evaluator);
  std::lock_guard lock(mu_);
  for (std::size_t i : order) {
    if (!judged_.count({tasks_.tasks[i].task_id, evaluator})) return tasks_.tasks[i];
  }
  return std::nullopt;
}

Progress ABStore::progress(const std::string& evaluator) const {
  std::lock_guard lock(mu_);
  Progress p;
  p.total = tasks_.tasks.size();
  for (const auto& [task, ev] : judged_) {
    if (ev == evaluator) ++p.done;
  }
  return p;
}

SubmitStatus ABStore::submit(ABJudgment j) {
  std::lock_guard lock(mu_);
  if (!task_index_.count(j.task_id)) return SubmitStatus::unknown_task;
  if (judged_.count({j.task_id, j.evaluator})) return SubmitStatus::duplicate;
  if (j.timestamp.empty()) j.timestamp = utc_timestamp();
  {
    std::ofstream out(log_path_, std::ios::app | std::ios::binary);
    if (!out) throw DataError("cannot append to " + log_path_.string());
    out << to_json(j).dump() << '\n';
    out.flush();
    if (!out) throw DataError("append failed on " + log_path_.string());
  }
  judged_.emplace(j.task_id, j.evaluator);
  judgments_.push_back(std::move(j));
  return SubmitStatus::ok;
}

Json ABStore::stats() const {
  std::lock_guard lock(mu_);
  return compute_stats(tasks_, judgments_);
}

std::vector<ABJudgment> ABStore::judgments() const {
  std::lock_guard lock(mu_);
  return judgments_;
}

}  // namespace todrr::ab
