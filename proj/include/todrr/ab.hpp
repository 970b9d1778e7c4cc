#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "todrr/corpus.hpp"
#include "todrr/evalharness.hpp"

namespace todrr::ab {

struct ABSide {
  std::string system;
  std::string response;
};

struct ABTask {
  std::string task_id;
  corpus::Context context;
  ABSide left;
  ABSide right;
};

struct TaskSet {
  std::vector<std::string> systems;  // in run order; fixes "A vs B" orientation
  std::vector<ABTask> tasks;
};

// Tasks are spread round-robin over every unordered pair of runs; contexts
// are drawn without replacement from those the pair shares, sides are
// assigned by a fair coin and the final order is shuffled.
TaskSet ab_build_tasks(std::span<const eval::EvalRun> runs,
                       const std::map<std::string, corpus::Context>& contexts, std::size_t n_tasks,
                       std::uint64_t seed);

Json to_json(const TaskSet& ts);
TaskSet task_set_from_json(const Json& j);

enum class Choice { left, right };

struct ABJudgment {
  std::string task_id;
  std::string evaluator;
  Choice choice = Choice::left;
  std::string timestamp;
};

Json to_json(const ABJudgment& j);
ABJudgment judgment_from_json(const Json& j);

// Table-7 style statistics, a pure function of the tasks and the log.
Json compute_stats(const TaskSet& ts, std::span<const ABJudgment> judgments);

struct Progress {
  std::size_t done = 0;
  std::size_t total = 0;
};

// Blind view of a task as served to evaluators: no system identities.
Json task_view(const ABTask& t, const Progress& p);

enum class SubmitStatus { ok, unknown_task, duplicate };

// Judgment store backed by an append-only JSONL log; existing entries are
// replayed on construction. Thread-safe.
class ABStore {
 public:
  ABStore(TaskSet tasks, std::filesystem::path log_path);

  // Next unjudged task for the evaluator in that evaluator's shuffled order.
  std::optional<ABTask> next_task(const std::string& evaluator) const;
  Progress progress(const std::string& evaluator) const;
  SubmitStatus submit(ABJudgment j);
  Json stats() const;
  std::vector<ABJudgment> judgments() const;
  const TaskSet& tasks() const { return tasks_; }

 private:
  std::vector<std::size_t> order_for(const std::string& evaluator) const;

  TaskSet tasks_;
  std::map<std::string, std::size_t> task_index_;
  std::filesystem::path log_path_;
  mutable std::mutex mu_;
  std::vector<ABJudgment> judgments_;
  std::set<std::pair<std::string, std::string>> judged_;  // (task, evaluator)
};

std::vector<ABJudgment> load_judgments(const std::filesystem::path& path);

}  // namespace todrr::ab
