#include "todrr/evalharness.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "todrr/error.hpp"
#include "todrr/parallel.hpp"
#include "todrr/random.hpp"

namespace todrr::eval {

metrics::MetricReport evaluate(std::span<const Selection> selections,
                               const std::map<std::string, std::string>& golds) {
  if (selections.empty()) throw UsageError("evaluate needs at least one selection");
  std::vector<std::pair<metrics::TokenSeq, metrics::TokenSeq>> pairs(selections.size());
  for (std::size_t i = 0; i < selections.size(); ++i) {
    auto it = golds.find(selections[i].context_id);
    if (it == golds.end()) throw DataError("no gold response for context \"" + selections[i].context_id + "\"");
    pairs[i] = {metrics::tokenize(selections[i].chosen), metrics::tokenize(it->second)};
  }
  std::vector<double> rouge(pairs.size()), meteor(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    rouge[i] = metrics::rouge_l(pairs[i].first, pairs[i].second);
    meteor[i] = metrics::meteor(pairs[i].first, pairs[i].second);
  });
  metrics::MetricReport r;
  r.n_examples = pairs.size();
  r.bleu = metrics::corpus_bleu(pairs);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    r.rouge_l += rouge[i];
    r.meteor += meteor[i];
  }
  r.rouge_l /= static_cast<double>(pairs.size());
  r.meteor /= static_cast<double>(pairs.size());
  return r;
}

std::map<std::string, std::string> gold_map(std::span<const corpus::CandidateSet> sets) {
  std::map<std::string, std::string> out;
  for (const auto& cs : sets) {
    if (!out.emplace(cs.context.context_id, cs.gold).second) {
      throw DataError("duplicate context id \"" + cs.context.context_id + "\"");
    }
  }
  return out;
}

rerank::RerankResult apply(const Reranker& r, const corpus::CandidateSet& cs, std::size_t set_index) {
  using rerank::Method;
  switch (r.method) {
    case Method::classification: {
      if (!r.model) throw UsageError("classification reranking needs a model");
      const auto cands = corpus::inference_candidates(cs, r.include_greedy);
      auto res = rerank::rerank_classification(*r.model, cs.context, cands);
      return res;
    }
    case Method::knn: {
      if (!r.model || !r.pool) throw UsageError("knn reranking needs a model and an anchor pool");
      const auto cands = corpus::inference_candidates(cs, r.include_greedy);
      return rerank::rerank_knn(*r.model, *r.pool, cs.context, cands, r.k);
    }
    case Method::greedy_passthrough:
      return rerank::select_baseline(cs, Method::greedy_passthrough, 0);
    case Method::random:
      return rerank::select_baseline(cs, Method::random, derive_seed(r.seed, set_index));
    case Method::oracle_max:
    case Method::oracle_min:
      return rerank::select_oracle(cs, r.method);
  }
  throw InvariantError("unhandled rerank method");
}

RerankedRun run_reranker(const Reranker& r, std::span<const corpus::CandidateSet> sets) {
  if (sets.empty()) throw UsageError("no candidate sets to rerank");
  Stopwatch watch;
  RerankedRun out;
  out.results.resize(sets.size());
  parallel_for(sets.size(), [&](std::size_t i) { out.results[i] = apply(r, sets[i], i); });
  out.run.method = std::string(rerank::to_string(r.method));
  out.run.selections.reserve(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out.run.selections.push_back({sets[i].context.context_id, rerank::chosen_response(sets[i], out.results[i])});
  }
  out.run.report = evaluate(out.run.selections, gold_map(sets));
  out.run.wall_time_s = watch.seconds();
  return out;
}

EvalRun oracle_rerank(std::span<const corpus::CandidateSet> sets, rerank::Method mode) {
  Reranker r;
  r.method = mode;
  if (mode != rerank::Method::oracle_max && mode != rerank::Method::oracle_min) {
    throw UsageError("oracle_rerank mode must be oracle_max or oracle_min");
  }
  return run_reranker(r, sets).run;
}

std::vector<corpus::CandidateSet> truncate_candidates(std::span<const corpus::CandidateSet> sets,
                                                      std::size_t count) {
  if (count == 0) throw UsageError("candidate count must be >= 1");
  std::vector<corpus::CandidateSet> out(sets.begin(), sets.end());
  for (auto& cs : out) {
    if (count > cs.candidates.size()) {
      throw UsageError("candidate count " + std::to_string(count) + " exceeds j=" +
                       std::to_string(cs.candidates.size()) + " of \"" + cs.context.context_id + "\"");
    }
    cs.candidates.resize(count);
  }
  return out;
}

std::vector<CurvePoint> sweep_candidate_count(std::span<const corpus::CandidateSet> eval_sets,
                                              const Reranker& reranker, std::span<const std::size_t> counts,
                                              SweepPhase phase, std::span<const corpus::CandidateSet> train_sets,
                                              const RerankerFactory& factory) {
  if (phase == SweepPhase::training && (!factory || train_sets.empty())) {
    throw UsageError("training-phase sweep needs training sets and a reranker factory");
  }
  std::vector<CurvePoint> curve;
  for (std::size_t count : counts) {
    Stopwatch watch;
    CurvePoint pt;
    pt.count = count;
    if (phase == SweepPhase::inference) {
      const auto sets = truncate_candidates(eval_sets, count);
      pt.report = run_reranker(reranker, sets).run.report;
    } else {
      const auto train = truncate_candidates(train_sets, count);
      pt.report = run_reranker(factory(train), eval_sets).run.report;
    }
    pt.wall_time_s = watch.seconds();
    curve.push_back(pt);
  }
  return curve;
}

std::vector<KnnCell> sweep_knn(const Reranker& base, std::span<const LabeledExample> anchor_source,
                               std::span<const corpus::CandidateSet> eval_sets,
                               std::span<const std::size_t> pool_sizes, std::span<const std::size_t> ks) {
  if (!base.model) throw UsageError("knn sweep needs a trained encoder");
  std::vector<KnnCell> grid;
  for (std::size_t pool_size : pool_sizes) {
    std::shared_ptr<const rerank::AnchorPool> pool;
    std::string pool_error;
    try {
      pool = std::make_shared<const rerank::AnchorPool>(
          rerank::build_anchor_pool(*base.model, anchor_source, pool_size, base.seed));
    } catch (const DataError& e) {
      pool_error = e.what();
    }
    for (std::size_t k : ks) {
      KnnCell cell;
      cell.pool_size = pool_size;
      cell.k = k;
      if (!pool) {
        cell.skip_reason = pool_error;
      } else if (k == 0 || k > pool_size) {
        cell.skip_reason = "k exceeds pool size";
      } else {
        Stopwatch watch;
        Reranker r = base;
        r.method = rerank::Method::knn;
        r.pool = pool;
        r.k = k;
        cell.report = run_reranker(r, eval_sets).run.report;
        cell.wall_time_s = watch.seconds();
      }
      grid.push_back(std::move(cell));
    }
  }
  return grid;
}

namespace {
std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}
}  // namespace

std::string curve_csv(std::span<const CurvePoint> curve) {
  std::string out = "count,bleu,rouge_l,meteor,wall_time_s\n";
  for (const auto& p : curve) {
    out += std::to_string(p.count) + "," + fixed(p.report.bleu, 6) + "," + fixed(p.report.rouge_l, 6) + "," +
           fixed(p.report.meteor, 6) + "," + fixed(p.wall_time_s, 3) + "\n";
  }
  return out;
}

std::string knn_grid_csv(std::span<const KnnCell> grid) {
  std::string out = "pool,k,bleu,rouge_l,meteor,wall_time_s,skip_reason\n";
  for (const auto& c : grid) {
    out += std::to_string(c.pool_size) + "," + std::to_string(c.k) + ",";
    if (c.report) {
      out += fixed(c.report->bleu, 6) + "," + fixed(c.report->rouge_l, 6) + "," + fixed(c.report->meteor, 6) + "," +
             fixed(c.wall_time_s, 3) + ",\n";
    } else {
      std::string reason = c.skip_reason;
      std::replace(reason.begin(), reason.end(), ',', ';');
      out += ",,,," + reason + "\n";
    }
  }
  return out;
}

Diversity diversity(std::span<const corpus::CandidateSet> sets) {
  if (sets.empty()) throw UsageError("diversity needs at least one candidate set");
  Diversity d;
  double total = 0.0;
  for (const auto& cs : sets) {
    const std::set<std::string> unique(cs.candidates.begin(), cs.candidates.end());
    total += static_cast<double>(unique.size());
    ++d.histogram[unique.size()];
  }
  d.mean_unique = total / static_cast<double>(sets.size());
  return d;
}

Json to_json(const EvalRun& run) {
  Json sel = Json::array();
  for (const auto& s : run.selections) sel.push_back(Json{{"context_id", s.context_id}, {"chosen", s.chosen}});
  return Json{{"method", run.method}, {"report", metrics::to_json(run.report)}, {"selections", sel}};
}

}  // namespace todrr::eval
