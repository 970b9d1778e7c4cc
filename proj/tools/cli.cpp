#include "todrr/cli.hpp"

#include <algorithm>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "todrr/ab.hpp"
#include "todrr/ab_server.hpp"
#include "todrr/corpus.hpp"
#include "todrr/encoder.hpp"
#include "todrr/error.hpp"
#include "todrr/evalharness.hpp"
#include "todrr/gradcheck.hpp"
#include "todrr/jsonl.hpp"
#include "todrr/parallel.hpp"
#include "todrr/rerank.hpp"
#include "todrr/staging.hpp"
#include "todrr/synth.hpp"

namespace todrr::cli {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  std::string command;
  std::uint64_t seed = 13;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  Json meta() const { return Json{{"command", command}, {"seed", seed}}; }
  std::ostream& log() const { return *err; }
};

std::string join_args(const std::vector<std::string>& args) {
  std::string s = "todrr";
  for (std::size_t i = 1; i < args.size(); ++i) {
    s += ' ';
    s += args[i];
  }
  return s;
}

// Outputs -------------------------------------------------------------------

void write_jsonl(const Invocation& inv, const fs::path& path, const std::vector<Json>& records) {
  write_file_atomic(path, to_jsonl(records));
  write_file_atomic(fs::path(path.string() + ".meta.json"), inv.meta().dump(2) + "\n");
  inv.log() << "wrote " << records.size() << " records to " << path.string() << "\n";
}

// JSON documents carry their metadata inline; an empty path prints instead.
void write_json(const Invocation& inv, const std::string& path, Json doc) {
  doc["meta"] = inv.meta();
  const std::string text = doc.dump(2) + "\n";
  if (path.empty()) {
    *inv.out << text;
    return;
  }
  write_file_atomic(path, text);
  inv.log() << "wrote " << path << "\n";
}

// Metrics are stored at full precision and shown to four decimals.
std::string summary(const metrics::MetricReport& r) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << "bleu " << r.bleu << " rouge_l " << r.rouge_l << " meteor " << r.meteor
     << " n " << r.n_examples;
  return ss.str();
}

void write_csv(const Invocation& inv, const fs::path& path, const std::string& csv) {
  write_file_atomic(path, "# " + inv.command + "\n" + csv);
  inv.log() << "wrote " << path.string() << "\n";
}

// Inputs ----------------------------------------------------------------------

std::vector<LabeledExample> load_examples(const fs::path& path) {
  std::vector<LabeledExample> out;
  read_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(labeled_example_from_json(j)); });
  if (out.empty()) throw DataError(path.string() + ": no examples");
  return out;
}

Json load_json(const fs::path& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

encoder::Model load_model(const fs::path& path) { return encoder::load_checkpoint(path); }

rerank::AnchorPool load_pool(const fs::path& path) { return rerank::anchor_pool_from_json(load_json(path)); }

eval::EvalRun load_selections(const fs::path& path, const std::map<std::string, std::string>& golds) {
  eval::EvalRun run;
  read_jsonl(path, [&](const Json& j, std::size_t) {
    const std::string method = require_string(j, "method");
    if (run.method.empty()) run.method = method;
    if (method != run.method) throw DataError("mixed methods \"" + run.method + "\" and \"" + method + "\"");
    run.selections.push_back({require_string(j, "context_id"), require_string(j, "chosen")});
  });
  if (run.selections.empty()) throw DataError(path.string() + ": no selections");
  run.report = eval::evaluate(run.selections, golds);
  return run;
}

std::vector<std::size_t> parse_counts(const std::string& csv, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw UsageError(std::string("invalid ") + what + " list \"" + csv + "\"");
    }
  }
  if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
  return out;
}

// Logs every option of the subcommand with its resolved value.
void log_config(const Invocation& inv, const CLI::App& sub) {
  Json cfg = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    const auto& res = opt->results();
    if (res.empty()) {
      cfg[name] = opt->get_default_str();
    } else if (res.size() == 1) {
      cfg[name] = res.front();
    } else {
      cfg[name] = res;
    }
  }
  cfg["threads"] = max_threads();
  inv.log() << "todrr " << sub.get_name() << " config " << cfg.dump() << "\n";
}

// Subcommand options ---------------------------------------------------------

struct SynthOpts {
  std::size_t dialogues = 120;
  synth::CandidateOptions cand;
  std::string out;
  std::string corpus_out;
};

struct Stage1Opts {
  std::string sets;
  std::string corpus;
  std::size_t window = corpus::kDefaultWindow;
  std::size_t negatives = staging::kDefaultNegatives;
  std::string out;
};

struct Stage2Opts {
  std::string sets;
  std::string scoring = "cosine";
  bool no_balance = false;
  bool single_positive = false;
  bool no_dedup = false;
  std::string embedder_checkpoint;
  std::string out;
};

struct TrainOpts {
  std::string data;
  std::string objective = "classification";
  std::string stage = "s1";
  std::string init = "fresh";
  std::string checkpoint;
  std::size_t dim = 128;
  std::size_t min_freq = 1;
  encoder::TrainConfig cfg;
  std::size_t batch_size = 0;  // 0: 64 for classification, 128 for triplet
  std::string mode = "cross";
  std::string distance = "euclidean";
  std::string out;
};

struct AnchorsOpts {
  std::string model;
  std::string data;
  std::size_t n_anchors = 0;
  std::string out;
};

struct RerankOpts {
  std::string sets;
  std::string method;
  std::string model;
  std::string pool;
  std::size_t k = 10;
  bool no_greedy = false;
  std::string out;
};

struct EvalOpts {
  std::string sets;
  std::string selections;
  std::string out;
};

struct SweepCandOpts {
  RerankOpts rr;
  std::string counts = "1,5,10,15,20";
  std::string phase = "inference";
  std::string train_sets;
  std::string init_checkpoint;
  std::string scoring = "bleu";
  std::string out;
};

struct SweepKnnOpts {
  std::string sets;
  std::string model;
  std::string anchors_from;
  std::string pools = "10,100,500,1000,5000";
  std::string ks = "1,10,100";
  bool no_greedy = false;
  std::string out;
};

struct DiversityOpts {
  std::string sets;
  std::string out;
};

struct ABBuildOpts {
  std::string sets;
  std::vector<std::string> runs;
  std::vector<std::string> names;
  std::size_t tasks = 600;
  std::string out;
};

struct ABServeOpts {
  std::string tasks;
  std::string store;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
};

struct ABStatsOpts {
  std::string tasks;
  std::string store;
  std::string out;
};

struct GradOpts {
  encoder::GradCheckOptions g;
  double tolerance = 1e-3;
  std::string out;
};

// Handlers -------------------------------------------------------------------

int do_synth(const Invocation& inv, SynthOpts o) {
  o.cand.seed = inv.seed;
  const auto dialogues = synth::synth_dialogues({o.dialogues, inv.seed});
  const auto sets = synth::synth_candidate_sets(dialogues, o.cand);
  std::vector<Json> records;
  for (const auto& cs : sets) records.push_back(corpus::to_json(cs));
  write_jsonl(inv, o.out, records);
  if (!o.corpus_out.empty()) {
    std::vector<Json> dj;
    for (const auto& d : dialogues) dj.push_back(corpus::to_json(d));
    write_jsonl(inv, o.corpus_out, dj);
  }
  inv.log() << "mean unique candidates " << eval::diversity(sets).mean_unique << "\n";
  return kExitOk;
}

int do_stage1(const Invocation& inv, const Stage1Opts& o) {
  if (o.sets.empty() == o.corpus.empty()) throw UsageError("stage1-build needs exactly one of --sets or --corpus");
  std::vector<corpus::ContextGold> entries;
  if (!o.sets.empty()) {
    for (auto& cs : corpus::load_candidate_sets(o.sets)) entries.push_back({std::move(cs.context), std::move(cs.gold)});
  } else {
    const auto dialogues = corpus::load_corpus(o.corpus);
    entries = corpus::context_gold_pairs(dialogues, o.window);
  }
  const auto examples = staging::build_stage1(entries, o.negatives, inv.seed);
  std::vector<Json> records;
  for (const auto& e : examples) records.push_back(to_json(e));
  write_jsonl(inv, o.out, records);
  return kExitOk;
}

int do_stage2(const Invocation& inv, const Stage2Opts& o) {
  const auto sets = corpus::load_candidate_sets(o.sets);
  staging::Stage2Options so;
  so.kind = metrics::parse_scoring_kind(o.scoring);
  so.balance = !o.no_balance;
  so.multiple_positives = !o.single_positive;
  so.deduplicate = !o.no_dedup;
  so.seed = inv.seed;
  metrics::HashingEmbedder hashing;
  std::optional<encoder::Model> model;
  std::unique_ptr<encoder::ModelEmbedder> model_embedder;
  const metrics::SentenceEmbedder* embedder = &hashing;
  if (!o.embedder_checkpoint.empty()) {
    model = load_model(o.embedder_checkpoint);
    model_embedder = std::make_unique<encoder::ModelEmbedder>(*model);
    embedder = model_embedder.get();
  }
  const auto examples = staging::build_stage2(sets, so, embedder);
  std::size_t pos = 0;
  std::vector<Json> records;
  for (const auto& e : examples) {
    pos += static_cast<std::size_t>(e.label == 1);
    records.push_back(to_json(e));
  }
  inv.log() << "stage-2 examples " << examples.size() << " (" << pos << " positive)\n";
  write_jsonl(inv, o.out, records);
  return kExitOk;
}

int do_train(const Invocation& inv, TrainOpts o) {
  const auto data = load_examples(o.data);
  const auto objective = encoder::parse_objective(o.objective);
  if (o.stage != "s1" && o.stage != "s2") throw UsageError("--stage must be s1 or s2");
  encoder::TrainConfig cfg = o.cfg;
  cfg.seed = inv.seed;
  cfg.mode = encoder::parse_mode(o.mode);
  cfg.distance = encoder::parse_distance(o.distance);
  cfg.batch_size = o.batch_size != 0 ? o.batch_size : (objective == encoder::Objective::triplet ? 128 : 64);
  cfg.validate();
  encoder::Model model;
  if (o.init == "fresh") {
    if (!o.checkpoint.empty()) throw UsageError("--checkpoint is only used with --init from-checkpoint");
    model = encoder::make_model(encoder::build_vocab(data, o.min_freq), o.dim, cfg);
  } else if (o.init == "from-checkpoint") {
    if (o.checkpoint.empty()) throw UsageError("--init from-checkpoint needs --checkpoint");
    model = load_model(o.checkpoint);
  } else {
    throw UsageError("--init must be fresh or from-checkpoint");
  }
  eval::Stopwatch watch;
  encoder::TrainLog tlog;
  model = encoder::train(std::move(model), data, cfg, objective, &tlog, [&](std::size_t e, double loss) {
    inv.log() << "epoch " << e << " loss " << loss << "\n";
  });
  model.stage = o.stage;
  inv.log() << "trained " << tlog.steps << " steps in " << watch.seconds() << " s\n";
  write_json(inv, o.out, encoder::to_json(model));
  return kExitOk;
}

int do_anchors(const Invocation& inv, const AnchorsOpts& o) {
  const auto model = load_model(o.model);
  const auto data = load_examples(o.data);
  const std::size_t n = o.n_anchors == 0 ? data.size() : o.n_anchors;
  eval::Stopwatch watch;
  const auto pool = rerank::build_anchor_pool(model, data, n, inv.seed);
  inv.log() << "encoded " << pool.size() << " anchors in " << watch.seconds() << " s\n";
  write_json(inv, o.out, rerank::to_json(pool));
  return kExitOk;
}

eval::Reranker make_reranker(const Invocation& inv, const RerankOpts& o) {
  eval::Reranker r;
  r.method = rerank::parse_method(o.method);
  r.k = o.k;
  r.include_greedy = !o.no_greedy;
  r.seed = inv.seed;
  if (r.method == rerank::Method::classification || r.method == rerank::Method::knn) {
    if (o.model.empty()) throw UsageError("--method " + o.method + " needs --model");
    r.model = std::make_shared<const encoder::Model>(load_model(o.model));
  }
  if (r.method == rerank::Method::knn) {
    if (o.pool.empty()) throw UsageError("--method knn needs --pool");
    r.pool = std::make_shared<const rerank::AnchorPool>(load_pool(o.pool));
  }
  return r;
}

int do_rerank(const Invocation& inv, const RerankOpts& o) {
  const auto sets = corpus::load_candidate_sets(o.sets);
  const eval::Reranker r = make_reranker(inv, o);
  const auto rr = eval::run_reranker(r, sets);
  std::vector<Json> records;
  for (std::size_t i = 0; i < sets.size(); ++i) records.push_back(rerank::to_json(rr.results[i], sets[i]));
  inv.log() << rr.run.method << " " << summary(rr.run.report) << " in " << rr.run.wall_time_s << " s\n";
  write_jsonl(inv, o.out, records);
  return kExitOk;
}

int do_eval(const Invocation& inv, const EvalOpts& o) {
  const auto sets = corpus::load_candidate_sets(o.sets);
  const auto run = load_selections(o.selections, eval::gold_map(sets));
  inv.log() << run.method << " " << summary(run.report) << "\n";
  write_json(inv, o.out, Json{{"method", run.method}, {"report", metrics::to_json(run.report)}});
  return kExitOk;
}

int do_sweep_candidates(const Invocation& inv, const SweepCandOpts& o) {
  const auto sets = corpus::load_candidate_sets(o.rr.sets);
  const auto counts = parse_counts(o.counts, "count");
  eval::Reranker r = make_reranker(inv, o.rr);
  std::vector<eval::CurvePoint> curve;
  if (o.phase == "inference") {
    curve = eval::sweep_candidate_count(sets, r, counts, eval::SweepPhase::inference);
  } else if (o.phase == "training") {
    if (o.train_sets.empty() || o.init_checkpoint.empty()) {
      throw UsageError("--phase training needs --train-sets and --init-checkpoint");
    }
    if (!r.model) throw UsageError("--phase training needs a trained --model for its configuration");
    const auto train_sets = corpus::load_candidate_sets(o.train_sets);
    const auto init = load_model(o.init_checkpoint);
    staging::Stage2Options so;
    so.kind = metrics::parse_scoring_kind(o.scoring);
    so.seed = inv.seed;
    const encoder::TrainConfig cfg = r.model->config;
    metrics::HashingEmbedder hashing;
    auto factory = [&](std::span<const corpus::CandidateSet> truncated) {
      const auto data = staging::build_stage2(truncated, so, &hashing);
      if (data.empty()) throw DataError("truncated sets yield no stage-2 examples");
      eval::Reranker out = r;
      const bool knn = r.method == rerank::Method::knn;
      auto model = encoder::train(init, data, cfg,
                                  knn ? encoder::Objective::triplet : encoder::Objective::classification);
      if (knn) {
        out.pool = std::make_shared<const rerank::AnchorPool>(
            rerank::build_anchor_pool(model, data, data.size(), inv.seed));
      }
      out.model = std::make_shared<const encoder::Model>(std::move(model));
      return out;
    };
    curve = eval::sweep_candidate_count(sets, r, counts, eval::SweepPhase::training, train_sets, factory);
  } else {
    throw UsageError("--phase must be inference or training");
  }
  for (const auto& pt : curve) {
    inv.log() << "count " << pt.count << " bleu " << pt.report.bleu << " (" << pt.wall_time_s << " s)\n";
  }
  write_csv(inv, o.out, eval::curve_csv(curve));
  return kExitOk;
}

int do_sweep_knn(const Invocation& inv, const SweepKnnOpts& o) {
  const auto sets = corpus::load_candidate_sets(o.sets);
  const auto anchors = load_examples(o.anchors_from);
  eval::Reranker base;
  base.method = rerank::Method::knn;
  base.model = std::make_shared<const encoder::Model>(load_model(o.model));
  base.include_greedy = !o.no_greedy;
  base.seed = inv.seed;
  const auto pools = parse_counts(o.pools, "pool size");
  const auto ks = parse_counts(o.ks, "k");
  const auto grid = eval::sweep_knn(base, anchors, sets, pools, ks);
  for (const auto& cell : grid) {
    if (!cell.report) inv.log() << "skip pool " << cell.pool_size << " k " << cell.k << ": " << cell.skip_reason << "\n";
  }
  write_csv(inv, o.out, eval::knn_grid_csv(grid));
  return kExitOk;
}

int do_diversity(const Invocation& inv, const DiversityOpts& o) {
  const auto sets = corpus::load_candidate_sets(o.sets);
  const auto d = eval::diversity(sets);
  Json hist = Json::object();
  for (const auto& [unique, n] : d.histogram) hist[std::to_string(unique)] = n;
  write_json(inv, o.out, Json{{"mean_unique", d.mean_unique}, {"n_sets", sets.size()}, {"histogram", hist}});
  return kExitOk;
}

int do_ab_build(const Invocation& inv, const ABBuildOpts& o) {
  if (o.runs.size() < 2) throw UsageError("ab-build needs at least two --runs");
  if (!o.names.empty() && o.names.size() != o.runs.size()) throw UsageError("--names must match --runs");
  const auto sets = corpus::load_candidate_sets(o.sets);
  const auto golds = eval::gold_map(sets);
  std::map<std::string, corpus::Context> contexts;
  for (const auto& cs : sets) contexts.emplace(cs.context.context_id, cs.context);
  std::vector<eval::EvalRun> runs;
  for (std::size_t i = 0; i < o.runs.size(); ++i) {
    runs.push_back(load_selections(o.runs[i], golds));
    if (!o.names.empty()) runs.back().method = o.names[i];
  }
  const auto ts = ab::ab_build_tasks(runs, contexts, o.tasks, inv.seed);
  write_json(inv, o.out, ab::to_json(ts));
  return kExitOk;
}

int do_ab_serve(const Invocation& inv, const ABServeOpts& o) {
  ab::ABStore store(ab::task_set_from_json(load_json(o.tasks)), o.store);
  ab::ABServer server(store, o.static_dir);
  const int port = server.bind(o.host, o.port);
  inv.log() << "serving " << store.tasks().tasks.size() << " tasks on http://" << o.host << ":" << port << "\n";
  server.listen();
  return kExitOk;
}

int do_ab_stats(const Invocation& inv, const ABStatsOpts& o) {
  const auto ts = ab::task_set_from_json(load_json(o.tasks));
  const auto judgments = ab::load_judgments(o.store);
  write_json(inv, o.out, ab::compute_stats(ts, judgments));
  return kExitOk;
}

int do_gradcheck(const Invocation& inv, GradOpts o) {
  o.g.seed = inv.seed;
  eval::Stopwatch watch;
  const auto results = encoder::run_grad_checks(o.g, encoder::default_grad_check_cases());
  Json cases = Json::array();
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_rel_error < o.tolerance;
    ok = ok && pass;
    cases.push_back(Json{{"case", r.c.name()}, {"max_rel_error", r.max_rel_error}, {"pass", pass}});
    inv.log() << r.c.name() << " max relative error " << r.max_rel_error << "\n";
  }
  inv.log() << "gradient check took " << watch.seconds() << " s\n";
  write_json(inv, o.out,
             Json{{"draws", o.g.draws}, {"dim", o.g.dim}, {"batch_size", o.g.batch_size}, {"eps", o.g.eps},
                  {"tolerance", o.tolerance}, {"cases", cases}, {"pass", ok}});
  if (!ok) throw InvariantError("analytic gradients disagree with finite differences");
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage response reranking for task-oriented dialogue", "todrr"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads")->envname("TODRR_THREADS")->capture_default_str();

  Invocation inv;
  inv.command = join_args(args);
  inv.out = &out;
  inv.err = &err;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", inv.seed, "Random seed")->capture_default_str();
  };

  SynthOpts synth_o;
  auto* synth = app.add_subcommand("synth", "Generate synthetic dialogues and candidate sets");
  synth->add_option("--dialogues", synth_o.dialogues)->capture_default_str();
  synth->add_option("--contexts", synth_o.cand.n_contexts)->capture_default_str();
  synth->add_option("--j", synth_o.cand.j, "Candidates per set")->capture_default_str();
  synth->add_option("--noise", synth_o.cand.noise)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  synth->add_option("--window", synth_o.cand.window)->capture_default_str();
  synth->add_option("--out", synth_o.out, "Candidate sets (JSONL)")->required();
  synth->add_option("--corpus-out", synth_o.corpus_out, "Dialogues (JSONL)");
  add_seed(synth);

  Stage1Opts s1_o;
  auto* s1 = app.add_subcommand("stage1-build", "Build response-selection examples");
  s1->add_option("--sets", s1_o.sets, "Candidate sets (JSONL)");
  s1->add_option("--corpus", s1_o.corpus, "Dialogues (JSONL)");
  s1->add_option("--window", s1_o.window)->capture_default_str();
  s1->add_option("--negatives", s1_o.negatives)->capture_default_str();
  s1->add_option("--out", s1_o.out)->required();
  add_seed(s1);

  Stage2Opts s2_o;
  auto* s2 = app.add_subcommand("stage2-build", "Build reranking examples from candidate sets");
  s2->add_option("--sets", s2_o.sets)->required();
  s2->add_option("--scoring", s2_o.scoring, "cosine|bleu|rouge|meteor")->capture_default_str();
  s2->add_flag("--no-balance", s2_o.no_balance);
  s2->add_flag("--single-positive", s2_o.single_positive);
  s2->add_flag("--no-dedup", s2_o.no_dedup);
  s2->add_option("--embedder-checkpoint", s2_o.embedder_checkpoint, "Encoder for cosine scoring");
  s2->add_option("--out", s2_o.out)->required();
  add_seed(s2);

  TrainOpts tr_o;
  auto* tr = app.add_subcommand("train", "Train the encoder");
  tr->add_option("--data", tr_o.data)->required();
  tr->add_option("--objective", tr_o.objective, "classification|triplet")->capture_default_str();
  tr->add_option("--stage", tr_o.stage, "s1|s2")->capture_default_str();
  tr->add_option("--init", tr_o.init, "fresh|from-checkpoint")->capture_default_str();
  tr->add_option("--checkpoint", tr_o.checkpoint);
  tr->add_option("--dim", tr_o.dim)->capture_default_str();
  tr->add_option("--min-freq", tr_o.min_freq)->capture_default_str();
  tr->add_option("--lr", tr_o.cfg.learning_rate)->capture_default_str();
  tr->add_option("--warmup", tr_o.cfg.warmup_fraction)->capture_default_str();
  tr->add_option("--weight-decay", tr_o.cfg.weight_decay)->capture_default_str();
  tr->add_option("--epochs", tr_o.cfg.epochs)->capture_default_str();
  tr->add_option("--batch-size", tr_o.batch_size, "0 picks 64 or 128 by objective")->capture_default_str();
  tr->add_option("--margin", tr_o.cfg.margin)->capture_default_str();
  tr->add_option("--max-seq-len", tr_o.cfg.max_seq_len)->capture_default_str();
  tr->add_option("--mode", tr_o.mode, "cross|bi")->capture_default_str();
  tr->add_option("--distance", tr_o.distance, "euclidean|cosine")->capture_default_str();
  tr->add_flag("--average-all-triplets", tr_o.cfg.average_all_triplets);
  tr->add_option("--out", tr_o.out)->required();
  add_seed(tr);

  AnchorsOpts an_o;
  auto* an = app.add_subcommand("anchors", "Encode an anchor pool");
  an->add_option("--model", an_o.model)->required();
  an->add_option("--data", an_o.data)->required();
  an->add_option("--n-anchors", an_o.n_anchors, "0 uses every example")->capture_default_str();
  an->add_option("--out", an_o.out)->required();
  add_seed(an);

  RerankOpts rr_o;
  auto add_rerank_opts = [](CLI::App* sub, RerankOpts& o) {
    sub->add_option("--sets", o.sets)->required();
    sub->add_option("--method", o.method, "class|knn|greedy|random|oracle-max|oracle-min")->required();
    sub->add_option("--model", o.model);
    sub->add_option("--pool", o.pool);
    sub->add_option("--k", o.k)->capture_default_str();
    sub->add_flag("--no-greedy", o.no_greedy, "Do not append the greedy response");
  };
  auto* rr = app.add_subcommand("rerank", "Select one response per candidate set");
  add_rerank_opts(rr, rr_o);
  rr->add_option("--out", rr_o.out)->required();
  add_seed(rr);

  EvalOpts ev_o;
  auto* ev = app.add_subcommand("eval", "Score selections against golds");
  ev->add_option("--sets", ev_o.sets)->required();
  ev->add_option("--selections", ev_o.selections)->required();
  ev->add_option("--out", ev_o.out);
  add_seed(ev);

  SweepCandOpts sc_o;
  auto* sc = app.add_subcommand("sweep-candidates", "Candidate-count sweep");
  add_rerank_opts(sc, sc_o.rr);
  sc->add_option("--counts", sc_o.counts)->capture_default_str();
  sc->add_option("--phase", sc_o.phase, "inference|training")->capture_default_str();
  sc->add_option("--train-sets", sc_o.train_sets);
  sc->add_option("--init-checkpoint", sc_o.init_checkpoint, "Model retrained at each count");
  sc->add_option("--scoring", sc_o.scoring)->capture_default_str();
  sc->add_option("--out", sc_o.out)->required();
  add_seed(sc);

  SweepKnnOpts sk_o;
  auto* sk = app.add_subcommand("sweep-knn", "Anchor-pool size by k sweep");
  sk->add_option("--sets", sk_o.sets)->required();
  sk->add_option("--model", sk_o.model)->required();
  sk->add_option("--anchors-from", sk_o.anchors_from)->required();
  sk->add_option("--pools", sk_o.pools)->capture_default_str();
  sk->add_option("--ks", sk_o.ks)->capture_default_str();
  sk->add_flag("--no-greedy", sk_o.no_greedy);
  sk->add_option("--out", sk_o.out)->required();
  add_seed(sk);

  DiversityOpts dv_o;
  auto* dv = app.add_subcommand("diversity", "Unique candidates per set");
  dv->add_option("--sets", dv_o.sets)->required();
  dv->add_option("--out", dv_o.out);
  add_seed(dv);

  ABBuildOpts ab_o;
  auto* abb = app.add_subcommand("ab-build", "Build blind A/B tasks from reranking runs");
  abb->add_option("--sets", ab_o.sets)->required();
  abb->add_option("--runs", ab_o.runs, "Selection files (JSONL), space or comma separated")->required()->delimiter(',');
  abb->add_option("--names", ab_o.names)->delimiter(',');
  abb->add_option("--tasks", ab_o.tasks)->capture_default_str();
  abb->add_option("--out", ab_o.out)->required();
  add_seed(abb);

  ABServeOpts as_o;
  auto* abs = app.add_subcommand("ab-serve", "Serve the A/B evaluation API");
  abs->add_option("--tasks", as_o.tasks)->required();
  abs->add_option("--store", as_o.store, "Judgment log (JSONL)")->required();
  abs->add_option("--host", as_o.host)->capture_default_str();
  abs->add_option("--port", as_o.port)->envname("TODRR_PORT")->capture_default_str();
  abs->add_option("--static", as_o.static_dir, "Frontend assets");
  add_seed(abs);

  ABStatsOpts st_o;
  auto* abst = app.add_subcommand("ab-stats", "Preference statistics from a judgment log");
  abst->add_option("--tasks", st_o.tasks)->required();
  abst->add_option("--store", st_o.store)->required();
  abst->add_option("--out", st_o.out);
  add_seed(abst);

  GradOpts gc_o;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gc->add_option("--draws", gc_o.g.draws)->capture_default_str();
  gc->add_option("--dim", gc_o.g.dim)->capture_default_str();
  gc->add_option("--batch", gc_o.g.batch_size)->capture_default_str();
  gc->add_option("--eps", gc_o.g.eps)->capture_default_str();
  gc->add_option("--tolerance", gc_o.tolerance)->capture_default_str();
  gc->add_option("--out", gc_o.out);
  add_seed(gc);

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << app.help();
    return kExitUsage;
  }

  try {
    if (threads == 0) throw UsageError("--threads must be >= 1");
    set_max_threads(threads);
    CLI::App* sub = app.get_subcommands().front();
    log_config(inv, *sub);
    const std::string name = sub->get_name();
    if (name == "synth") return do_synth(inv, synth_o);
    if (name == "stage1-build") return do_stage1(inv, s1_o);
    if (name == "stage2-build") return do_stage2(inv, s2_o);
    if (name == "train") return do_train(inv, tr_o);
    if (name == "anchors") return do_anchors(inv, an_o);
    if (name == "rerank") return do_rerank(inv, rr_o);
    if (name == "eval") return do_eval(inv, ev_o);
    if (name == "sweep-candidates") return do_sweep_candidates(inv, sc_o);
    if (name == "sweep-knn") return do_sweep_knn(inv, sk_o);
    if (name == "diversity") return do_diversity(inv, dv_o);
    if (name == "ab-build") return do_ab_build(inv, ab_o);
    if (name == "ab-serve") return do_ab_serve(inv, as_o);
    if (name == "ab-stats") return do_ab_stats(inv, st_o);
    if (name == "gradcheck") return do_gradcheck(inv, gc_o);
    throw UsageError("unknown subcommand " + name);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const InvariantError& e) {
    err << "invariant violated: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInvariant;
  }
}

}  // namespace todrr::cli
