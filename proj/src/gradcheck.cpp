#include "todrr/gradcheck.hpp"

#include <algorithm>

#include "todrr/error.hpp"
#include "todrr/random.hpp"
#include "todrr/synth.hpp"

namespace todrr::encoder {

std::string GradCheckCase::name() const {
  std::string n = std::string(to_string(objective)) + "/" + std::string(to_string(mode));
  if (objective == Objective::triplet) n += "/" + std::string(to_string(distance));
  return n;
}

std::vector<GradCheckCase> default_grad_check_cases() {
  std::vector<GradCheckCase> cases;
  for (Mode m : {Mode::cross, Mode::bi}) cases.push_back({Objective::classification, m, Distance::euclidean});
  for (Distance d : {Distance::euclidean, Distance::cosine}) {
    for (Mode m : {Mode::cross, Mode::bi}) cases.push_back({Objective::triplet, m, d});
  }
  return cases;
}

namespace {

std::vector<LabeledExample> draw_batch(std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 2) throw UsageError("gradient-check batch needs at least 2 examples");
  const auto dialogues = synth::synth_dialogues({std::max<std::size_t>(4, batch_size), seed});
  synth::CandidateOptions co;
  co.n_contexts = batch_size;
  co.j = 4;
  co.seed = seed;
  const auto sets = synth::synth_candidate_sets(dialogues, co);
  Rng rng(derive_seed(seed, 1));
  std::vector<int> labels(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) labels[i] = static_cast<int>(i % 2);
  rng.shuffle(labels);
  std::vector<LabeledExample> batch;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto& cs = sets[i];
    const std::string& resp = labels[i] == 1 ? cs.gold : cs.candidates[rng.index(cs.candidates.size())];
    batch.push_back({cs.context, resp, labels[i], Origin::self_generated});
  }
  return batch;
}

}  // namespace

std::vector<GradCheckResult> run_grad_checks(const GradCheckOptions& opts,
                                             const std::vector<GradCheckCase>& cases) {
  if (opts.draws == 0) throw UsageError("gradient check needs at least one draw");
  std::vector<GradCheckResult> results;
  for (const auto& c : cases) results.push_back({c, 0.0});
  for (std::size_t draw = 0; draw < opts.draws; ++draw) {
    const std::uint64_t seed = derive_seed(opts.seed, draw);
    const auto batch = draw_batch(opts.batch_size, seed);
    TrainConfig cfg;
    cfg.seed = seed;
    const Model model = make_model(build_vocab(batch, 1), opts.dim, cfg);
    for (auto& r : results) {
      cfg.mode = r.c.mode;
      cfg.distance = r.c.distance;
      r.max_rel_error = std::max(r.max_rel_error, grad_check(model, batch, r.c.objective, cfg, opts.eps));
    }
  }
  return results;
}

}  // namespace todrr::encoder
