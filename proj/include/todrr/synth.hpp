#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "todrr/corpus.hpp"

namespace todrr::synth {

// Stand-in for an overgenerating sampler. Each candidate is gold with every
// whitespace token independently perturbed with probability `noise`; a
// perturbation is one of delete, substitute (uniform draw from
// `vocabulary`, or from gold's own tokens when empty) or duplicate. The
// greedy stand-in uses noise / 2. A candidate with no perturbation is gold
// verbatim. The returned context is empty; callers attach it.
corpus::CandidateSet synth_candidates(const std::string& gold, std::size_t j, double noise,
                                      std::uint64_t seed,
                                      std::span<const std::string> vocabulary = {});

struct CorpusOptions {
  std::size_t n_dialogues = 100;
  std::uint64_t seed = 13;
};

// Template-generated, delexicalised multi-domain dialogues.
std::vector<corpus::Dialogue> synth_dialogues(const CorpusOptions& opts);

// Sorted distinct whitespace tokens over every utterance.
std::vector<std::string> corpus_vocabulary(std::span<const corpus::Dialogue> dialogues);

struct CandidateOptions {
  std::size_t n_contexts = 500;
  std::size_t j = 20;
  double noise = 0.3;
  std::size_t window = corpus::kDefaultWindow;
  std::uint64_t seed = 13;
};

// Candidate sets for the first n_contexts system turns of `dialogues`.
std::vector<corpus::CandidateSet> synth_candidate_sets(std::span<const corpus::Dialogue> dialogues,
                                                       const CandidateOptions& opts);

}  // namespace todrr::synth
