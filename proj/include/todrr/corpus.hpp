#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "todrr/jsonl.hpp"

namespace todrr::corpus {

enum class Speaker { user, system };

std::string_view to_string(Speaker s);
Speaker parse_speaker(std::string_view s);

struct Utterance {
  Speaker speaker = Speaker::user;
  std::string text;

  bool operator==(const Utterance&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Utterance> turns;

  bool operator==(const Dialogue&) const = default;
};

// The most recent utterances preceding a target system turn.
struct Context {
  std::string context_id;
  std::vector<Utterance> utterances;
  std::size_t window_size = 3;

  bool operator==(const Context&) const = default;
};

struct CandidateSet {
  Context context;
  std::string gold;
  std::string greedy;
  std::vector<std::string> candidates;

  std::size_t j() const { return candidates.size(); }
  bool operator==(const CandidateSet&) const = default;
};

// Default context window (utterances, not turn pairs).
inline constexpr std::size_t kDefaultWindow = 3;

Json to_json(const Utterance& u);
Json to_json(const Dialogue& d);
Json to_json(const CandidateSet& cs);
Json context_to_json(const std::vector<Utterance>& utterances);

Utterance utterance_from_json(const Json& j);
Dialogue dialogue_from_json(const Json& j);
CandidateSet candidate_set_from_json(const Json& j);
std::vector<Utterance> utterances_from_json(const Json& j);

std::vector<Dialogue> load_corpus(const std::filesystem::path& path);
std::vector<CandidateSet> load_candidate_sets(const std::filesystem::path& path);
std::string serialize_corpus(std::span<const Dialogue> dialogues);
std::string serialize_candidate_sets(std::span<const CandidateSet> sets);

// Throws UsageError when target_turn is out of range, not a system turn, or
// window is 0.
Context build_context(const Dialogue& d, std::size_t target_turn, std::size_t window);

// Every (context, gold) pair obtainable from the system turns of a corpus
// (system turns with no preceding utterance are skipped).
struct ContextGold {
  Context context;
  std::string gold;
};
std::vector<ContextGold> context_gold_pairs(std::span<const Dialogue> corpus,
                                            std::size_t window);

// Returns the placeholder names ("value_phone") in text; throws DataError on
// unbalanced brackets or a bracketed span that is not [value_<name>].
std::vector<std::string> validate_delex(std::string_view text);

// Candidate list used at inference: the sampled candidates, optionally
// followed by the greedy response as the last entry.
std::vector<std::string> inference_candidates(const CandidateSet& cs, bool include_greedy);

}  // namespace todrr::corpus
