#include "todrr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include "todrr/error.hpp"

namespace todrr::corpus {
namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

bool placeholder_name_ok(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return std::islower(c) || std::isdigit(c) || c == '_';
  });
}

}  // namespace

std::string_view to_string(Speaker s) { return s == Speaker::user ? "user" : "system"; }

Speaker parse_speaker(std::string_view s) {
  if (s == "user") return Speaker::user;
  if (s == "system") return Speaker::system;
  throw DataError("unknown speaker \"" + std::string(s) + "\"");
}

Json to_json(const Utterance& u) {
  return Json{{"speaker", std::string(to_string(u.speaker))}, {"text", u.text}};
}

Json context_to_json(const std::vector<Utterance>& utterances) {
  Json arr = Json::array();
  for (const auto& u : utterances) arr.push_back(to_json(u));
  return arr;
}

Json to_json(const Dialogue& d) {
  return Json{{"id", d.id}, {"turns", context_to_json(d.turns)}};
}

Json to_json(const CandidateSet& cs) {
  return Json{{"context_id", cs.context.context_id},
              {"context", context_to_json(cs.context.utterances)},
              {"gold", cs.gold},
              {"greedy", cs.greedy},
              {"candidates", cs.candidates}};
}

Utterance utterance_from_json(const Json& j) {
  Utterance u;
  u.speaker = parse_speaker(require_string(j, "speaker"));
  u.text = require_string(j, "text");
  if (blank(u.text)) throw DataError("utterance text is empty");
  return u;
}

std::vector<Utterance> utterances_from_json(const Json& j) {
  if (!j.is_array()) throw DataError("expected an array of utterances");
  std::vector<Utterance> out;
  out.reserve(j.size());
  for (const auto& u : j) out.push_back(utterance_from_json(u));
  return out;
}

Dialogue dialogue_from_json(const Json& j) {
  Dialogue d;
  d.id = require_string(j, "id");
  d.turns = utterances_from_json(require(j, "turns"));
  if (d.turns.empty()) throw DataError("dialogue \"" + d.id + "\" has no turns");
  return d;
}

CandidateSet candidate_set_from_json(const Json& j) {
  CandidateSet cs;
  cs.context.context_id = require_string(j, "context_id");
  cs.context.utterances = utterances_from_json(require(j, "context"));
  cs.context.window_size = std::max<std::size_t>(1, cs.context.utterances.size());
  cs.gold = require_string(j, "gold");
  cs.greedy = require_string(j, "greedy");
  if (blank(cs.gold)) throw DataError("gold response is empty");
  if (blank(cs.greedy)) throw DataError("greedy response is empty");
  const Json& cands = require(j, "candidates");
  if (!cands.is_array()) throw DataError("field \"candidates\" must be an array");
  if (cands.empty()) throw DataError("candidate set \"" + cs.context.context_id + "\" has no candidates");
  for (const auto& c : cands) {
    if (!c.is_string()) throw DataError("candidates must be strings");
    cs.candidates.push_back(c.get<std::string>());
  }
  return cs;
}

std::vector<Dialogue> load_corpus(const std::filesystem::path& path) {
  std::vector<Dialogue> out;
  std::unordered_set<std::string> ids;
  read_jsonl(path, [&](const Json& j, std::size_t) {
    Dialogue d = dialogue_from_json(j);
    if (!ids.insert(d.id).second) throw DataError("duplicate dialogue id \"" + d.id + "\"");
    out.push_back(std::move(d));
  });
  return out;
}

std::vector<CandidateSet> load_candidate_sets(const std::filesystem::path& path) {
  std::vector<CandidateSet> out;
  read_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(candidate_set_from_json(j)); });
  return out;
}

std::string serialize_corpus(std::span<const Dialogue> dialogues) {
  std::vector<Json> recs;
  for (const auto& d : dialogues) recs.push_back(to_json(d));
  return to_jsonl(recs);
}

std::string serialize_candidate_sets(std::span<const CandidateSet> sets) {
  std::vector<Json> recs;
  for (const auto& s : sets) recs.push_back(to_json(s));
  return to_jsonl(recs);
}

Context build_context(const Dialogue& d, std::size_t target_turn, std::size_t window) {
  if (window == 0) throw UsageError("context window must be >= 1");
  if (target_turn >= d.turns.size()) {
    throw UsageError("target turn " + std::to_string(target_turn) + " out of range for dialogue \"" +
                     d.id + "\"");
  }
  if (d.turns[target_turn].speaker != Speaker::system) {
    throw UsageError("target turn " + std::to_string(target_turn) + " of \"" + d.id +
                     "\" is not a system turn");
  }
  Context c;
  c.context_id = d.id + ":" + std::to_string(target_turn);
  c.window_size = window;
  const std::size_t begin = target_turn > window ? target_turn - window : 0;
  c.utterances.assign(d.turns.begin() + static_cast<std::ptrdiff_t>(begin),
                      d.turns.begin() + static_cast<std::ptrdiff_t>(target_turn));
  return c;
}

std::vector<ContextGold> context_gold_pairs(std::span<const Dialogue> corpus, std::size_t window) {
  std::vector<ContextGold> out;
  for (const auto& d : corpus) {
    for (std::size_t t = 1; t < d.turns.size(); ++t) {
      if (d.turns[t].speaker != Speaker::system) continue;
      out.push_back({build_context(d, t, window), d.turns[t].text});
    }
  }
  return out;
}

std::vector<std::string> validate_delex(std::string_view text) {
  static constexpr std::string_view kPrefix = "value_";
  std::vector<std::string> names;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ']') throw DataError("unbalanced ']' at offset " + std::to_string(i));
    if (text[i] != '[') {
      ++i;
      continue;
    }
    const std::size_t close = text.find_first_of("[]", i + 1);
    if (close == std::string_view::npos || text[close] != ']') {
      throw DataError("unbalanced '[' at offset " + std::to_string(i));
    }
    const std::string_view inner = text.substr(i + 1, close - i - 1);
    if (!inner.starts_with(kPrefix) || !placeholder_name_ok(inner.substr(kPrefix.size()))) {
      throw DataError("malformed placeholder \"[" + std::string(inner) + "]\"");
    }
    names.emplace_back(inner);
    i = close + 1;
  }
  return names;
}

std::vector<std::string> inference_candidates(const CandidateSet& cs, bool include_greedy) {
  std::vector<std::string> out = cs.candidates;
  if (include_greedy) out.push_back(cs.greedy);
  return out;
}

}  // namespace todrr::corpus
