#include "todrr/synth.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "todrr/error.hpp"
#include "todrr/random.hpp"

namespace todrr::synth {
namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string perturb(const std::string& gold, const std::vector<std::string>& tokens, double noise,
                    std::span<const std::string> vocabulary, Rng& rng) {
  std::vector<std::string> out;
  bool changed = false;
  for (const auto& tok : tokens) {
    if (!rng.bernoulli(noise)) {
      out.push_back(tok);
      continue;
    }
    changed = true;
    switch (rng.index(3)) {
      case 0:  // delete
        break;
      case 1:  // substitute
        out.push_back(vocabulary.empty() ? tokens[rng.index(tokens.size())]
                                         : vocabulary[rng.index(vocabulary.size())]);
        break;
      default:  // duplicate
        out.push_back(tok);
        out.push_back(tok);
        break;
    }
  }
  if (!changed) return gold;
  if (out.empty()) out.push_back(tokens.front());
  return join(out);
}

struct Step {
  std::vector<std::string> user;
  std::vector<std::string> system;
};

struct Domain {
  std::string name;
  std::vector<Step> steps;
};

const std::vector<Domain>& domains() {
  static const std::vector<Domain> kDomains = {
      {"restaurant",
       {{{"i am looking for a [value_food] restaurant in the [value_area] .",
          "can you find me a place to eat that serves [value_food] food ?",
          "i want to find a restaurant in the [value_area] of town ."},
         {"there are [value_choice] [value_food] restaurants in the [value_area] . do you have a price range in mind ?",
          "i found [value_choice] restaurants serving [value_food] food . what price range would you like ?",
          "what price range are you looking for ? there are [value_choice] options ."}},
        {{"i would like something [value_pricerange] please .",
          "a [value_pricerange] one would be great .",
          "price does not matter , just pick one ."},
         {"[value_name] is a [value_pricerange] [value_food] restaurant in the [value_area] . would you like me to book a table ?",
          "i recommend [value_name] , it serves [value_food] food at a [value_pricerange] price . shall i book it ?",
          "how about [value_name] ? it is in the [value_area] and is [value_pricerange] ."}},
        {{"yes , please book a table for [value_people] people at [value_time] on [value_day] .",
          "can you reserve it for [value_people] at [value_time] ?",
          "book it for [value_day] at [value_time] please ."},
         {"i have booked a table for [value_people] people . your reference number is [value_reference] .",
          "booking was successful . the table will be reserved for 15 minutes . reference number : [value_reference] .",
          "your table is reserved on [value_day] at [value_time] . the reference is [value_reference] ."}},
        {{"what is the phone number of the restaurant ?",
          "could i get the address and phone number ?",
          "can you give me the postcode as well ?"},
         {"the phone number is [value_phone] and the address is [value_address] .",
          "sure , they are located at [value_address] , postcode [value_postcode] .",
          "you can reach them at [value_phone] ."}}}},
      {"hotel",
       {{{"i need a place to stay in the [value_area] .",
          "i am looking for a hotel with free parking .",
          "can you help me find a guesthouse with free wifi ?"},
         {"there are [value_choice] hotels that fit your needs . do you have a preferred star rating ?",
          "i have [value_choice] guesthouses available . which area would you prefer ?",
          "do you need parking or internet at the hotel ?"}},
        {{"i would prefer [value_stars] stars .",
          "the [value_area] would be nice , with free parking .",
          "it should be [value_pricerange] ."},
         {"[value_name] is a [value_stars] star hotel in the [value_area] with free parking and wifi .",
          "i recommend [value_name] , a [value_pricerange] guesthouse with [value_stars] stars .",
          "how about [value_name] ? it has free wifi and parking ."}},
        {{"please book it for [value_people] people for [value_stay] nights starting [value_day] .",
          "can you book a room for [value_stay] nights ?",
          "yes , book it for [value_people] people ."},
         {"your room is booked for [value_stay] nights . the reference number is [value_reference] .",
          "booking was successful for [value_people] guests starting [value_day] . reference : [value_reference] .",
          "i have reserved the room . your confirmation number is [value_reference] ."}},
        {{"what is the address of the hotel ?",
          "can i have the phone number of the hotel ?",
          "does it have internet ?"},
         {"the hotel is at [value_address] and the phone number is [value_phone] .",
          "yes , the hotel offers free wifi and parking .",
          "the postcode of the hotel is [value_postcode] ."}}}},
      {"train",
       {{{"i need a train from [value_departure] to [value_destination] .",
          "are there any trains leaving [value_departure] on [value_day] ?",
          "i am looking for a train to [value_destination] ."},
         {"there are [value_choice] trains from [value_departure] to [value_destination] . what time would you like to leave ?",
          "what day and time would you like to travel ?",
          "i have [value_choice] trains on [value_day] . when would you like to depart ?"}},
        {{"i want to leave after [value_leaveat] .",
          "i need to arrive by [value_arriveby] .",
          "anything leaving after [value_leaveat] on [value_day] is fine ."},
         {"[value_id] leaves at [value_leaveat] and arrives at [value_arriveby] . would you like to book it ?",
          "the earliest train departs at [value_leaveat] and arrives by [value_arriveby] . shall i book seats ?",
          "train [value_id] arrives at [value_arriveby] . the travel time is [value_duration] minutes ."}},
        {{"please book [value_people] tickets .",
          "yes , book it for [value_people] people .",
          "i would like to book one seat ."},
         {"i have booked [value_people] tickets . the total fee is [value_price] payable at the station . reference : [value_reference] .",
          "booking was successful , the reference number is [value_reference] .",
          "your seats are reserved . the fee of [value_price] is payable at the station ."}},
        {{"what is the travel time ?",
          "how much does the ticket cost ?",
          "what is the train id ?"},
         {"the travel time is [value_duration] minutes .",
          "the ticket costs [value_price] per person .",
          "the train id is [value_id] ."}}}},
      {"taxi",
       {{{"i need a taxi from [value_departure] .",
          "can you book me a taxi to [value_destination] ?",
          "i would like a cab please ."},
         {"where will you be departing from ?",
          "what time would you like the taxi to pick you up ?",
          "sure , where would you like to go ?"}},
        {{"i want to leave at [value_leaveat] .",
          "i need to arrive by [value_arriveby] .",
          "pick me up at [value_departure] at [value_leaveat] ."},
         {"i have booked a [value_car] for you . the contact number is [value_phone] .",
          "your taxi is booked . look for a [value_car] , contact number [value_phone] .",
          "booking completed ! a [value_car] will pick you up at [value_leaveat] ."}},
        {{"what car will it be ?",
          "can i have the contact number ?",
          "what is the phone number for the taxi ?"},
         {"it will be a [value_car] .",
          "the contact number is [value_phone] .",
          "you can call the driver at [value_phone] ."}}}},
      {"attraction",
       {{{"are there any museums in the [value_area] ?",
          "i am looking for something fun to do in the [value_area] .",
          "can you recommend a college to visit ?"},
         {"there are [value_choice] attractions in the [value_area] . what type are you interested in ?",
          "i recommend [value_name] in the [value_area] . entrance is [value_price] .",
          "[value_name] is a great [value_type] to visit . it is free to enter ."}},
        {{"what is the entrance fee ?",
          "can i get the address and postcode ?",
          "what are the opening hours ?"},
         {"the entrance fee is [value_price] .",
          "the address is [value_address] and the postcode is [value_postcode] .",
          "it is open from [value_open] every day ."}},
        {{"what is the phone number ?",
          "which area is it in ?",
          "is it free ?"},
         {"their phone number is [value_phone] .",
          "it is located in the [value_area] of town .",
          "yes , admission is free ."}}}},
  };
  return kDomains;
}

const Step& closing() {
  static const Step kClose = {
      {"thank you , that is all i need .", "thanks , goodbye .", "great , thank you for your help ."},
      {"you are welcome . have a great day !", "thank you for using our service . goodbye .",
       "glad i could help . enjoy your stay !"}};
  return kClose;
}

}  // namespace

corpus::CandidateSet synth_candidates(const std::string& gold, std::size_t j, double noise,
                                      std::uint64_t seed, std::span<const std::string> vocabulary) {
  const auto tokens = split_ws(gold);
  if (tokens.empty()) throw UsageError("gold response has no tokens");
  if (j == 0) throw UsageError("candidate count j must be >= 1");
  if (noise < 0.0 || noise > 1.0) throw UsageError("noise must lie in [0, 1]");
  corpus::CandidateSet cs;
  cs.gold = gold;
  Rng rng(seed);
  cs.candidates.reserve(j);
  for (std::size_t k = 0; k < j; ++k) cs.candidates.push_back(perturb(gold, tokens, noise, vocabulary, rng));
  Rng greedy_rng(derive_seed(seed, 0x67726565));
  cs.greedy = perturb(gold, tokens, noise / 2.0, vocabulary, greedy_rng);
  return cs;
}

std::vector<corpus::Dialogue> synth_dialogues(const CorpusOptions& opts) {
  const auto& doms = domains();
  std::vector<corpus::Dialogue> out;
  out.reserve(opts.n_dialogues);
  for (std::size_t n = 0; n < opts.n_dialogues; ++n) {
    Rng rng(derive_seed(opts.seed, n));
    corpus::Dialogue d;
    d.id = "synth" + std::to_string(n);
    // One or two domains per dialogue, each contributing a prefix of its steps.
    const std::size_t n_domains = 1 + rng.index(2);
    const std::size_t first = rng.index(doms.size());
    const std::size_t second = (first + 1 + rng.index(doms.size() - 1)) % doms.size();
    for (std::size_t k = 0; k < n_domains; ++k) {
      const Domain& dom = doms[k == 0 ? first : second];
      const std::size_t n_steps = 2 + rng.index(dom.steps.size() - 1);
      for (std::size_t s = 0; s < n_steps; ++s) {
        const Step& step = dom.steps[s];
        d.turns.push_back({corpus::Speaker::user, step.user[rng.index(step.user.size())]});
        d.turns.push_back({corpus::Speaker::system, step.system[rng.index(step.system.size())]});
      }
    }
    d.turns.push_back({corpus::Speaker::user, closing().user[rng.index(closing().user.size())]});
    d.turns.push_back({corpus::Speaker::system, closing().system[rng.index(closing().system.size())]});
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<std::string> corpus_vocabulary(std::span<const corpus::Dialogue> dialogues) {
  std::set<std::string> vocab;
  for (const auto& d : dialogues) {
    for (const auto& u : d.turns) {
      for (auto& t : split_ws(u.text)) vocab.insert(std::move(t));
    }
  }
  return {vocab.begin(), vocab.end()};
}

std::vector<corpus::CandidateSet> synth_candidate_sets(std::span<const corpus::Dialogue> dialogues,
                                                       const CandidateOptions& opts) {
  const auto vocab = corpus_vocabulary(dialogues);
  std::vector<corpus::CandidateSet> out;
  for (const auto& pair : corpus::context_gold_pairs(dialogues, opts.window)) {
    if (out.size() == opts.n_contexts) break;
    auto cs = synth_candidates(pair.gold, opts.j, opts.noise, derive_seed(opts.seed, out.size()), vocab);
    cs.context = pair.context;
    out.push_back(std::move(cs));
  }
  if (out.size() < opts.n_contexts) {
    throw DataError("corpus yields only " + std::to_string(out.size()) + " contexts, " +
                    std::to_string(opts.n_contexts) + " requested");
  }
  return out;
}

}  // namespace todrr::synth
