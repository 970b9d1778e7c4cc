#include "todrr/labeled_example.hpp"

#include "todrr/error.hpp"

namespace todrr {

std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::gold: return "gold";
    case Origin::random_negative: return "random_negative";
    case Origin::self_generated: return "self_generated";
  }
  return "?";
}

Origin parse_origin(std::string_view s) {
  if (s == "gold") return Origin::gold;
  if (s == "random_negative") return Origin::random_negative;
  if (s == "self_generated") return Origin::self_generated;
  throw DataError("unknown origin \"" + std::string(s) + "\"");
}

Json to_json(const LabeledExample& e) {
  return Json{{"context_id", e.context.context_id},
              {"context", corpus::context_to_json(e.context.utterances)},
              {"response", e.response},
              {"label", e.label},
              {"origin", std::string(to_string(e.origin))}};
}

LabeledExample labeled_example_from_json(const Json& j) {
  LabeledExample e;
  e.context.context_id = require_string(j, "context_id");
  e.context.utterances = corpus::utterances_from_json(require(j, "context"));
  e.context.window_size = std::max<std::size_t>(1, e.context.utterances.size());
  e.response = require_string(j, "response");
  const Json& label = require(j, "label");
  if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1)) {
    throw DataError("label must be 0 or 1");
  }
  e.label = label.get<int>();
  e.origin = parse_origin(require_string(j, "origin"));
  if (e.origin == Origin::gold && e.label != 1) throw DataError("gold examples must have label 1");
  return e;
}

}  // namespace todrr
