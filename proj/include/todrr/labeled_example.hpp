#pragma once

#include <string>
#include <string_view>

#include "todrr/corpus.hpp"

namespace todrr {

enum class Origin { gold, random_negative, self_generated };

std::string_view to_string(Origin o);
Origin parse_origin(std::string_view s);

// A (context, response, label) training tuple.
struct LabeledExample {
  corpus::Context context;
  std::string response;
  int label = 0;
  Origin origin = Origin::self_generated;

  bool operator==(const LabeledExample&) const = default;
};

Json to_json(const LabeledExample& e);
LabeledExample labeled_example_from_json(const Json& j);

}  // namespace todrr
