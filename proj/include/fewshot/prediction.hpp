#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "fewshot/corpus.hpp"

namespace fewshot::icl {

enum class Outcome { label, abstain, parse_failed };

enum class ParseRoute { exact_pair, name_only, index_only, fuzzy, abstain_token, failed };

std::string_view to_string(Outcome o);
std::string_view to_string(ParseRoute r);
Outcome parse_outcome(std::string_view s);
ParseRoute parse_route(std::string_view s);

struct Prediction {
  Outcome outcome = Outcome::parse_failed;
  corpus::LabelId label = 0;  // meaningful only when outcome == label
  std::string raw_text;
  ParseRoute route = ParseRoute::failed;

  bool has_label() const { return outcome == Outcome::label; }
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

nlohmann::json to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);

}  // namespace fewshot::icl
