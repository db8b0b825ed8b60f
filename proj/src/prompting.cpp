#include "fewshot/prompting.hpp"

#include <fstream>

#include <fmt/format.h>

#include "fewshot/text.hpp"

namespace fewshot::prompting {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw Error(fmt::format("unknown chat role '{}'", s));
}

std::string_view to_string(PromptStyle s) {
  return s == PromptStyle::chat_history ? "chat_history" : "system_context";
}

PromptStyle parse_style(std::string_view s) {
  if (s == "chat_history") return PromptStyle::chat_history;
  if (s == "system_context") return PromptStyle::system_context;
  throw UsageError(fmt::format("unknown prompt style '{}' (expected chat_history or system_context)", s));
}

std::string task_description() {
  return "You are an expert assistant in the field of customer service.\n"
         "Your task is to help workers in the customer service department of a company.\n"
         "Your task is to classify the customer's question in order to help the customer service worker to answer "
         "the question.\n"
         "In order to help the worker, you MUST respond with the number and the name of one of the following "
         "classes you know.\n"
         "If you cannot answer the question, respond: \"-1 Unknown\".\n"
         "In case you reply with something else, you will be penalized.";
}

std::string class_listing(const corpus::LabelSpace& labels) {
  std::string out = "The classes are:";
  for (corpus::LabelId i = 0; i < labels.size(); ++i) out += fmt::format("\n{} {}", i, labels.name(i));
  return out;
}

std::string example_listing(const corpus::FewShotSample& sample) {
  std::string out = "Here are some examples of questions and their classes:";
  for (corpus::LabelId c = 0; c < sample.class_count(); ++c) {
    for (const auto& u : sample.instances[c]) out += fmt::format("\n{} {}", u.text, sample.labels.name(c));
  }
  return out;
}

PromptBundle build_prompt(const corpus::LabelSpace& labels, const corpus::FewShotSample& sample,
                          std::string_view query, PromptStyle style) {
  if (!(sample.labels == labels)) throw Error("few-shot sample was drawn over a different label space");
  corpus::validate(sample);
  if (text::trim(query).empty()) throw Error("query must be non-empty");

  PromptBundle b;
  b.style = style;
  b.class_count = labels.size();
  b.shot_count = sample.shots;
  const std::string header = task_description() + "\n\n" + class_listing(labels);
  if (style == PromptStyle::system_context) {
    b.messages.push_back({Role::system, header + "\n\n" + example_listing(sample)});
  } else {
    b.messages.push_back({Role::system, header});
    for (corpus::LabelId c = 0; c < sample.class_count(); ++c) {
      for (const auto& u : sample.instances[c]) {
        b.messages.push_back({Role::user, u.text});
        b.messages.push_back({Role::assistant, labels.name(c)});
      }
    }
  }
  b.messages.push_back({Role::user, std::string(query)});
  b.estimated_tokens = estimate_tokens(b.messages);
  return b;
}

std::size_t default_token_count(std::string_view s) { return (text::utf8_length(s) + 3) / 4; }

std::size_t estimate_tokens(std::span<const ChatMessage> messages, const TokenCounter& counter,
                            std::size_t per_message_overhead) {
  std::size_t total = 0;
  for (const auto& m : messages) total += counter(m.content) + per_message_overhead;
  return total;
}

std::size_t estimate_tokens(const PromptBundle& bundle, const TokenCounter& counter, std::size_t per_message_overhead) {
  return estimate_tokens(bundle.messages, counter, per_message_overhead);
}

BudgetCheck check_budget(std::size_t tokens, std::size_t limit, std::size_t reserve) {
  if (limit == 0) throw Error("context limit must be positive");
  BudgetCheck c;
  c.margin = static_cast<std::int64_t>(limit) - static_cast<std::int64_t>(tokens) - static_cast<std::int64_t>(reserve);
  c.pass = c.margin >= 0;
  return c;
}

CostEstimate estimate_cost(std::int64_t prompt_tokens, std::int64_t completion_tokens, const Rates& rates) {
  if (prompt_tokens < 0 || completion_tokens < 0) throw Error("token counts must be non-negative");
  if (rates.prompt_per_1k < 0 || rates.completion_per_1k < 0) throw Error("rates must be non-negative");
  CostEstimate c;
  c.prompt_tokens = prompt_tokens;
  c.completion_tokens = completion_tokens;
  c.price_per_1k_prompt = rates.prompt_per_1k;
  c.price_per_1k_completion = rates.completion_per_1k;
  c.total_usd = (static_cast<double>(prompt_tokens) * rates.prompt_per_1k +
                 static_cast<double>(completion_tokens) * rates.completion_per_1k) /
                1000.0;
  return c;
}

CostEstimate accumulate(const CostEstimate& a, const CostEstimate& b) {
  return estimate_cost(a.prompt_tokens + b.prompt_tokens, a.completion_tokens + b.completion_tokens,
                       Rates{b.price_per_1k_prompt, b.price_per_1k_completion});
}

nlohmann::json to_json(const CostEstimate& c) {
  return nlohmann::json{{"prompt_tokens", c.prompt_tokens},
                        {"completion_tokens", c.completion_tokens},
                        {"price_per_1k_prompt", c.price_per_1k_prompt},
                        {"price_per_1k_completion", c.price_per_1k_completion},
                        {"total_usd", c.total_usd}};
}

PriceTable parse_price_table(const nlohmann::json& j) {
  PriceTable table;
  try {
    for (const auto& [model, entry] : j.items()) {
      ModelPricing p;
      p.rates.prompt_per_1k = entry.at("prompt_rate").get<double>();
      p.rates.completion_per_1k = entry.at("completion_rate").get<double>();
      p.context_limit = entry.at("context_limit").get<std::size_t>();
      if (p.rates.prompt_per_1k < 0 || p.rates.completion_per_1k < 0 || p.context_limit == 0) {
        throw Error(fmt::format("price table entry '{}' has invalid values", model));
      }
      table.emplace(model, p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed price table: ") + e.what());
  }
  return table;
}

PriceTable load_price_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return parse_price_table(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

PriceTable default_price_table() {
  return parse_price_table(nlohmann::json::parse(R"({
    "gpt-3.5-turbo": {"prompt_rate": 0.002, "completion_rate": 0.002, "context_limit": 4096},
    "gpt-4": {"prompt_rate": 0.03, "completion_rate": 0.03, "context_limit": 8192}
  })"));
}

std::string render_messages(std::span<const ChatMessage> messages) {
  std::string out;
  for (const auto& m : messages) out += fmt::format("[{}]\n{}\n\n", to_string(m.role), m.content);
  return out;
}

nlohmann::json to_json(std::span<const ChatMessage> messages) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : messages) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return arr;
}

}  // namespace fewshot::prompting
