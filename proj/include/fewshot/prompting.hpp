#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewshot/corpus.hpp"
#include "fewshot/error.hpp"

namespace fewshot::prompting {

enum class Role { system, user, assistant };
std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

enum class PromptStyle { chat_history, system_context };
std::string_view to_string(PromptStyle s);
PromptStyle parse_style(std::string_view s);

struct PromptBundle {
  std::vector<ChatMessage> messages;
  PromptStyle style = PromptStyle::system_context;
  std::size_t estimated_tokens = 0;
  std::size_t class_count = 0;
  std::size_t shot_count = 0;
};

// Context limits of the two chat models the toolkit was calibrated against.
inline constexpr std::size_t kGpt35ContextLimit = 4096;
inline constexpr std::size_t kGpt4ContextLimit = 32768;

inline constexpr std::size_t kMessageOverhead = 4;
inline constexpr std::size_t kDefaultCompletionReserve = 16;

// Task description block, ending with the abstention and penalty sentences.
std::string task_description();

// "The classes are:" followed by one "<index> <label_name>" line per class.
std::string class_listing(const corpus::LabelSpace& labels);

// "Here are some examples..." followed by one "<utterance> <label_name>" line
// per example, grouped by class in label order.
std::string example_listing(const corpus::FewShotSample& sample);

// system_context: one system message (description, classes, examples) and the
// bare query as user. chat_history: one system message (description, classes),
// then a user/assistant turn per example (utterance -> label name), then the
// query. Throws Error if the sample does not cover every class.
PromptBundle build_prompt(const corpus::LabelSpace& labels, const corpus::FewShotSample& sample,
                          std::string_view query, PromptStyle style);

using TokenCounter = std::function<std::size_t(std::string_view)>;

// ceil(code points / 4).
std::size_t default_token_count(std::string_view text);

std::size_t estimate_tokens(std::span<const ChatMessage> messages, const TokenCounter& counter = default_token_count,
                            std::size_t per_message_overhead = kMessageOverhead);
std::size_t estimate_tokens(const PromptBundle& bundle, const TokenCounter& counter = default_token_count,
                            std::size_t per_message_overhead = kMessageOverhead);

struct BudgetCheck {
  bool pass = false;
  // limit - tokens - reserve; negative when over budget.
  std::int64_t margin = 0;
};

BudgetCheck check_budget(std::size_t tokens, std::size_t limit, std::size_t reserve = kDefaultCompletionReserve);

struct Rates {
  double prompt_per_1k = 0;
  double completion_per_1k = 0;
};

struct CostEstimate {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double price_per_1k_prompt = 0;
  double price_per_1k_completion = 0;
  double total_usd = 0;
};

// total = (prompt * rate_p + completion * rate_c) / 1000. Negative inputs are errors.
CostEstimate estimate_cost(std::int64_t prompt_tokens, std::int64_t completion_tokens, const Rates& rates);

// Sums token counts and recomputes the total at the shared rates.
CostEstimate accumulate(const CostEstimate& a, const CostEstimate& b);

nlohmann::json to_json(const CostEstimate& c);

struct ModelPricing {
  Rates rates;
  std::size_t context_limit = 0;
};

using PriceTable = std::map<std::string, ModelPricing>;

// {model: {prompt_rate, completion_rate, context_limit}}
PriceTable parse_price_table(const nlohmann::json& j);
PriceTable load_price_table(const std::string& path);
// The table shipped in data/prices.json, compiled in.
PriceTable default_price_table();

// Plain-text rendering used for golden files: each message as "[role]" on its
// own line followed by the content and a blank line.
std::string render_messages(std::span<const ChatMessage> messages);

nlohmann::json to_json(std::span<const ChatMessage> messages);

}  // namespace fewshot::prompting
