#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "fewshot/icl.hpp"

namespace fewshot::icl {

struct HttpBackendConfig {
  // Scheme, host and optional port, e.g. "https://api.openai.com".
  std::string base_url = "https://api.openai.com";
  std::string model = "gpt-3.5-turbo";
  std::string api_key;
  std::size_t max_tokens = prompting::kDefaultCompletionReserve;
  std::chrono::seconds timeout{60};
};

// OpenAI-compatible chat completions client with temperature 0. Connection
// failures, 429 and 5xx raise TransportError; other non-200 replies raise Error.
class HttpChatBackend final : public ChatBackend {
 public:
  HttpChatBackend(HttpBackendConfig config, BackendInfo info);

  const BackendInfo& info() const override { return info_; }
  std::string complete(const std::vector<ChatMessage>& messages) override;

  static nlohmann::json request_body(const HttpBackendConfig& config, const std::vector<ChatMessage>& messages);

 private:
  HttpBackendConfig config_;
  BackendInfo info_;
};

// Reads OPENAI_API_KEY; throws UsageError naming the variable when unset.
std::string api_key_from_env();

}  // namespace fewshot::icl
