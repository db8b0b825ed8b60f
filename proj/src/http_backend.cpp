#include "fewshot/http_backend.hpp"

#include <cstdlib>

#include <fmt/format.h>

#include "fewshot/httplib_config.hpp"

namespace fewshot::icl {

HttpChatBackend::HttpChatBackend(HttpBackendConfig config, BackendInfo info)
    : config_(std::move(config)), info_(std::move(info)) {
  if (config_.api_key.empty()) throw UsageError("http backend needs an API key (set OPENAI_API_KEY)");
  info_.deterministic = false;
}

nlohmann::json HttpChatBackend::request_body(const HttpBackendConfig& config,
                                             const std::vector<ChatMessage>& messages) {
  return nlohmann::json{{"model", config.model},
                        {"messages", prompting::to_json(messages)},
                        {"temperature", 0},
                        {"max_tokens", config.max_tokens}};
}

std::string HttpChatBackend::complete(const std::vector<ChatMessage>& messages) {
  httplib::Client client(config_.base_url);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  client.set_bearer_token_auth(config_.api_key);

  auto res = client.Post("/v1/chat/completions", request_body(config_, messages).dump(), "application/json");
  if (!res) throw TransportError(fmt::format("request to {} failed: {}", config_.base_url, httplib::to_string(res.error())));
  if (res->status == 429 || res->status >= 500) {
    throw TransportError(fmt::format("server returned {}: {}", res->status, res->body.substr(0, 200)));
  }
  if (res->status != 200) throw Error(fmt::format("server returned {}: {}", res->status, res->body.substr(0, 500)));
  try {
    auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("unexpected completion payload: {}", e.what()));
  }
}

std::string api_key_from_env() {
  const char* key = std::getenv("OPENAI_API_KEY");
  if (key == nullptr || *key == '\0') {
    throw UsageError("OPENAI_API_KEY is not set; export it or use --backend mock with --transcript");
  }
  return key;
}

}  // namespace fewshot::icl
