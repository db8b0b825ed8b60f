#include <doctest.h>

#include <cstdlib>
#include <thread>

#include "fewshot/http_backend.hpp"
#include "fewshot/httplib_config.hpp"
#include "icl_fixture.hpp"

using namespace fewshot;
using namespace fewshot::icl;
using nlohmann::json;

namespace {

// Fake chat-completions endpoint. The reply depends on the last message:
// "rate-limit" -> 429, "crash" -> 500, "forbidden" -> 403, "garbage" -> 200
// with a non-conforming body, otherwise an echo of the request fields.
struct FakeApi {
  FakeApi() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      last_body = body;
      last_auth = req.get_header_value("Authorization");
      const auto content = body.at("messages").back().at("content").get<std::string>();
      if (content == "rate-limit") {
        res.status = 429;
      } else if (content == "crash") {
        res.status = 500;
      } else if (content == "forbidden") {
        res.status = 403;
      } else if (content == "garbage") {
        res.set_content("{\"nothing\": 1}", "application/json");
      } else {
        json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", "2 exchange_rate"}}}}}}};
        res.set_content(reply.dump(), "application/json");
      }
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
  }
  ~FakeApi() {
    server.stop();
    thread.join();
  }

  HttpBackendConfig config() const {
    HttpBackendConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port);
    c.api_key = "test-key";
    c.timeout = std::chrono::seconds(5);
    return c;
  }

  httplib::Server server;
  int port = 0;
  std::thread thread;
  json last_body;
  std::string last_auth;
};

std::vector<ChatMessage> ask(const std::string& content) {
  return {{prompting::Role::system, "classify"}, {prompting::Role::user, content}};
}

}  // namespace

TEST_CASE("http backend sends a deterministic chat request") {
  FakeApi api;
  HttpChatBackend backend(api.config(), fewshot::testing::mock_info());
  CHECK(backend.complete(ask("hello")) == "2 exchange_rate");
  CHECK(api.last_auth == "Bearer test-key");
  CHECK(api.last_body.at("temperature") == 0);
  CHECK(api.last_body.at("model") == "gpt-3.5-turbo");
  CHECK(api.last_body.at("max_tokens") == 16);
  CHECK(api.last_body.at("messages").size() == 2);
  CHECK(api.last_body.at("messages")[0].at("role") == "system");
  CHECK_FALSE(backend.info().deterministic);
}

TEST_CASE("http backend error classes") {
  FakeApi api;
  HttpChatBackend backend(api.config(), fewshot::testing::mock_info());
  CHECK_THROWS_AS(backend.complete(ask("rate-limit")), TransportError);
  CHECK_THROWS_AS(backend.complete(ask("crash")), TransportError);
  try {
    backend.complete(ask("forbidden"));
    FAIL("expected an error");
  } catch (const TransportError&) {
    FAIL("403 must not be retried");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("403") != std::string::npos);
  }
  CHECK_THROWS_AS(backend.complete(ask("garbage")), Error);

  auto closed = api.config();
  closed.base_url = "http://127.0.0.1:1";
  HttpChatBackend nowhere(closed, fewshot::testing::mock_info());
  CHECK_THROWS_AS(nowhere.complete(ask("hello")), TransportError);
}

TEST_CASE("rate limits are retried until the attempts run out") {
  FakeApi api;
  HttpChatBackend backend(api.config(), fewshot::testing::mock_info());
  RetryPolicy policy;
  int sleeps = 0;
  policy.sleep = [&](std::chrono::milliseconds) { ++sleeps; };
  CHECK_THROWS_AS(complete_with_retry(backend, ask("rate-limit"), policy), RetriesExhausted);
  CHECK(sleeps == 2);
}

TEST_CASE("missing API key is a usage error") {
  auto config = HttpBackendConfig{};
  CHECK_THROWS_AS(HttpChatBackend(config, fewshot::testing::mock_info()), UsageError);
  const char* saved = std::getenv("OPENAI_API_KEY");
  std::string keep = saved ? saved : "";
  ::unsetenv("OPENAI_API_KEY");
  try {
    api_key_from_env();
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("OPENAI_API_KEY") != std::string::npos);
  }
  ::setenv("OPENAI_API_KEY", "k", 1);
  CHECK(api_key_from_env() == "k");
  if (saved) {
    ::setenv("OPENAI_API_KEY", keep.c_str(), 1);
  } else {
    ::unsetenv("OPENAI_API_KEY");
  }
}
