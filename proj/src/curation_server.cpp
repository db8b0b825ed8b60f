#include "fewshot/curation_server.hpp"

#include <fmt/format.h>

#include "fewshot/httplib_config.hpp"

namespace fewshot::curation {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw RequestError(400, fmt::format("request body is not valid JSON: {}", e.what()));
  }
}

template <typename T>
T field(const nlohmann::json& body, const char* key, T fallback) {
  if (!body.contains(key)) return fallback;
  try {
    return body.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw RequestError(400, fmt::format("field '{}' has the wrong type", key));
  }
}

LabelId parse_label(const std::string& s) {
  try {
    std::size_t pos = 0;
    auto v = std::stoul(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw RequestError(404, fmt::format("unknown label id '{}'", s));
  }
}

}  // namespace

CurationServer::CurationServer(SessionStore& store) : store_(store), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const RequestError& e) {
      send_json(res, e.status(), {{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  });

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    if (!body.contains("dataset_path")) throw RequestError(400, "field 'dataset_path' is required");
    auto s = store_.create(field<std::string>(body, "dataset_path", {}),
                           field<std::size_t>(body, "candidates_per_class", kDefaultCandidates),
                           field<std::size_t>(body, "picks_per_class", kDefaultPicks),
                           field<std::uint64_t>(body, "seed", 0));
    send_json(res, 201, to_json(s));
  });

  srv.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"sessions", store_.list()}});
  });

  srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, to_json(store_.get(req.matches[1])));
  });

  srv.Get(R"(/sessions/([^/]+)/classes/([^/]+)/candidates)",
          [this](const httplib::Request& req, httplib::Response& res) {
            auto s = store_.get(req.matches[1]);
            auto label = parse_label(req.matches[2]);
            if (label >= s.classes.size()) throw RequestError(404, fmt::format("unknown label id {}", label));
            send_json(res, 200, class_json(s, label).at("candidates"));
          });

  srv.Put(R"(/sessions/([^/]+)/classes/([^/]+)/selection)",
          [this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            if (!body.contains("indices")) throw RequestError(400, "field 'indices' is required");
            auto rows = field<std::vector<std::size_t>>(body, "indices", {});
            auto label = parse_label(req.matches[2]);
            auto s = store_.select(req.matches[1], label, rows);
            send_json(res, 200, class_json(s, label));
            if (on_complete_ && s.pending_classes().empty()) on_complete_(s);
          });

  srv.Put(R"(/sessions/([^/]+)/note)", [this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    auto s = store_.set_note(req.matches[1], field<std::string>(body, "note", {}));
    send_json(res, 200, to_json(s));
  });

  srv.Get(R"(/sessions/([^/]+)/manifest)", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, corpus::to_json(store_.manifest(req.matches[1])));
  });

  srv.Get(R"(/sessions/([^/]+)/audit)", [this](const httplib::Request& req, httplib::Response& res) {
    store_.get(req.matches[1]);
    send_json(res, 200, {{"entries", store_.audit_log(req.matches[1])}});
  });
}

CurationServer::~CurationServer() = default;

int CurationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw IoError(fmt::format("cannot bind {}", host));
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw IoError(fmt::format("cannot bind {}:{} (port in use? pick another with --port)", host, port));
  return port;
}

void CurationServer::listen() { server_->listen_after_bind(); }

void CurationServer::stop() { server_->stop(); }

}  // namespace fewshot::curation
