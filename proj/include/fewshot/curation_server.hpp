#pragma once

#include <functional>
#include <memory>
#include <string>

#include "fewshot/curation.hpp"

namespace httplib {
class Server;
}

namespace fewshot::curation {

// JSON API over a SessionStore:
//   POST /sessions                                   {dataset_path, candidates_per_class?, picks_per_class?, seed?}
//                                                    -> 201, full session state including session_id
//   GET  /sessions
//   GET  /sessions/{id}
//   GET  /sessions/{id}/classes/{label_id}/candidates -> [{row_index, text}]
//   PUT  /sessions/{id}/classes/{label_id}/selection {indices: [...]} -> class state
//   PUT  /sessions/{id}/note                         {note}
//   GET  /sessions/{id}/manifest                     409 while classes are pending
//   GET  /sessions/{id}/audit
// Errors are {"error": message} with a 4xx/5xx status.
class CurationServer {
 public:
  explicit CurationServer(SessionStore& store);
  ~CurationServer();
  CurationServer(const CurationServer&) = delete;
  CurationServer& operator=(const CurationServer&) = delete;

  // Called after a selection that leaves no class pending.
  void on_complete(std::function<void(const CurationSession&)> hook) { on_complete_ = std::move(hook); }

  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  SessionStore& store_;
  std::unique_ptr<httplib::Server> server_;
  std::function<void(const CurationSession&)> on_complete_;
};

}  // namespace fewshot::curation
