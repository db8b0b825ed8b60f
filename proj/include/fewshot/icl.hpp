#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewshot/corpus.hpp"
#include "fewshot/error.hpp"
#include "fewshot/prediction.hpp"
#include "fewshot/prompting.hpp"

namespace fewshot::icl {

using prompting::ChatMessage;
using prompting::CostEstimate;
using prompting::PromptStyle;

// Bumped whenever parse_response can map a reply differently.
inline constexpr int kParserVersion = 1;
inline constexpr double kFuzzyThreshold = 0.8;

// Trim, strip surrounding quotes and a trailing period, lowercase, and turn
// runs of whitespace/hyphens/underscores into a single '_'.
std::string normalize_label(std::string_view s);

// Lowercased alphanumeric tokens.
std::vector<std::string> tokens(std::string_view s);

// Dice coefficient between the token sets of a reply and a label name.
double token_overlap(std::string_view reply, std::string_view label);

// Tries, in order: "<int> <name>" agreeing with each other (exact_pair); a
// normalized label name (name_only); a bare in-range integer (index_only);
// "-1 Unknown" (abstain_token); the unique label whose token overlap is at
// least kFuzzyThreshold (fuzzy). Anything else is parse_failed. Total.
Prediction parse_response(std::string_view raw, const corpus::LabelSpace& labels);

struct BackendInfo {
  std::string name;
  std::size_t context_limit = prompting::kGpt35ContextLimit;
  prompting::Rates rates;
  bool deterministic = true;
};

nlohmann::json to_json(const BackendInfo& b);

// Transport-level failure (connection, timeout, rate limit, 5xx). Retried.
class TransportError : public Error {
 public:
  using Error::Error;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual const BackendInfo& info() const = 0;
  // The only effectful operation. Implementations used with max_in_flight > 1
  // must be safe for concurrent calls.
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

// FNV-1a of the compact JSON [{"content":..,"role":..},...], as hex.
std::string request_hash(std::span<const ChatMessage> messages);

// Replays a JSONL transcript of {"request_hash", "response_text"} lines. A
// request missing from the transcript is an Error, not a TransportError.
class TranscriptBackend final : public ChatBackend {
 public:
  explicit TranscriptBackend(BackendInfo info) : info_(std::move(info)) {}
  TranscriptBackend(TranscriptBackend&& other) noexcept
      : info_(std::move(other.info_)), responses_(std::move(other.responses_)), calls_(other.calls_.load()) {}
  static TranscriptBackend load(const std::string& path, BackendInfo info);

  void add(std::string hash, std::string response);
  std::size_t size() const { return responses_.size(); }
  std::size_t calls() const { return calls_.load(); }

  const BackendInfo& info() const override { return info_; }
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  BackendInfo info_;
  std::unordered_map<std::string, std::string> responses_;
  std::atomic<std::size_t> calls_{0};
};

// Function-backed backend for tests and local dry runs.
class ScriptedBackend final : public ChatBackend {
 public:
  using Script = std::function<std::string(const std::vector<ChatMessage>&)>;
  ScriptedBackend(BackendInfo info, Script script) : info_(std::move(info)), script_(std::move(script)) {}

  std::size_t calls() const { return calls_.load(); }
  const BackendInfo& info() const override { return info_; }
  std::string complete(const std::vector<ChatMessage>& messages) override {
    ++calls_;
    return script_(messages);
  }

 private:
  BackendInfo info_;
  Script script_;
  std::atomic<std::size_t> calls_{0};
};

// Forwards to another backend and appends every exchange to a transcript.
class RecordingBackend final : public ChatBackend {
 public:
  RecordingBackend(ChatBackend& inner, std::string transcript_path);

  const BackendInfo& info() const override { return inner_.info(); }
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  ChatBackend& inner_;
  std::string path_;
  std::mutex mutex_;
};

struct RetryPolicy {
  std::size_t max_attempts = 3;
  std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(1000), std::chrono::milliseconds(2000),
                                                 std::chrono::milliseconds(4000)};
  // Defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

class RetriesExhausted : public Error {
 public:
  RetriesExhausted(const std::string& what, std::vector<std::string> attempts)
      : Error(what), attempts_(std::move(attempts)) {}
  const std::vector<std::string>& attempts() const { return attempts_; }

 private:
  std::vector<std::string> attempts_;
};

class BudgetExceeded : public Error {
 public:
  BudgetExceeded(std::size_t tokens, std::size_t limit, std::size_t reserve);
  std::size_t tokens() const { return tokens_; }
  std::size_t limit() const { return limit_; }

 private:
  std::size_t tokens_;
  std::size_t limit_;
};

// Retries only TransportError; other exceptions propagate immediately.
std::string complete_with_retry(ChatBackend& backend, const std::vector<ChatMessage>& messages,
                                const RetryPolicy& policy);

struct Classification {
  Prediction prediction;
  CostEstimate cost;
};

// Builds the prompt, checks it against the backend's context limit before any
// call, completes with retries and parses the reply.
Classification classify_one(ChatBackend& backend, const corpus::LabelSpace& labels,
                            const corpus::FewShotSample& sample, std::string_view query, PromptStyle style,
                            const RetryPolicy& retry = {},
                            std::size_t reserve = prompting::kDefaultCompletionReserve);

struct InstanceRecord {
  std::size_t index = 0;
  std::string query;
  corpus::LabelId gold = 0;
  Prediction prediction;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

nlohmann::json to_json(const InstanceRecord& r);
InstanceRecord instance_from_json(const nlohmann::json& j);

struct RunRecord {
  std::vector<InstanceRecord> instances;
  CostEstimate cost;
  BackendInfo backend;
  PromptStyle style = PromptStyle::system_context;
  std::string provenance;
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  std::string manifest_hash;
  nlohmann::json manifest;
};

// Aggregate footer written to summary.json.
nlohmann::json summary_json(const RunRecord& r);

// Thrown when resuming a checkpoint written with different run parameters.
class RunMismatch : public Error {
 public:
  using Error::Error;
};

struct RunOptions {
  PromptStyle style = PromptStyle::system_context;
  // Directory receiving run.json, instances.jsonl and summary.json; empty
  // disables checkpointing.
  std::string checkpoint_dir;
  bool resume = false;
  std::uint64_t seed = 0;
  std::size_t max_in_flight = 1;
  RetryPolicy retry;
  std::size_t reserve = prompting::kDefaultCompletionReserve;
  // fsync after every committed instance.
  bool durable = true;
  // Called after each instance is committed to the checkpoint.
  std::function<void(const InstanceRecord&)> on_commit;
};

// Content hash of a dataset (texts, labels, label space).
std::string dataset_content_hash(const corpus::Dataset& d);

// Run parameters that must match for a checkpoint to be resumed.
nlohmann::json run_manifest(const BackendInfo& backend, const corpus::Dataset& d,
                            const corpus::FewShotSample& sample, const RunOptions& options);

// Classifies every instance of `d` in order. With a checkpoint directory each
// instance is appended to instances.jsonl as soon as it is committed; with
// `resume`, completed instances are read back instead of re-queried.
RunRecord run_batch(ChatBackend& backend, const corpus::Dataset& d, const corpus::FewShotSample& sample,
                    const RunOptions& options);

// Reads a checkpoint directory (run.json + instances.jsonl) back into a record.
RunRecord load_run(const std::string& dir);

}  // namespace fewshot::icl
