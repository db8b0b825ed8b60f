#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewshot/corpus.hpp"
#include "fewshot/error.hpp"

namespace fewshot::curation {

using corpus::LabelId;

inline constexpr std::size_t kDefaultCandidates = 10;
inline constexpr std::size_t kDefaultPicks = 3;

struct Candidate {
  std::size_t row_index = 0;
  std::string text;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

enum class ClassStatus { pending, done };

struct ClassState {
  std::vector<Candidate> candidates;
  std::vector<std::size_t> selections;  // row indices
  ClassStatus status = ClassStatus::pending;
  // Fewer members than candidates_per_class; every member is a candidate.
  bool short_class = false;

  friend bool operator==(const ClassState&, const ClassState&) = default;
};

struct CurationSession {
  std::string session_id;
  std::string dataset_path;
  std::string fingerprint;
  std::size_t candidates_per_class = kDefaultCandidates;
  std::size_t picks_per_class = kDefaultPicks;
  std::uint64_t seed = 0;
  std::vector<std::string> label_names;
  std::vector<ClassState> classes;
  std::string note;

  std::size_t done_count() const;
  std::vector<LabelId> pending_classes() const;
};

nlohmann::json to_json(const CurationSession& s);
CurationSession session_from_json(const nlohmann::json& j);
nlohmann::json class_json(const CurationSession& s, LabelId label);

// Rejected requests; the HTTP layer maps these to 4xx codes.
class RequestError : public Error {
 public:
  RequestError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

// Candidates per class are the first `candidates_per_class` members of the
// corpus sampler's seeded shuffle, so the same seed yields the same lists.
CurationSession start_session(const corpus::Dataset& d, const std::string& dataset_path,
                              std::size_t candidates_per_class, std::size_t picks_per_class, std::uint64_t seed);

struct AuditEntry {
  LabelId label = 0;
  std::vector<std::size_t> previous;
  std::vector<std::size_t> current;
  bool overwrite = false;
};

// Exactly picks_per_class distinct indices, each one of the class's candidates.
AuditEntry record_selection(CurationSession& s, LabelId label, std::span<const std::size_t> indices);

// Throws RequestError(409) listing pending classes.
corpus::CurationManifest export_manifest(const CurationSession& s, const std::string& created_at = {});

// Sessions persisted under a state directory: <id>.json snapshots written by
// temp-file rename, and <id>.audit.jsonl with one line per selection. Every
// mutation reaches disk before the call returns; all methods are serialized.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path dir);

  CurationSession create(const std::string& dataset_path, std::size_t candidates_per_class,
                         std::size_t picks_per_class, std::uint64_t seed);
  CurationSession get(const std::string& session_id) const;
  std::vector<std::string> list() const;
  CurationSession select(const std::string& session_id, LabelId label, std::span<const std::size_t> indices);
  CurationSession set_note(const std::string& session_id, const std::string& note);
  corpus::CurationManifest manifest(const std::string& session_id) const;
  std::vector<nlohmann::json> audit_log(const std::string& session_id) const;

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path session_path(const std::string& id) const;
  std::filesystem::path audit_path(const std::string& id) const;
  CurationSession load_locked(const std::string& id) const;
  void save_locked(const CurationSession& s) const;

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

std::string utc_timestamp();

}  // namespace fewshot::curation
