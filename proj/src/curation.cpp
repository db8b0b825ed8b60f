#include "fewshot/curation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace fewshot::curation {

namespace fs = std::filesystem;

std::size_t CurationSession::done_count() const {
  return static_cast<std::size_t>(
      std::count_if(classes.begin(), classes.end(), [](const ClassState& c) { return c.status == ClassStatus::done; }));
}

std::vector<LabelId> CurationSession::pending_classes() const {
  std::vector<LabelId> out;
  for (LabelId c = 0; c < classes.size(); ++c) {
    if (classes[c].status == ClassStatus::pending) out.push_back(c);
  }
  return out;
}

nlohmann::json class_json(const CurationSession& s, LabelId label) {
  const auto& c = s.classes.at(label);
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& cand : c.candidates) candidates.push_back({{"row_index", cand.row_index}, {"text", cand.text}});
  return nlohmann::json{{"label_id", label},
                        {"label", s.label_names.at(label)},
                        {"status", c.status == ClassStatus::done ? "done" : "pending"},
                        {"short_class", c.short_class},
                        {"candidates", candidates},
                        {"selections", c.selections}};
}

nlohmann::json to_json(const CurationSession& s) {
  nlohmann::json classes = nlohmann::json::array();
  for (LabelId c = 0; c < s.classes.size(); ++c) classes.push_back(class_json(s, c));
  return nlohmann::json{{"session_id", s.session_id},
                        {"dataset_path", s.dataset_path},
                        {"fingerprint", s.fingerprint},
                        {"candidates_per_class", s.candidates_per_class},
                        {"picks_per_class", s.picks_per_class},
                        {"seed", s.seed},
                        {"note", s.note},
                        {"progress", {{"done", s.done_count()}, {"total", s.classes.size()}}},
                        {"classes", classes}};
}

CurationSession session_from_json(const nlohmann::json& j) {
  try {
    CurationSession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.dataset_path = j.at("dataset_path").get<std::string>();
    s.fingerprint = j.at("fingerprint").get<std::string>();
    s.candidates_per_class = j.at("candidates_per_class").get<std::size_t>();
    s.picks_per_class = j.at("picks_per_class").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.note = j.value("note", "");
    for (const auto& c : j.at("classes")) {
      s.label_names.push_back(c.at("label").get<std::string>());
      ClassState state;
      for (const auto& cand : c.at("candidates")) {
        state.candidates.push_back({cand.at("row_index").get<std::size_t>(), cand.at("text").get<std::string>()});
      }
      state.selections = c.at("selections").get<std::vector<std::size_t>>();
      state.status = c.at("status").get<std::string>() == "done" ? ClassStatus::done : ClassStatus::pending;
      state.short_class = c.at("short_class").get<bool>();
      s.classes.push_back(std::move(state));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed session state: ") + e.what());
  }
}

CurationSession start_session(const corpus::Dataset& d, const std::string& dataset_path,
                              std::size_t candidates_per_class, std::size_t picks_per_class, std::uint64_t seed) {
  if (picks_per_class < 1) throw RequestError(400, "picks_per_class must be at least 1");
  if (candidates_per_class < picks_per_class) {
    throw RequestError(400, fmt::format("candidates_per_class ({}) must be at least picks_per_class ({})",
                                        candidates_per_class, picks_per_class));
  }
  CurationSession s;
  s.dataset_path = dataset_path;
  s.fingerprint = d.fingerprint;
  s.candidates_per_class = candidates_per_class;
  s.picks_per_class = picks_per_class;
  s.seed = seed;
  s.label_names = d.labels.names();
  for (LabelId c = 0; c < d.labels.size(); ++c) {
    auto members = corpus::shuffled_class_members(d, c, seed);
    if (members.size() < picks_per_class) {
      throw RequestError(400, fmt::format("class '{}' has {} members, fewer than picks_per_class ({})",
                                          d.labels.name(c), members.size(), picks_per_class));
    }
    ClassState state;
    state.short_class = members.size() < candidates_per_class;
    const auto take = std::min(members.size(), candidates_per_class);
    for (std::size_t k = 0; k < take; ++k) {
      const auto& u = d.utterances[members[k]];
      state.candidates.push_back({u.row, u.text});
    }
    s.classes.push_back(std::move(state));
  }
  return s;
}

AuditEntry record_selection(CurationSession& s, LabelId label, std::span<const std::size_t> indices) {
  if (label >= s.classes.size()) throw RequestError(404, fmt::format("unknown label id {}", label));
  auto& state = s.classes[label];
  if (indices.size() != s.picks_per_class) {
    throw RequestError(400, fmt::format("exactly {} required, got {}", s.picks_per_class, indices.size()));
  }
  std::set<std::size_t> seen;
  for (auto idx : indices) {
    if (!seen.insert(idx).second) throw RequestError(400, fmt::format("row {} selected twice", idx));
    bool known = std::any_of(state.candidates.begin(), state.candidates.end(),
                             [&](const Candidate& c) { return c.row_index == idx; });
    if (!known) {
      throw RequestError(400, fmt::format("row {} is not a candidate of class '{}'", idx, s.label_names[label]));
    }
  }
  AuditEntry entry;
  entry.label = label;
  entry.previous = state.selections;
  entry.overwrite = state.status == ClassStatus::done;
  state.selections.assign(indices.begin(), indices.end());
  state.status = ClassStatus::done;
  entry.current = state.selections;
  return entry;
}

corpus::CurationManifest export_manifest(const CurationSession& s, const std::string& created_at) {
  auto pending = s.pending_classes();
  if (!pending.empty()) {
    std::string names;
    for (auto c : pending) names += (names.empty() ? "" : ", ") + s.label_names[c];
    throw RequestError(409, fmt::format("{} classes still pending: {}", pending.size(), names));
  }
  corpus::CurationManifest m;
  m.fingerprint = s.fingerprint;
  m.picks_per_class = s.picks_per_class;
  m.note = s.note;
  m.created_at = created_at;
  for (LabelId c = 0; c < s.classes.size(); ++c) m.selections.emplace_back(s.label_names[c], s.classes[c].selections);
  return m;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

namespace {

void fsync_path(const fs::path& p, int flags) {
  int fd = ::open(p.c_str(), flags | O_CLOEXEC);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

void write_durable(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fsync_path(tmp, O_RDONLY);
  fs::rename(tmp, path);
  fsync_path(path.parent_path(), O_RDONLY | O_DIRECTORY);
}

void append_durable(const fs::path& path, const std::string& line) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + path.string());
  std::string data = line + '\n';
  auto n = ::write(fd, data.data(), data.size());
  ::fsync(fd);
  ::close(fd);
  if (n != static_cast<ssize_t>(data.size())) throw IoError("audit append failed: " + path.string());
}

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; });
}

}  // namespace

SessionStore::SessionStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path SessionStore::session_path(const std::string& id) const { return dir_ / (id + ".json"); }
fs::path SessionStore::audit_path(const std::string& id) const { return dir_ / (id + ".audit.jsonl"); }

CurationSession SessionStore::load_locked(const std::string& id) const {
  if (!valid_id(id)) throw RequestError(404, fmt::format("unknown session '{}'", id));
  std::ifstream in(session_path(id));
  if (!in) throw RequestError(404, fmt::format("unknown session '{}'", id));
  try {
    return session_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("session {} state is corrupt: {}", id, e.what()));
  }
}

void SessionStore::save_locked(const CurationSession& s) const {
  write_durable(session_path(s.session_id), to_json(s).dump(2) + "\n");
}

CurationSession SessionStore::create(const std::string& dataset_path, std::size_t candidates_per_class,
                                     std::size_t picks_per_class, std::uint64_t seed) {
  corpus::Dataset d;
  try {
    d = corpus::load_csv(dataset_path, corpus::Split::train);
  } catch (const Error& e) {
    throw RequestError(400, fmt::format("cannot load dataset: {}", e.what()));
  }
  auto session = start_session(d, dataset_path, candidates_per_class, picks_per_class, seed);
  std::lock_guard lock(mutex_);
  for (std::size_t n = list().size() + 1;; ++n) {
    auto id = fmt::format("s{:04d}", n);
    if (!fs::exists(session_path(id))) {
      session.session_id = id;
      break;
    }
  }
  save_locked(session);
  return session;
}

CurationSession SessionStore::get(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  return load_locked(session_id);
}

std::vector<std::string> SessionStore::list() const {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const auto name = entry.path().filename().string();
    if (name.ends_with(".json") && !name.ends_with(".audit.jsonl")) ids.push_back(name.substr(0, name.size() - 5));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

CurationSession SessionStore::select(const std::string& session_id, LabelId label,
                                     std::span<const std::size_t> indices) {
  std::lock_guard lock(mutex_);
  auto session = load_locked(session_id);
  auto entry = record_selection(session, label, indices);
  // Audit line first, then the snapshot; both are on disk before we return.
  nlohmann::json line{{"label_id", entry.label},
                      {"label", session.label_names[entry.label]},
                      {"previous", entry.previous},
                      {"current", entry.current},
                      {"overwrite", entry.overwrite},
                      {"at", utc_timestamp()}};
  append_durable(audit_path(session_id), line.dump());
  save_locked(session);
  return session;
}

CurationSession SessionStore::set_note(const std::string& session_id, const std::string& note) {
  std::lock_guard lock(mutex_);
  auto session = load_locked(session_id);
  session.note = note;
  save_locked(session);
  return session;
}

corpus::CurationManifest SessionStore::manifest(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  return export_manifest(load_locked(session_id), utc_timestamp());
}

std::vector<nlohmann::json> SessionStore::audit_log(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  std::vector<nlohmann::json> out;
  std::ifstream in(audit_path(session_id));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace fewshot::curation
