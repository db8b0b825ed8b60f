#include "fewshot/icl.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "fewshot/hash.hpp"
#include "fewshot/text.hpp"

namespace fewshot::icl {

namespace fs = std::filesystem;

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::label:
      return "label";
    case Outcome::abstain:
      return "abstain";
    case Outcome::parse_failed:
      return "parse_failed";
  }
  return "parse_failed";
}

std::string_view to_string(ParseRoute r) {
  switch (r) {
    case ParseRoute::exact_pair:
      return "exact_pair";
    case ParseRoute::name_only:
      return "name_only";
    case ParseRoute::index_only:
      return "index_only";
    case ParseRoute::fuzzy:
      return "fuzzy";
    case ParseRoute::abstain_token:
      return "abstain_token";
    case ParseRoute::failed:
      return "failed";
  }
  return "failed";
}

Outcome parse_outcome(std::string_view s) {
  for (auto o : {Outcome::label, Outcome::abstain, Outcome::parse_failed}) {
    if (to_string(o) == s) return o;
  }
  throw Error(fmt::format("unknown outcome '{}'", s));
}

ParseRoute parse_route(std::string_view s) {
  for (auto r : {ParseRoute::exact_pair, ParseRoute::name_only, ParseRoute::index_only, ParseRoute::fuzzy,
                 ParseRoute::abstain_token, ParseRoute::failed}) {
    if (to_string(r) == s) return r;
  }
  throw Error(fmt::format("unknown parse route '{}'", s));
}

nlohmann::json to_json(const Prediction& p) {
  nlohmann::json j{{"outcome", to_string(p.outcome)}, {"raw_text", p.raw_text}, {"parse_route", to_string(p.route)}};
  j["label_id"] = p.has_label() ? nlohmann::json(p.label) : nlohmann::json(nullptr);
  return j;
}

Prediction prediction_from_json(const nlohmann::json& j) {
  Prediction p;
  p.outcome = parse_outcome(j.at("outcome").get<std::string>());
  p.raw_text = j.at("raw_text").get<std::string>();
  p.route = parse_route(j.at("parse_route").get<std::string>());
  if (p.has_label()) p.label = j.at("label_id").get<corpus::LabelId>();
  return p;
}

// ---------------------------------------------------------------------------
// Reply parsing

namespace {

bool is_separator(char c) { return text::is_space(c) || c == '_' || c == '-'; }

std::optional<long long> parse_integer(std::string_view s) {
  if (s.empty()) return std::nullopt;
  long long value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

bool is_quote(char c) { return c == '"' || c == '\'' || c == '`'; }

// Trims whitespace, surrounding quotes and trailing periods, in any nesting.
std::string_view strip_wrapping(std::string_view s) {
  for (;;) {
    s = text::trim(s);
    if (!s.empty() && s.back() == '.') {
      s.remove_suffix(1);
    } else if (s.size() >= 2 && s.front() == s.back() && is_quote(s.front())) {
      s = s.substr(1, s.size() - 2);
    } else {
      return s;
    }
  }
}

}  // namespace

std::string normalize_label(std::string_view s) {
  s = strip_wrapping(s);
  std::string out;
  bool pending_separator = false;
  for (char c : text::to_lower(s)) {
    if (is_separator(c)) {
      pending_separator = true;
      continue;
    }
    if (pending_separator && !out.empty()) out.push_back('_');
    pending_separator = false;
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

double token_overlap(std::string_view reply, std::string_view label) {
  auto a = tokens(reply);
  auto b = tokens(label);
  std::set<std::string> sa(a.begin(), a.end());
  std::set<std::string> sb(b.begin(), b.end());
  if (sa.empty() || sb.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : sa) common += sb.count(t);
  return 2.0 * static_cast<double>(common) / static_cast<double>(sa.size() + sb.size());
}

Prediction parse_response(std::string_view raw, const corpus::LabelSpace& labels) {
  Prediction p;
  p.raw_text = std::string(raw);
  auto labelled = [&](corpus::LabelId id, ParseRoute route) {
    p.outcome = Outcome::label;
    p.label = id;
    p.route = route;
    return p;
  };
  const auto trimmed = text::trim(raw);
  const auto n = static_cast<long long>(labels.size());

  // 1. "<int> <name>" where both agree.
  if (auto space = trimmed.find_first_of(" \t"); space != std::string_view::npos) {
    if (auto index = parse_integer(trimmed.substr(0, space)); index && *index >= 0 && *index < n) {
      auto id = static_cast<corpus::LabelId>(*index);
      if (normalize_label(trimmed.substr(space + 1)) == normalize_label(labels.name(id))) {
        return labelled(id, ParseRoute::exact_pair);
      }
    }
  }

  // 2. Label name alone.
  const auto normalized = normalize_label(trimmed);
  for (corpus::LabelId id = 0; id < labels.size(); ++id) {
    if (normalized == normalize_label(labels.name(id))) return labelled(id, ParseRoute::name_only);
  }

  // 3. Bare index.
  auto bare = trimmed;
  if (!bare.empty() && bare.back() == '.') bare.remove_suffix(1);
  if (auto index = parse_integer(bare); index && *index >= 0 && *index < n) {
    return labelled(static_cast<corpus::LabelId>(*index), ParseRoute::index_only);
  }

  // 4. Abstention.
  // normalize_label drops the leading '-' as a separator, so match on tokens.
  if (strip_wrapping(trimmed).starts_with('-') && tokens(trimmed) == std::vector<std::string>{"1", "unknown"}) {
    p.outcome = Outcome::abstain;
    p.route = ParseRoute::abstain_token;
    return p;
  }

  // 5. Fuzzy, unique maximizer only.
  double best = -1.0;
  std::size_t best_count = 0;
  corpus::LabelId best_id = 0;
  for (corpus::LabelId id = 0; id < labels.size(); ++id) {
    const double overlap = token_overlap(trimmed, labels.name(id));
    if (overlap > best) {
      best = overlap;
      best_id = id;
      best_count = 1;
    } else if (overlap == best) {
      ++best_count;
    }
  }
  if (best >= kFuzzyThreshold && best_count == 1) return labelled(best_id, ParseRoute::fuzzy);

  p.outcome = Outcome::parse_failed;
  p.route = ParseRoute::failed;
  return p;
}

// ---------------------------------------------------------------------------
// Backends

nlohmann::json to_json(const BackendInfo& b) {
  return nlohmann::json{{"name", b.name},
                        {"context_limit", b.context_limit},
                        {"prompt_rate", b.rates.prompt_per_1k},
                        {"completion_rate", b.rates.completion_per_1k},
                        {"deterministic", b.deterministic}};
}

std::string request_hash(std::span<const ChatMessage> messages) {
  return hex64(fnv1a64(prompting::to_json(messages).dump()));
}

TranscriptBackend TranscriptBackend::load(const std::string& path, BackendInfo info) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript " + path);
  TranscriptBackend backend(std::move(info));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      backend.add(j.at("request_hash").get<std::string>(), j.at("response_text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(fmt::format("{}:{}: {}", path, lineno, e.what()));
    }
  }
  return backend;
}

void TranscriptBackend::add(std::string hash, std::string response) {
  responses_.emplace(std::move(hash), std::move(response));
}

std::string TranscriptBackend::complete(const std::vector<ChatMessage>& messages) {
  ++calls_;
  auto hash = request_hash(messages);
  auto it = responses_.find(hash);
  if (it == responses_.end()) throw Error(fmt::format("transcript has no response for request {}", hash));
  return it->second;
}

RecordingBackend::RecordingBackend(ChatBackend& inner, std::string transcript_path)
    : inner_(inner), path_(std::move(transcript_path)) {}

std::string RecordingBackend::complete(const std::vector<ChatMessage>& messages) {
  auto response = inner_.complete(messages);
  nlohmann::json line{{"request_hash", request_hash(messages)}, {"response_text", response}};
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to transcript " + path_);
  out << line.dump() << '\n';
  return response;
}

BudgetExceeded::BudgetExceeded(std::size_t tokens, std::size_t limit, std::size_t reserve)
    : Error(fmt::format("prompt needs {} tokens plus {} reserved for the reply, over the {}-token context limit",
                        tokens, reserve, limit)),
      tokens_(tokens),
      limit_(limit) {}

std::string complete_with_retry(ChatBackend& backend, const std::vector<ChatMessage>& messages,
                                const RetryPolicy& policy) {
  std::vector<std::string> attempts;
  const std::size_t max_attempts = std::max<std::size_t>(policy.max_attempts, 1);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    try {
      return backend.complete(messages);
    } catch (const TransportError& e) {
      attempts.push_back(fmt::format("attempt {}: {}", attempt + 1, e.what()));
      if (attempt + 1 == max_attempts) break;
      auto delay = policy.backoff.empty()
                       ? std::chrono::milliseconds(0)
                       : policy.backoff[std::min(attempt, policy.backoff.size() - 1)];
      if (policy.sleep) {
        policy.sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
    }
  }
  throw RetriesExhausted(fmt::format("backend '{}' failed after {} attempts", backend.info().name, attempts.size()),
                         std::move(attempts));
}

Classification classify_one(ChatBackend& backend, const corpus::LabelSpace& labels,
                            const corpus::FewShotSample& sample, std::string_view query, PromptStyle style,
                            const RetryPolicy& retry, std::size_t reserve) {
  auto bundle = prompting::build_prompt(labels, sample, query, style);
  const auto& info = backend.info();
  if (!prompting::check_budget(bundle.estimated_tokens, info.context_limit, reserve).pass) {
    throw BudgetExceeded(bundle.estimated_tokens, info.context_limit, reserve);
  }
  auto reply = complete_with_retry(backend, bundle.messages, retry);
  Classification out;
  out.prediction = parse_response(reply, labels);
  out.cost = prompting::estimate_cost(static_cast<std::int64_t>(bundle.estimated_tokens),
                                      static_cast<std::int64_t>(prompting::default_token_count(reply)), info.rates);
  return out;
}

// ---------------------------------------------------------------------------
// Batch runs

nlohmann::json to_json(const InstanceRecord& r) {
  return nlohmann::json{{"index", r.index},
                        {"query", r.query},
                        {"gold", r.gold},
                        {"prediction", to_json(r.prediction)},
                        {"prompt_tokens", r.prompt_tokens},
                        {"completion_tokens", r.completion_tokens}};
}

InstanceRecord instance_from_json(const nlohmann::json& j) {
  InstanceRecord r;
  r.index = j.at("index").get<std::size_t>();
  r.query = j.at("query").get<std::string>();
  r.gold = j.at("gold").get<corpus::LabelId>();
  r.prediction = prediction_from_json(j.at("prediction"));
  r.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  r.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  return r;
}

nlohmann::json summary_json(const RunRecord& r) {
  std::map<std::string, std::size_t> routes;
  std::map<std::string, std::size_t> outcomes;
  for (const auto& inst : r.instances) {
    ++routes[std::string(to_string(inst.prediction.route))];
    ++outcomes[std::string(to_string(inst.prediction.outcome))];
  }
  return nlohmann::json{{"n_instances", r.instances.size()},
                        {"cost", prompting::to_json(r.cost)},
                        {"backend", to_json(r.backend)},
                        {"style", to_string(r.style)},
                        {"provenance", r.provenance},
                        {"seed", r.seed},
                        {"dataset_fingerprint", r.dataset_fingerprint},
                        {"manifest_hash", r.manifest_hash},
                        {"parser_version", kParserVersion},
                        {"parse_routes", routes},
                        {"outcomes", outcomes}};
}

std::string dataset_content_hash(const corpus::Dataset& d) { return hex64(fnv1a64(corpus::to_csv(d))); }

nlohmann::json run_manifest(const BackendInfo& backend, const corpus::Dataset& d, const corpus::FewShotSample& sample,
                            const RunOptions& options) {
  std::string sample_bytes;
  for (corpus::LabelId c = 0; c < sample.class_count(); ++c) {
    for (const auto& u : sample.instances[c]) sample_bytes += fmt::format("{}\t{}\t{}\n", c, u.row, u.text);
  }
  return nlohmann::json{{"backend", to_json(backend)},
                        {"style", to_string(options.style)},
                        {"seed", options.seed},
                        {"reserve", options.reserve},
                        {"parser_version", kParserVersion},
                        {"dataset", {{"fingerprint", d.fingerprint}, {"content_hash", dataset_content_hash(d)},
                                     {"size", d.size()}, {"labels", d.labels.names()}}},
                        {"sample", {{"provenance", corpus::describe(sample.provenance)},
                                    {"shots", sample.shots},
                                    {"content_hash", hex64(fnv1a64(sample_bytes))}}}};
}

namespace {

constexpr const char* kRunFile = "run.json";
constexpr const char* kInstancesFile = "instances.jsonl";
constexpr const char* kSummaryFile = "summary.json";

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& p, const std::string& content) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

// Append-only JSONL writer on a raw descriptor so commits can be fsync'ed.
class AppendLog {
 public:
  AppendLog(const fs::path& path, bool durable) : durable_(durable) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open " + path.string());
  }
  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;
  ~AppendLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  void append(const std::string& line) {
    std::string data = line + '\n';
    std::size_t off = 0;
    while (off < data.size()) {
      auto n = ::write(fd_, data.data() + off, data.size() - off);
      if (n < 0) throw IoError("checkpoint write failed");
      off += static_cast<std::size_t>(n);
    }
    if (durable_ && ::fsync(fd_) != 0) throw IoError("checkpoint fsync failed");
  }

 private:
  int fd_ = -1;
  bool durable_;
};

// Reads complete instance lines and truncates a trailing partial line left by
// an interrupted write.
std::vector<InstanceRecord> read_instances(const fs::path& path, bool repair) {
  std::vector<InstanceRecord> out;
  if (!fs::exists(path)) return out;
  const std::string content = read_all(path);
  std::size_t pos = 0;
  std::size_t good_end = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;
    auto line = std::string_view(content).substr(pos, nl - pos);
    try {
      out.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception&) {
      break;
    }
    pos = nl + 1;
    good_end = pos;
  }
  if (good_end != content.size()) {
    if (!repair) throw Error(fmt::format("{} has a corrupt or partial line", path.string()));
    fs::resize_file(path, good_end);
  }
  return out;
}

}  // namespace

RunRecord run_batch(ChatBackend& backend, const corpus::Dataset& d, const corpus::FewShotSample& sample,
                    const RunOptions& options) {
  RunRecord record;
  record.backend = backend.info();
  record.style = options.style;
  record.provenance = corpus::describe(sample.provenance);
  record.seed = options.seed;
  record.dataset_fingerprint = d.fingerprint;
  record.manifest = run_manifest(backend.info(), d, sample, options);
  record.manifest_hash = hex64(fnv1a64(record.manifest.dump()));
  record.cost = prompting::estimate_cost(0, 0, backend.info().rates);

  std::unique_ptr<AppendLog> log;
  if (!options.checkpoint_dir.empty()) {
    const fs::path dir(options.checkpoint_dir);
    fs::create_directories(dir);
    const auto run_file = dir / kRunFile;
    if (fs::exists(run_file)) {
      if (!options.resume) {
        throw Error(fmt::format("{} already holds a run; resume it or choose another directory", dir.string()));
      }
      auto stored = nlohmann::json::parse(read_all(run_file));
      if (stored.value("manifest_hash", "") != record.manifest_hash) {
        throw RunMismatch(fmt::format("checkpoint {} was written with different run parameters (manifest hash {} vs {})",
                                      dir.string(), stored.value("manifest_hash", ""), record.manifest_hash));
      }
      record.instances = read_instances(dir / kInstancesFile, true);
      if (record.instances.size() > d.size()) throw RunMismatch("checkpoint holds more instances than the dataset");
      for (std::size_t i = 0; i < record.instances.size(); ++i) {
        if (record.instances[i].index != i || record.instances[i].query != d.utterances[i].text) {
          throw RunMismatch(fmt::format("checkpoint instance {} does not match the dataset", i));
        }
      }
    } else {
      fs::remove(dir / kInstancesFile);
      nlohmann::json header{{"manifest", record.manifest}, {"manifest_hash", record.manifest_hash}};
      write_atomic(run_file, header.dump(2) + "\n");
    }
    fs::remove(dir / kSummaryFile);
    log = std::make_unique<AppendLog>(dir / kInstancesFile, options.durable);
  }
  for (const auto& inst : record.instances) {
    record.cost = prompting::accumulate(
        record.cost, prompting::estimate_cost(inst.prompt_tokens, inst.completion_tokens, backend.info().rates));
  }

  auto classify = [&](std::size_t i) {
    auto c = classify_one(backend, d.labels, sample, d.utterances[i].text, options.style, options.retry,
                          options.reserve);
    InstanceRecord r;
    r.index = i;
    r.query = d.utterances[i].text;
    r.gold = d.utterances[i].label;
    r.prediction = std::move(c.prediction);
    r.prompt_tokens = c.cost.prompt_tokens;
    r.completion_tokens = c.cost.completion_tokens;
    return r;
  };
  auto commit = [&](InstanceRecord r) {
    if (log) log->append(to_json(r).dump());
    record.cost = prompting::accumulate(
        record.cost, prompting::estimate_cost(r.prompt_tokens, r.completion_tokens, backend.info().rates));
    record.instances.push_back(std::move(r));
    if (options.on_commit) options.on_commit(record.instances.back());
  };

  const std::size_t window = std::max<std::size_t>(options.max_in_flight, 1);
  std::size_t next = record.instances.size();
  while (next < d.size()) {
    if (window == 1) {
      commit(classify(next++));
      continue;
    }
    std::vector<std::future<InstanceRecord>> inflight;
    for (std::size_t k = 0; k < window && next < d.size(); ++k, ++next) {
      inflight.push_back(std::async(std::launch::async, classify, next));
    }
    // Commit in instance order; the first failure stops the run after the
    // instances before it are committed.
    std::exception_ptr failure;
    for (auto& f : inflight) {
      try {
        auto r = f.get();
        if (!failure) commit(std::move(r));
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  if (!options.checkpoint_dir.empty()) {
    write_atomic(fs::path(options.checkpoint_dir) / kSummaryFile, summary_json(record).dump(2) + "\n");
  }
  return record;
}

RunRecord load_run(const std::string& dir_name) {
  const fs::path dir(dir_name);
  RunRecord record;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_all(dir / kRunFile));
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("{}: {}", (dir / kRunFile).string(), e.what()));
  }
  record.manifest = header.at("manifest");
  record.manifest_hash = header.at("manifest_hash").get<std::string>();
  const auto& m = record.manifest;
  const auto& b = m.at("backend");
  record.backend.name = b.at("name").get<std::string>();
  record.backend.context_limit = b.at("context_limit").get<std::size_t>();
  record.backend.rates = {b.at("prompt_rate").get<double>(), b.at("completion_rate").get<double>()};
  record.backend.deterministic = b.at("deterministic").get<bool>();
  record.style = prompting::parse_style(m.at("style").get<std::string>());
  record.seed = m.at("seed").get<std::uint64_t>();
  record.provenance = m.at("sample").at("provenance").get<std::string>();
  record.dataset_fingerprint = m.at("dataset").at("fingerprint").get<std::string>();
  record.instances = read_instances(dir / kInstancesFile, false);
  record.cost = prompting::estimate_cost(0, 0, record.backend.rates);
  for (const auto& inst : record.instances) {
    record.cost = prompting::accumulate(
        record.cost, prompting::estimate_cost(inst.prompt_tokens, inst.completion_tokens, record.backend.rates));
  }
  return record;
}

}  // namespace fewshot::icl
