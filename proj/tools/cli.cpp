#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "fewshot/contrastive.hpp"
#include "fewshot/corpus.hpp"
#include "fewshot/curation.hpp"
#include "fewshot/curation_server.hpp"
#include "fewshot/encoder.hpp"
#include "fewshot/evalkit.hpp"
#include "fewshot/http_backend.hpp"
#include "fewshot/icl.hpp"
#include "fewshot/prompting.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/text.hpp"

namespace fewshot::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config files and effective config

std::string stringify(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw UsageError(fmt::format("config value {} must be a string, number or boolean", v.dump()));
}

std::string option_key(const CLI::Option* o) {
  auto names = o->get_lnames();
  return names.empty() ? std::string() : names.front();
}

bool skip_in_config(const std::string& key) { return key.empty() || key == "help" || key == "config"; }

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(fmt::format("{}: {}", path, e.what()));
  }
}

// Fills options not given on the command line from the --config JSON object.
// Keys are long flag names; '_' and '-' are interchangeable.
void apply_config(CLI::App& app) {
  auto* config = app.get_option_no_throw("--config");
  if (config == nullptr || config->count() == 0) return;
  const auto path = config->as<std::string>();
  const auto cfg = read_json_file(path);
  if (!cfg.is_object()) throw UsageError(path + ": config must be a JSON object");

  std::map<std::string, CLI::Option*> by_key;
  for (auto* o : app.get_options()) {
    auto key = option_key(o);
    if (!skip_in_config(key)) by_key[key] = o;
  }
  for (const auto& [raw_key, value] : cfg.items()) {
    auto key = raw_key;
    std::replace(key.begin(), key.end(), '_', '-');
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      if (key == "command") continue;
      throw UsageError(fmt::format("{}: unknown key '{}' for '{}'", path, raw_key, app.get_name()));
    }
    auto* o = it->second;
    if (o->count() > 0) continue;  // flags win
    if (value.is_array()) {
      for (const auto& v : value) o->add_result(stringify(v));
    } else {
      o->add_result(stringify(value));
    }
    o->run_callback();
  }
}

json typed(const std::string& s) {
  try {
    auto v = json::parse(s);
    if (v.is_number() || v.is_boolean()) return v;
  } catch (const json::exception&) {
  }
  return s;
}

json effective_config(const CLI::App& app) {
  json cfg = json::object();
  cfg["command"] = app.get_name();
  for (const auto* o : app.get_options()) {
    auto key = option_key(o);
    if (skip_in_config(key)) continue;
    std::vector<std::string> values;
    if (o->count() > 0) {
      values = o->results();
    } else if (!o->get_default_str().empty()) {
      values = {o->get_default_str()};
    } else {
      continue;
    }
    if (o->get_expected_max() > 1) {
      json arr = json::array();
      for (const auto& v : values) arr.push_back(typed(v));
      cfg[key] = arr;
    } else {
      cfg[key] = typed(values.back());
    }
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_config(const CLI::App& app, const fs::path& dir) {
  write_text(dir / "config.json", effective_config(app).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Datasets and samples

struct DataArgs {
  std::string data;
  std::string train;
  std::string test;
};

void add_data_options(CLI::App* sub, DataArgs& a) {
  sub->add_option("--data", a.data, "CSV file, or a directory holding train.csv and test.csv");
  sub->add_option("--train", a.train, "Training CSV (overrides --data)");
  sub->add_option("--test", a.test, "Test CSV (overrides --data)");
}

// Path of the CSV for `split`, or empty when none is configured.
std::string csv_path(const DataArgs& a, corpus::Split split) {
  const auto& explicit_path = split == corpus::Split::test ? a.test : a.train;
  if (!explicit_path.empty()) return explicit_path;
  if (a.data.empty()) return {};
  if (fs::is_directory(a.data)) {
    auto p = fs::path(a.data) / fmt::format("{}.csv", corpus::to_string(split));
    return fs::exists(p) ? p.string() : std::string();
  }
  return split == corpus::Split::train ? a.data : std::string();
}

corpus::Dataset load_required(const DataArgs& a, corpus::Split split,
                              const std::optional<corpus::LabelSpace>& labels = std::nullopt) {
  auto path = csv_path(a, split);
  if (path.empty()) {
    throw UsageError(fmt::format("no {} data: pass --data or --{}", corpus::to_string(split), corpus::to_string(split)));
  }
  return corpus::load_csv(path, split, labels);
}

struct SampleArgs {
  std::size_t shots = 0;
  std::string strategy = "random";
  std::uint64_t seed = 0;
  std::string manifest;
};

void add_sample_options(CLI::App* sub, SampleArgs& a, std::size_t default_shots) {
  a.shots = default_shots;
  sub->add_option("--shots", a.shots, "Examples per class (N)")->check(CLI::PositiveNumber);
  sub->add_option("--strategy", a.strategy, "Few-shot sampling strategy")
      ->check(CLI::IsMember({"random", "curated"}));
  sub->add_option("--seed", a.seed, "Master seed");
  sub->add_option("--manifest", a.manifest, "Curation manifest (curated strategy)");
}

corpus::FewShotSample draw_sample(const corpus::Dataset& train, const SampleArgs& a, const CLI::App& app) {
  if (a.strategy == "random") {
    if (!a.manifest.empty()) throw UsageError("--manifest applies only to --strategy curated");
    return corpus::sample_random(train, a.shots, a.seed);
  }
  if (a.manifest.empty()) throw UsageError("--strategy curated needs --manifest");
  auto manifest = corpus::load_manifest(a.manifest);
  if (app.count("--shots") > 0 && a.shots != manifest.picks_per_class) {
    throw UsageError(fmt::format("--shots {} disagrees with the manifest's {} picks per class", a.shots,
                                 manifest.picks_per_class));
  }
  return corpus::sample_curated(train, manifest, a.manifest);
}

std::string strategy_label(const SampleArgs& a) {
  return a.strategy == "curated" ? "representative samples" : "random samples";
}

json sample_json(const corpus::FewShotSample& s) {
  json classes = json::array();
  for (corpus::LabelId c = 0; c < s.class_count(); ++c) {
    json inst = json::array();
    for (const auto& u : s.instances[c]) inst.push_back({{"row", u.row}, {"text", u.text}});
    classes.push_back({{"label_id", c}, {"label", s.labels.name(c)}, {"instances", inst}});
  }
  return json{{"shots", s.shots}, {"provenance", corpus::describe(s.provenance)}, {"classes", classes}};
}

void print_report(std::ostream& out, const evalkit::EvalReport& r) {
  out << fmt::format("instances {}  unanswered {}  accuracy {}  micro-F1 {}  macro-F1 {}\n", r.n_instances,
                     r.n_unanswered, evalkit::percent(r.accuracy), evalkit::percent(r.micro_f1),
                     evalkit::percent(r.macro_f1));
}

// ---------------------------------------------------------------------------
// Commands

struct StatsArgs {
  DataArgs data;
  std::string split;
  bool as_json = false;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  std::vector<std::pair<std::string, corpus::DatasetStats>> columns;
  std::vector<corpus::Split> splits;
  if (!a.split.empty()) {
    splits = {corpus::parse_split(a.split)};
  } else {
    splits = {corpus::Split::train, corpus::Split::test};
  }
  for (auto split : splits) {
    auto path = csv_path(a.data, split);
    if (path.empty()) {
      if (!a.split.empty()) throw UsageError(fmt::format("no {} data configured", a.split));
      continue;
    }
    auto d = corpus::load_csv(path, split);
    columns.emplace_back(std::string(corpus::to_string(split)), corpus::compute_stats(d));
  }
  if (columns.empty()) throw UsageError("no dataset given: pass --data");
  if (a.as_json) {
    json j = json::object();
    for (const auto& [name, s] : columns) j[name] = corpus::to_json(s);
    out << j.dump(2) << '\n';
  } else {
    out << corpus::render_stats_table(columns);
  }
  return 0;
}

struct SplitArgs {
  DataArgs data;
  double fraction = 0.1;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_split(const SplitArgs& a, const CLI::App& app, std::ostream& out) {
  auto d = load_required(a.data, corpus::Split::train);
  auto r = corpus::split_validation(d, a.fraction, a.seed);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  corpus::write_csv(r.train, (dir / "train.csv").string());
  corpus::write_csv(r.validation, (dir / "validation.csv").string());
  write_config(app, dir);
  out << fmt::format("train {} / validation {} written to {}\n", r.train.size(), r.validation.size(), dir.string());
  return 0;
}

struct SampleCmdArgs {
  DataArgs data;
  SampleArgs sample;
  std::string out;
};

int cmd_sample(const SampleCmdArgs& a, const CLI::App& app, std::ostream& out) {
  auto d = load_required(a.data, corpus::Split::train);
  auto s = draw_sample(d, a.sample, app);
  auto j = sample_json(s);
  if (a.out.empty()) {
    out << j.dump(2) << '\n';
  } else {
    write_text(a.out, j.dump(2) + "\n");
    out << fmt::format("{} classes x {} shots written to {}\n", s.class_count(), s.shots, a.out);
  }
  return 0;
}

struct TrainArgs {
  DataArgs data;
  SampleArgs sample;
  contrastive::PipelineConfig pipeline;
  std::string embeddings;
  std::string out;
};

int cmd_train(TrainArgs& a, const CLI::App& app, std::ostream& out) {
  auto train = load_required(a.data, corpus::Split::train);
  auto sample = draw_sample(train, a.sample, app);
  const auto test_path = csv_path(a.data, corpus::Split::test);
  std::optional<corpus::Dataset> test;
  if (!test_path.empty()) test = corpus::load_csv(test_path, corpus::Split::test, train.labels);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_config(app, dir);
  json manifest{{"config", effective_config(app)},
                {"pipeline", contrastive::to_json(a.pipeline)},
                {"seed", a.sample.seed},
                {"train_fingerprint", train.fingerprint},
                {"provenance", corpus::describe(sample.provenance)}};

  std::vector<corpus::LabelId> predictions;
  if (!a.embeddings.empty()) {
    // Frozen external encoder: only the head is fit.
    auto enc = encoder::PrecomputedEncoder::load(a.embeddings);
    auto fit = contrastive::fit_head(enc, sample, a.pipeline.head, derive_seed(a.sample.seed, "pipeline.head"));
    write_text(dir / "head.json", contrastive::to_json(fit.head, train.labels).dump(2) + "\n");
    manifest["encoder"] = enc.name();
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    out << fmt::format("head fit on {} embeddings (dim {}), train accuracy {}\n", enc.name(), enc.dimension(),
                       evalkit::percent(fit.train_accuracy));
    if (test) {
      std::vector<std::string> texts;
      for (const auto& u : test->utterances) texts.push_back(u.text);
      for (const auto& p : contrastive::predict_batch(enc, fit.head, texts)) predictions.push_back(p.label);
    }
  } else {
    auto model = contrastive::train_pipeline(sample, a.pipeline, a.sample.seed);
    contrastive::save_model(model, dir.string(), manifest);
    const auto& r = model.report;
    out << fmt::format("encoder loss {:.6f} -> {:.6f} over {} epochs; head train accuracy {}\n", r.initial_loss(),
                       r.final_loss(), r.loss_trajectory.size() - 1, evalkit::percent(r.head_train_accuracy));
    if (test) {
      encoder::ReferenceEncoder enc(model.params);
      std::vector<std::string> texts;
      for (const auto& u : test->utterances) texts.push_back(u.text);
      for (const auto& p : contrastive::predict_batch(enc, model.head, texts)) predictions.push_back(p.label);
    }
  }
  if (test) {
    std::vector<corpus::LabelId> golds;
    for (const auto& u : test->utterances) golds.push_back(u.label);
    auto report = evalkit::score_labels(golds, predictions, train.labels.size());
    write_text(dir / "eval.json", evalkit::to_json(report, train.labels).dump(2) + "\n");
    print_report(out, report);
  }
  out << fmt::format("model written to {}\n", dir.string());
  return 0;
}

struct BackendArgs {
  std::string backend = "mock";
  std::string transcript;
  std::string model = "gpt-3.5-turbo";
  std::string prices;
  std::string base_url = "https://api.openai.com";
};

void add_backend_options(CLI::App* sub, BackendArgs& a) {
  sub->add_option("--backend", a.backend, "Chat backend")->check(CLI::IsMember({"mock", "http"}));
  sub->add_option("--transcript", a.transcript, "Transcript JSONL: replayed by mock, recorded by http");
  sub->add_option("--model", a.model, "Model name in the price table");
  sub->add_option("--prices", a.prices, "Price table JSON (defaults to the bundled table)");
  sub->add_option("--base-url", a.base_url, "Base URL of the OpenAI-compatible endpoint");
}

prompting::PriceTable price_table(const std::string& path) {
  return path.empty() ? prompting::default_price_table() : prompting::load_price_table(path);
}

icl::BackendInfo backend_info(const BackendArgs& a) {
  auto table = price_table(a.prices);
  auto it = table.find(a.model);
  if (it == table.end()) throw UsageError(fmt::format("model '{}' is not in the price table", a.model));
  icl::BackendInfo info;
  info.name = fmt::format("{}/{}", a.backend, a.model);
  info.context_limit = it->second.context_limit;
  info.rates = it->second.rates;
  info.deterministic = a.backend == "mock";
  return info;
}

struct IclArgs {
  DataArgs data;
  SampleArgs sample;
  BackendArgs backend;
  std::string style = "system_context";
  bool resume = false;
  std::string out;
  std::size_t max_in_flight = 1;
  std::size_t limit = 0;
};

int cmd_icl(const IclArgs& a, const CLI::App& app, std::ostream& out, std::ostream& err) {
  auto train = load_required(a.data, corpus::Split::train);
  auto test = load_required(a.data, corpus::Split::test, train.labels);
  if (a.limit > 0 && a.limit < test.size()) test.utterances.resize(a.limit);
  auto sample = draw_sample(train, a.sample, app);
  const auto style = prompting::parse_style(a.style);
  const auto info = backend_info(a.backend);

  // Budget check on the longest query before any call is made.
  auto longest = std::max_element(test.utterances.begin(), test.utterances.end(), [](const auto& x, const auto& y) {
    return text::utf8_length(x.text) < text::utf8_length(y.text);
  });
  if (longest != test.utterances.end()) {
    auto bundle = prompting::build_prompt(train.labels, sample, longest->text, style);
    if (!prompting::check_budget(bundle.estimated_tokens, info.context_limit).pass) {
      throw icl::BudgetExceeded(bundle.estimated_tokens, info.context_limit, prompting::kDefaultCompletionReserve);
    }
  }

  std::unique_ptr<icl::ChatBackend> inner;
  if (a.backend.backend == "mock") {
    if (a.backend.transcript.empty()) throw UsageError("--backend mock replays a transcript: pass --transcript");
    inner = std::make_unique<icl::TranscriptBackend>(icl::TranscriptBackend::load(a.backend.transcript, info));
  } else {
    icl::HttpBackendConfig cfg;
    cfg.base_url = a.backend.base_url;
    cfg.model = a.backend.model;
    cfg.api_key = icl::api_key_from_env();
    inner = std::make_unique<icl::HttpChatBackend>(cfg, info);
  }
  std::unique_ptr<icl::RecordingBackend> recorder;
  icl::ChatBackend* backend = inner.get();
  if (a.backend.backend == "http" && !a.backend.transcript.empty()) {
    recorder = std::make_unique<icl::RecordingBackend>(*inner, a.backend.transcript);
    backend = recorder.get();
  }

  icl::RunOptions options;
  options.style = style;
  options.checkpoint_dir = a.out;
  options.resume = a.resume;
  options.seed = a.sample.seed;
  options.max_in_flight = a.max_in_flight;
  const std::size_t total = test.size();
  options.on_commit = [&](const icl::InstanceRecord& r) {
    if ((r.index + 1) % 500 == 0) err << fmt::format("{}/{} instances\n", r.index + 1, total);
  };
  auto record = icl::run_batch(*backend, test, sample, options);
  write_config(app, a.out);

  std::vector<corpus::LabelId> golds;
  std::vector<icl::Prediction> preds;
  for (const auto& inst : record.instances) {
    golds.push_back(inst.gold);
    preds.push_back(inst.prediction);
  }
  auto report = evalkit::score(golds, preds, train.labels.size());
  write_text(fs::path(a.out) / "eval.json", evalkit::to_json(report, train.labels).dump(2) + "\n");
  std::vector<evalkit::TableRow> rows{{fmt::format("{} ({})", a.backend.model, strategy_label(a.sample)),
                                       fmt::format("{}-shot", sample.shots), report.micro_f1, report.macro_f1}};
  out << evalkit::render_table(rows, evalkit::TableFormat::plain);
  print_report(out, report);
  out << fmt::format("cost ${:.4f} ({} prompt + {} completion tokens)\n", record.cost.total_usd,
                     record.cost.prompt_tokens, record.cost.completion_tokens);
  return 0;
}

struct EvalArgs {
  DataArgs data;
  std::string run;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto record = icl::load_run(a.run);
  if (record.instances.empty()) throw Error(fmt::format("run {} holds no instances", a.run));
  auto labels = corpus::LabelSpace(record.manifest.at("dataset").at("labels").get<std::vector<std::string>>());
  auto test = load_required(a.data, corpus::Split::test, labels);
  if (!record.dataset_fingerprint.empty() && record.dataset_fingerprint != test.fingerprint) {
    throw Error(fmt::format("run was made on dataset {} but {} has fingerprint {}", record.dataset_fingerprint,
                            csv_path(a.data, corpus::Split::test), test.fingerprint));
  }

  std::vector<corpus::LabelId> golds;
  std::vector<icl::Prediction> stored;
  std::vector<icl::Prediction> rescored;
  std::map<std::string, std::pair<std::size_t, std::size_t>> routes;
  for (const auto& inst : record.instances) {
    if (inst.index >= test.size() || test.utterances[inst.index].text != inst.query) {
      throw Error(fmt::format("run instance {} does not match the dataset", inst.index));
    }
    golds.push_back(test.utterances[inst.index].label);
    stored.push_back(inst.prediction);
    rescored.push_back(icl::parse_response(inst.prediction.raw_text, labels));
    ++routes[std::string(icl::to_string(stored.back().route))].first;
    ++routes[std::string(icl::to_string(rescored.back().route))].second;
  }
  const int stored_version = record.manifest.value("parser_version", 0);
  auto before = evalkit::score(golds, stored, labels.size());
  auto after = evalkit::score(golds, rescored, labels.size());

  out << fmt::format("parser version {} -> {}\n", stored_version, icl::kParserVersion);
  out << "stored:   ";
  print_report(out, before);
  out << "rescored: ";
  print_report(out, after);
  out << fmt::format("{:<14} {:>8} {:>8}\n", "route", "stored", "rescored");
  for (const auto& [route, counts] : routes) {
    out << fmt::format("{:<14} {:>8} {:>8}\n", route, counts.first, counts.second);
  }
  if (!a.out.empty()) {
    json routes_json = json::object();
    for (const auto& [route, counts] : routes) routes_json[route] = {{"stored", counts.first}, {"rescored", counts.second}};
    json j{{"parser_version", icl::kParserVersion},
           {"stored_parser_version", stored_version},
           {"report", evalkit::to_json(after, labels)},
           {"stored_report", evalkit::to_json(before, labels)},
           {"parse_routes", routes_json}};
    write_text(a.out, j.dump(2) + "\n");
  }
  return 0;
}

struct CostArgs {
  DataArgs data;
  SampleArgs sample;
  std::string style = "system_context";
  std::string prices;
  std::vector<std::string> models;
  std::size_t instances = 3080;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
  std::string query;
};

int cmd_cost(const CostArgs& a, const CLI::App& app, std::ostream& out) {
  auto train = load_required(a.data, corpus::Split::train);
  auto sample = draw_sample(train, a.sample, app);
  const auto style = prompting::parse_style(a.style);

  std::string query = a.query;
  if (query.empty()) {
    auto test_path = csv_path(a.data, corpus::Split::test);
    if (!test_path.empty()) {
      auto test = corpus::load_csv(test_path, corpus::Split::test, train.labels);
      if (!test.empty()) query = test.utterances.front().text;
    }
  }
  if (query.empty()) {
    // No test split: price the longest training utterance instead.
    auto longest = std::max_element(train.utterances.begin(), train.utterances.end(), [](const auto& x, const auto& y) {
      return text::utf8_length(x.text) < text::utf8_length(y.text);
    });
    query = longest->text;
  }
  auto bundle = prompting::build_prompt(train.labels, sample, query, style);
  const auto prompt = a.prompt_tokens.value_or(static_cast<std::int64_t>(bundle.estimated_tokens));
  // Projected reply: the longest "<index> <name>" answer.
  std::int64_t reply = 0;
  for (corpus::LabelId c = 0; c < train.labels.size(); ++c) {
    reply = std::max(reply, static_cast<std::int64_t>(
                                prompting::default_token_count(fmt::format("{} {}", c, train.labels.name(c)))));
  }
  const auto completion = a.completion_tokens.value_or(reply);

  auto table = price_table(a.prices);
  std::vector<std::string> models = a.models;
  if (models.empty()) {
    for (const auto& [name, _] : table) models.push_back(name);
  }
  const auto n = static_cast<std::int64_t>(a.instances);
  out << fmt::format("{:<16} {:>10} {:>10} {:>12} {:>9} {:>12} {:>8}\n", "model", "prompt/it", "compl/it",
                     "usd/instance", "instances", "usd total", "fits");
  for (const auto& model : models) {
    auto it = table.find(model);
    if (it == table.end()) throw UsageError(fmt::format("model '{}' is not in the price table", model));
    const auto& pricing = it->second;
    auto per = prompting::estimate_cost(prompt, completion, pricing.rates);
    auto total = prompting::estimate_cost(prompt * n, completion * n, pricing.rates);
    auto budget = prompting::check_budget(static_cast<std::size_t>(prompt), pricing.context_limit);
    out << fmt::format("{:<16} {:>10} {:>10} {:>12.6f} {:>9} {:>12.4f} {:>8}\n", model, prompt, completion,
                       per.total_usd, a.instances, total.total_usd, budget.pass ? "yes" : "no");
  }
  return 0;
}

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct CurateArgs {
  DataArgs data;
  std::size_t candidates = curation::kDefaultCandidates;
  std::size_t picks = curation::kDefaultPicks;
  std::uint64_t seed = 0;
  std::string state = "curation-state";
  std::string session;
  std::string host = "127.0.0.1";
  int port = 8077;
  std::string out;
};

int cmd_curate(const CurateArgs& a, const CLI::App& app, std::ostream& out) {
  curation::SessionStore store(a.state);
  curation::CurationSession session;
  if (!a.session.empty()) {
    session = store.get(a.session);
  } else {
    auto path = csv_path(a.data, corpus::Split::train);
    if (path.empty()) throw UsageError("pass --data (or --session to reopen an existing session)");
    const auto fingerprint = corpus::load_csv(path, corpus::Split::train).fingerprint;
    bool found = false;
    for (const auto& id : store.list()) {
      auto s = store.get(id);
      if (s.dataset_path == path && s.fingerprint == fingerprint && s.candidates_per_class == a.candidates &&
          s.picks_per_class == a.picks && s.seed == a.seed) {
        session = s;
        found = true;
        break;
      }
    }
    if (!found) session = store.create(path, a.candidates, a.picks, a.seed);
  }
  const fs::path out_dir = a.out.empty() ? fs::path(a.state) : fs::path(a.out);
  write_config(app, out_dir);

  curation::CurationServer server(store);
  server.on_complete([&out, out_dir](const curation::CurationSession& s) {
    auto path = out_dir / (s.session_id + ".manifest.json");
    corpus::save_manifest(curation::export_manifest(s, curation::utc_timestamp()), path.string());
    out << fmt::format("all classes done; manifest written to {}\n", path.string()) << std::flush;
  });
  const int port = server.bind(a.host, a.port);
  out << fmt::format("session {} ({}/{} classes done)\n", session.session_id, session.done_count(),
                     session.classes.size());
  out << fmt::format("listening on http://{}:{}\n", a.host, port) << std::flush;

  g_interrupted = false;
  auto previous_int = std::signal(SIGINT, on_signal);
  auto previous_term = std::signal(SIGTERM, on_signal);
  std::atomic<bool> finished{false};
  std::thread watcher([&] {
    while (!finished && !g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.listen();
  finished = true;
  watcher.join();
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);
  out << "stopped; session state is on disk\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot intent classification toolkit", "fewshot"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  auto add_config = [](CLI::App* sub) {
    sub->add_option("--config", "JSON config file; command-line flags take precedence")->check(CLI::ExistingFile);
  };

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics table");
  add_data_options(stats_cmd, stats.data);
  stats_cmd->add_option("--split", stats.split, "Only this split")->check(CLI::IsMember({"train", "test", "validation"}));
  stats_cmd->add_flag("--json", stats.as_json, "Print JSON instead of the table");
  add_config(stats_cmd);

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "Hold out a stratified validation split");
  add_data_options(split_cmd, split.data);
  split_cmd->add_option("--fraction", split.fraction, "Validation fraction per class")->check(CLI::Range(0.0, 1.0));
  split_cmd->add_option("--seed", split.seed, "Master seed");
  split_cmd->add_option("--out", split.out, "Output directory")->required();
  add_config(split_cmd);

  SampleCmdArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "Draw an N-shot sample");
  add_data_options(sample_cmd, sample.data);
  add_sample_options(sample_cmd, sample.sample, 3);
  sample_cmd->add_option("--out", sample.out, "Write the sample JSON here instead of stdout");
  add_config(sample_cmd);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Contrastive encoder + logistic head");
  add_data_options(train_cmd, train.data);
  add_sample_options(train_cmd, train.sample, 10);
  train_cmd->add_option("--dim", train.pipeline.embedding_dim, "Embedding dimension")->check(CLI::PositiveNumber);
  train_cmd->add_option("--pairs", train.pipeline.pairs_per_instance, "Positive and negative pairs per instance");
  train_cmd->add_option("--epochs", train.pipeline.encoder.epochs, "Encoder epochs");
  train_cmd->add_option("--lr", train.pipeline.encoder.lr, "Encoder learning rate");
  train_cmd->add_option("--head-iters", train.pipeline.head.iters, "Head iterations");
  train_cmd->add_option("--head-lr", train.pipeline.head.lr, "Head learning rate");
  train_cmd->add_option("--head-l2", train.pipeline.head.l2, "Head L2 penalty");
  train_cmd->add_option("--embeddings", train.embeddings,
                        "Precomputed embeddings JSONL; fits the head on this frozen encoder instead")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "Model output directory")->required();
  add_config(train_cmd);

  IclArgs icl_args;
  auto* icl_cmd = app.add_subcommand("icl", "In-context classification run");
  add_data_options(icl_cmd, icl_args.data);
  add_sample_options(icl_cmd, icl_args.sample, 1);
  add_backend_options(icl_cmd, icl_args.backend);
  icl_cmd->add_option("--style", icl_args.style, "Prompt style")
      ->check(CLI::IsMember({"system_context", "chat_history"}));
  icl_cmd->add_flag("--resume", icl_args.resume, "Resume the checkpoint in --out");
  icl_cmd->add_option("--out", icl_args.out, "Run directory (checkpoint and reports)")->required();
  icl_cmd->add_option("--max-in-flight", icl_args.max_in_flight, "Concurrent requests")->check(CLI::PositiveNumber);
  icl_cmd->add_option("--limit", icl_args.limit, "Only the first N test instances");
  add_config(icl_cmd);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Rescore a stored run");
  add_data_options(eval_cmd, eval.data);
  eval_cmd->add_option("--run", eval.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval.out, "Write the report JSON here");
  add_config(eval_cmd);

  CostArgs cost;
  auto* cost_cmd = app.add_subcommand("cost", "Project the cost of a full test-set run");
  add_data_options(cost_cmd, cost.data);
  add_sample_options(cost_cmd, cost.sample, 1);
  cost_cmd->add_option("--style", cost.style, "Prompt style")->check(CLI::IsMember({"system_context", "chat_history"}));
  cost_cmd->add_option("--prices", cost.prices, "Price table JSON (defaults to the bundled table)");
  cost_cmd->add_option("--model", cost.models, "Models to price (default: all)");
  cost_cmd->add_option("--instances", cost.instances, "Instances to project");
  cost_cmd->add_option("--prompt-tokens", cost.prompt_tokens, "Measured prompt tokens per instance");
  cost_cmd->add_option("--completion-tokens", cost.completion_tokens, "Measured completion tokens per instance");
  cost_cmd->add_option("--query", cost.query, "Query used to build the priced prompt");
  add_config(cost_cmd);

  CurateArgs curate;
  auto* curate_cmd = app.add_subcommand("curate", "Run the curation service");
  add_data_options(curate_cmd, curate.data);
  curate_cmd->add_option("--candidates", curate.candidates, "Candidates per class");
  curate_cmd->add_option("--picks", curate.picks, "Selections per class");
  curate_cmd->add_option("--seed", curate.seed, "Master seed");
  curate_cmd->add_option("--state", curate.state, "Session state directory");
  curate_cmd->add_option("--session", curate.session, "Reopen this session id");
  curate_cmd->add_option("--host", curate.host, "Bind address");
  curate_cmd->add_option("--port", curate.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  curate_cmd->add_option("--out", curate.out, "Where the manifest is written (default: state directory)");
  add_config(curate_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    auto* sub = app.get_subcommands().front();
    apply_config(*sub);
    if (sub == stats_cmd) return cmd_stats(stats, out);
    if (sub == split_cmd) return cmd_split(split, *sub, out);
    if (sub == sample_cmd) return cmd_sample(sample, *sub, out);
    if (sub == train_cmd) return cmd_train(train, *sub, out);
    if (sub == icl_cmd) return cmd_icl(icl_args, *sub, out, err);
    if (sub == eval_cmd) return cmd_eval(eval, out);
    if (sub == cost_cmd) return cmd_cost(cost, *sub, out);
    if (sub == curate_cmd) return cmd_curate(curate, *sub, out);
    return 2;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fewshot::cli
