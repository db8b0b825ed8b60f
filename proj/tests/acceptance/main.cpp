// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion. With
// criterion names as arguments only those run; exit status is 1 if any
// failed, 77 if every selected criterion was skipped, 0 otherwise.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "banking_fixture.hpp"
#include "cli.hpp"
#include "fewshot/contrastive.hpp"
#include "fewshot/curation.hpp"
#include "fewshot/curation_server.hpp"
#include "fewshot/evalkit.hpp"
#include "fewshot/httplib_config.hpp"
#include "fewshot/icl.hpp"
#include "gradient_oracle.hpp"
#include "icl_fixture.hpp"
#include "metric_oracle.hpp"
#include "subprocess.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace fewshot;
using fewshot::testing::data_path;
using fewshot::testing::read_file;
using fewshot::testing::TempDir;
using nlohmann::json;

namespace {

enum class Status { pass, fail, skip };

struct Verdict {
  Status status;
  std::string detail;
};

Verdict pass(std::string d) { return {Status::pass, std::move(d)}; }
Verdict fail(std::string d) { return {Status::fail, std::move(d)}; }
Verdict skip(std::string d) { return {Status::skip, std::move(d)}; }

struct Criterion {
  std::string name;
  double time_limit_s;
  std::function<Verdict()> check;
};

std::optional<fs::path> banking77_dir() {
  const char* dir = std::getenv("BANKING77_DIR");
  if (dir == nullptr || *dir == '\0') return std::nullopt;
  if (!fs::exists(fs::path(dir) / "train.csv") || !fs::exists(fs::path(dir) / "test.csv")) return std::nullopt;
  return fs::path(dir);
}

const char* kNoBanking77 = "BANKING77_DIR not set (needs the public train.csv/test.csv)";

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "fewshot");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

// ---------------------------------------------------------------------------

Verdict dataset_statistics() {
  auto dir = banking77_dir();
  if (!dir) return skip(kNoBanking77);
  std::string table;
  if (run_cli({"stats", "--data", dir->string()}, &table) != 0) return fail("stats command failed: " + table);
  auto train = corpus::load_csv((*dir / "train.csv").string(), corpus::Split::train);
  auto test = corpus::load_csv((*dir / "test.csv").string(), corpus::Split::test, train.labels);
  auto a = corpus::compute_stats(train);
  auto b = corpus::compute_stats(test);
  std::vector<std::string> problems;
  auto exact = [&](const char* what, double got, double want) {
    if (got != want) problems.push_back(fmt::format("{} {} != {}", what, got, want));
  };
  auto near = [&](const char* what, double got, double want) {
    if (std::abs(got - want) > 0.2) problems.push_back(fmt::format("{} {:.2f} not within 0.2 of {}", what, got, want));
  };
  exact("train examples", a.n_examples, 10003);
  exact("test examples", b.n_examples, 3080);
  exact("train intents", a.n_intents, 77);
  exact("test intents", b.n_intents, 77);
  exact("train char min", a.char_len.min, 13);
  exact("train char max", a.char_len.max, 433);
  exact("test char min", b.char_len.min, 13);
  exact("test char max", b.char_len.max, 368);
  near("train char mean", a.char_len.mean, 59.5);
  near("test char mean", b.char_len.mean, 54.2);
  near("train word mean", a.word_count.mean, 11.9);
  near("test word mean", b.word_count.mean, 10.9);
  if (!problems.empty()) {
    std::string all;
    for (const auto& p : problems) all += (all.empty() ? "" : "; ") + p;
    return fail(all);
  }
  return pass(fmt::format("10,003/3,080/77; chars {:.1f}/{:.1f}, words {:.1f}/{:.1f}", a.char_len.mean,
                          b.char_len.mean, a.word_count.mean, b.word_count.mean));
}

Verdict test_balance() {
  auto dir = banking77_dir();
  if (!dir) return skip(kNoBanking77);
  auto test = corpus::load_csv((*dir / "test.csv").string(), corpus::Split::test);
  auto counts = corpus::label_distribution(test);
  if (counts.size() != 77) return fail(fmt::format("{} labels in test", counts.size()));
  for (corpus::LabelId c = 0; c < counts.size(); ++c) {
    if (counts[c] != 40) return fail(fmt::format("{} has {} examples", test.labels.name(c), counts[c]));
  }
  return pass("40 examples for each of 77 labels");
}

Verdict gradient_correctness() {
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto p = encoder::init_params(encoder::FeaturizerConfig{3, 5, 64}, 8, 5000 + trial);
    auto batch = fewshot::testing::random_batch(rng, 6);
    auto check = fewshot::testing::gradient_check(p, batch, 1e-5);
    worst = std::max(worst, check.max_relative_error);
    if (!(check.max_relative_error < 1e-4)) {
      return fail(fmt::format("trial {}: max relative error {:.3e}", trial, check.max_relative_error));
    }
  }
  return pass(fmt::format("100 trials, worst max relative error {:.2e}", worst));
}

Verdict few_shot_sanity() {
  auto train = corpus::load_csv(data_path("synthetic5/train.csv"), corpus::Split::train);
  auto test = corpus::load_csv(data_path("synthetic5/test.csv"), corpus::Split::test, train.labels);
  std::vector<std::string> texts;
  for (const auto& u : test.utterances) texts.push_back(u.text);
  auto accuracy = [&](std::size_t shots, std::uint64_t seed) {
    auto model = contrastive::train_pipeline(train, shots, contrastive::PipelineConfig{}, seed);
    encoder::ReferenceEncoder enc(model.params);
    auto preds = contrastive::predict_batch(enc, model.head, texts);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].label == test.utterances[i].label;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
  };
  std::string detail;
  bool ok = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double a3 = accuracy(3, seed);
    const double a10 = accuracy(10, seed);
    detail += fmt::format("{}seed {}: {:.3f}/{:.3f}", detail.empty() ? "" : ", ", seed, a3, a10);
    ok = ok && a3 >= 0.90 && a10 >= 0.95 && a10 >= a3;
  }
  return ok ? pass("3-shot/10-shot " + detail) : fail("3-shot/10-shot " + detail);
}

Verdict metric_oracle() {
  Rng rng(99);
  std::size_t abstention_free = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double rate = trial % 2 == 0 ? 0.0 : 0.25;
    auto run = fewshot::testing::random_run(rng, rate);
    auto report = evalkit::score(run.golds, run.preds, run.classes);
    auto oracle = fewshot::testing::brute_force_f1(run.golds, run.preds, run.classes);
    if (std::abs(report.micro_f1 - oracle.micro_f1) > 1e-12 || std::abs(report.macro_f1 - oracle.macro_f1) > 1e-12) {
      return fail(fmt::format("trial {}: micro {} vs {}, macro {} vs {}", trial, report.micro_f1, oracle.micro_f1,
                              report.macro_f1, oracle.macro_f1));
    }
    if (report.n_unanswered == 0) {
      ++abstention_free;
      if (std::abs(report.micro_f1 - report.accuracy) > 1e-12) {
        return fail(fmt::format("trial {}: micro-F1 {} != accuracy {}", trial, report.micro_f1, report.accuracy));
      }
    }
  }
  return pass(fmt::format("1000 trials within 1e-12; micro-F1 = accuracy in {} abstention-free trials",
                          abstention_free));
}

Verdict prompt_golden() {
  auto d = corpus::load_csv(data_path("fixtures/tiny3.csv"), corpus::Split::train);
  auto s = corpus::sample_curated(d, corpus::load_manifest(data_path("fixtures/tiny3_manifest.json")));
  const char* query = "Can I pay in dollars at the current rate?";
  const auto golden_dir = fewshot::testing::source_dir() / "tests/golden";
  for (auto style : {prompting::PromptStyle::system_context, prompting::PromptStyle::chat_history}) {
    auto b = prompting::build_prompt(d.labels, s, query, style);
    auto want = read_file(golden_dir / fmt::format("tiny3_{}.txt", prompting::to_string(style)));
    if (prompting::render_messages(b.messages) != want) {
      return fail(fmt::format("{} differs from its golden file", prompting::to_string(style)));
    }
  }

  // Full 77-class 1-shot prompt with the longest test query.
  corpus::Dataset train, test;
  std::string source;
  if (auto dir = banking77_dir()) {
    train = corpus::load_csv((*dir / "train.csv").string(), corpus::Split::train);
    test = corpus::load_csv((*dir / "test.csv").string(), corpus::Split::test, train.labels);
    source = "Banking77";
  } else {
    // Stand-in utterances at the Banking77 mean length of about 12 words.
    auto names = fewshot::testing::banking77_labels(data_path("banking77/labels.txt"));
    train = fewshot::testing::banking77_standin(names, 2, 12, corpus::Split::train, "example");
    test = fewshot::testing::banking77_standin(names, 1, 66, corpus::Split::test, "query");
    source = "labels.txt with stand-in utterances";
  }
  auto longest = std::max_element(test.utterances.begin(), test.utterances.end(),
                                   [](const auto& a, const auto& b) { return a.text.size() < b.text.size(); });
  std::size_t worst = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto sample = corpus::sample_random(train, 1, seed);
    auto b = prompting::build_prompt(train.labels, sample, longest->text, prompting::PromptStyle::system_context);
    worst = std::max(worst, b.estimated_tokens);
    if (!prompting::check_budget(b.estimated_tokens, prompting::kGpt35ContextLimit).pass) {
      return fail(fmt::format("1-shot prompt of {} tokens does not fit 4096 ({})", b.estimated_tokens, source));
    }
  }
  return pass(fmt::format("both styles byte-identical; 77-class 1-shot prompt at most {} tokens ({})", worst, source));
}

Verdict parser_suite() {
  auto names = fewshot::testing::banking77_labels(data_path("banking77/labels.txt"));
  corpus::LabelSpace labels(names);
  struct Case {
    std::string raw;
    icl::ParseRoute route;
    std::optional<std::string> label;
  };
  const std::vector<Case> cases = {
      {"0 activate_my_card", icl::ParseRoute::exact_pair, "activate_my_card"},
      {"Exchange rate", icl::ParseRoute::name_only, "exchange_rate"},
      {"76", icl::ParseRoute::index_only, names[76]},
      {"-1 Unknown", icl::ParseRoute::abstain_token, std::nullopt},
      {"the exchange rate", icl::ParseRoute::fuzzy, "exchange_rate"},
      // Overlaps top_up_failed and top_up_reverted equally: rejected.
      {"top up", icl::ParseRoute::failed, std::nullopt},
      // Below the overlap threshold: rejected.
      {"something about my card", icl::ParseRoute::failed, std::nullopt},
      {"I'm sorry, I can't help with that.", icl::ParseRoute::failed, std::nullopt},
  };
  for (const auto& c : cases) {
    auto p = icl::parse_response(c.raw, labels);
    if (p.route != c.route) {
      return fail(fmt::format("'{}' took route {} instead of {}", c.raw, icl::to_string(p.route), icl::to_string(c.route)));
    }
    if (c.label && (!p.has_label() || labels.name(p.label) != *c.label)) {
      return fail(fmt::format("'{}' did not map to {}", c.raw, *c.label));
    }
  }
  for (corpus::LabelId id = 0; id < labels.size(); ++id) {
    auto p = icl::parse_response(labels.name(id), labels);
    if (!p.has_label() || p.label != id) return fail(fmt::format("label '{}' does not round-trip", labels.name(id)));
  }
  return pass(fmt::format("{} route cases; all {} label names round-trip", cases.size(), labels.size()));
}

Verdict icl_replay() {
  TempDir dir;
  corpus::Dataset train, test;
  std::string source;
  if (auto bdir = banking77_dir()) {
    train = corpus::load_csv((*bdir / "train.csv").string(), corpus::Split::train);
    test = corpus::load_csv((*bdir / "test.csv").string(), corpus::Split::test, train.labels);
    source = "Banking77 test set";
  } else {
    auto names = fewshot::testing::banking77_labels(data_path("banking77/labels.txt"));
    train = fewshot::testing::banking77_standin(names, 3, 12, corpus::Split::train, "example");
    test = fewshot::testing::banking77_standin(names, 40, 11, corpus::Split::test, "query");
    source = "3,080-instance stand-in";
  }
  auto sample = corpus::sample_random(train, 1, 11);
  const auto labels = train.labels;
  const auto info = fewshot::testing::mock_info();
  const auto transcript = dir.file("transcript.jsonl");

  auto eval_bytes = [&](const icl::RunRecord& r) {
    std::vector<corpus::LabelId> golds;
    std::vector<icl::Prediction> preds;
    for (const auto& inst : r.instances) {
      golds.push_back(inst.gold);
      preds.push_back(inst.prediction);
    }
    return evalkit::to_json(evalkit::score(golds, preds, labels.size()), labels).dump();
  };
  auto run_bytes = [&](const std::string& run_dir) {
    return read_file(fs::path(run_dir) / "run.json") + read_file(fs::path(run_dir) / "instances.jsonl") +
           read_file(fs::path(run_dir) / "summary.json");
  };

  // Record against the scripted model.
  icl::ScriptedBackend live(info, [&](const std::vector<icl::ChatMessage>& m) {
    return fewshot::testing::scripted_reply(m, labels);
  });
  icl::RecordingBackend recorder(live, transcript);
  icl::RunOptions opt;
  opt.seed = 11;
  opt.checkpoint_dir = dir.file("recorded");
  auto recorded = icl::run_batch(recorder, test, sample, opt);
  const auto stored_eval = eval_bytes(recorded);
  const auto stored_run = run_bytes(opt.checkpoint_dir);

  // Replay.
  auto replay_backend = icl::TranscriptBackend::load(transcript, info);
  opt.checkpoint_dir = dir.file("replayed");
  auto replayed = icl::run_batch(replay_backend, test, sample, opt);
  if (run_bytes(opt.checkpoint_dir) != stored_run) return fail("replayed run files differ from the recording");
  if (eval_bytes(replayed) != stored_eval) return fail("replayed EvalReport differs");
  if (eval_bytes(icl::load_run(opt.checkpoint_dir)) != stored_eval) return fail("reloaded EvalReport differs");

  // Kill a replaying process at a random instance, then resume.
  Rng rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
  const std::size_t kill_at = rng.below(test.size() - 1);
  opt.checkpoint_dir = dir.file("killed");
  const pid_t pid = ::fork();
  if (pid < 0) return fail("fork failed");
  if (pid == 0) {
    auto backend = icl::TranscriptBackend::load(transcript, info);
    auto child_opt = opt;
    child_opt.on_commit = [kill_at](const icl::InstanceRecord& r) {
      if (r.index == kill_at) ::raise(SIGKILL);
    };
    try {
      icl::run_batch(backend, test, sample, child_opt);
    } catch (...) {
    }
    ::_exit(0);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  if (!WIFSIGNALED(status) || WTERMSIG(status) != SIGKILL) return fail("replay child was not killed");
  auto resume_backend = icl::TranscriptBackend::load(transcript, info);
  opt.resume = true;
  auto resumed = icl::run_batch(resume_backend, test, sample, opt);
  if (resume_backend.calls() != test.size() - kill_at - 1) {
    return fail(fmt::format("resume re-queried {} instances, expected {}", resume_backend.calls(),
                            test.size() - kill_at - 1));
  }
  if (run_bytes(opt.checkpoint_dir) != stored_run) return fail("resumed run files differ from the recording");
  if (eval_bytes(resumed) != stored_eval) return fail("resumed EvalReport differs");
  return pass(fmt::format("{} instances ({}); killed after instance {}, resumed byte-identical", test.size(), source,
                          kill_at));
}

Verdict cost_arithmetic() {
  auto table = prompting::load_price_table(data_path("prices.json"));
  const auto& g35 = table.at("gpt-3.5-turbo").rates;
  const auto& g4 = table.at("gpt-4").rates;
  if (prompting::estimate_cost(1000, 0, g35).total_usd != 0.002) return fail("gpt-3.5-turbo 1K prompt tokens != $0.002");
  if (prompting::estimate_cost(1000, 0, g4).total_usd != 0.03) return fail("gpt-4 1K prompt tokens != $0.03");

  auto names = fewshot::testing::banking77_labels(data_path("banking77/labels.txt"));
  auto train = fewshot::testing::banking77_standin(names, 2, 12, corpus::Split::train, "example");
  auto bundle = prompting::build_prompt(train.labels, corpus::sample_random(train, 1, 0), "how do I top up",
                                        prompting::PromptStyle::system_context);
  const auto p = static_cast<std::int64_t>(bundle.estimated_tokens);
  const std::int64_t c = 4;
  for (const auto* rates : {&g35, &g4}) {
    auto per = prompting::estimate_cost(p, c, *rates);
    auto total = prompting::estimate_cost(p * 3080, c * 3080, *rates);
    if (std::abs(total.total_usd - per.total_usd * 3080) > 1e-12 * total.total_usd) {
      return fail(fmt::format("projection {} != {} x 3080", total.total_usd, per.total_usd));
    }
  }
  // The CLI projection agrees with the library.
  TempDir dir;
  corpus::write_csv(train, dir.file("train.csv"));
  std::string out;
  if (run_cli({"cost", "--data", dir.file("train.csv"), "--prompt-tokens", std::to_string(p), "--completion-tokens",
               std::to_string(c)},
              &out) != 0) {
    return fail("cost command failed: " + out);
  }
  const auto want = fmt::format("{:.4f}", prompting::estimate_cost(p * 3080, c * 3080, g4).total_usd);
  if (out.find(want) == std::string::npos) return fail("cost command does not print " + want);
  return pass(fmt::format("$0.002 and $0.03 per 1K; {} prompt tokens x 3,080 = ${:.2f} (gpt-3.5-turbo), ${} (gpt-4)", p,
                          prompting::estimate_cost(p * 3080, c * 3080, g35).total_usd, want));
}

std::vector<std::size_t> pick_three(httplib::Client& client, const std::string& base, corpus::LabelId c,
                                    std::size_t offset) {
  auto res = client.Get(fmt::format("{}/classes/{}/candidates", base, c));
  if (!res || res->status != 200) throw Error("candidates request failed");
  auto arr = json::parse(res->body);
  if (arr.size() != 10) throw Error(fmt::format("{} candidates served", arr.size()));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < 3; ++k) out.push_back(arr[(offset + 3 * k) % 10].at("row_index").get<std::size_t>());
  return out;
}

bool put_selection(httplib::Client& client, const std::string& base, corpus::LabelId c,
                   const std::vector<std::size_t>& rows) {
  auto res = client.Put(fmt::format("{}/classes/{}/selection", base, c), json{{"indices", rows}}.dump(),
                        "application/json");
  return res && res->status == 200;
}

Verdict curation_roundtrip() {
  const auto csv = data_path("synthetic5/train.csv");
  auto d = corpus::load_csv(csv, corpus::Split::train);

  // In-process service: start, select 3 of 10 per class, export.
  {
    TempDir dir;
    curation::SessionStore store(dir.path());
    curation::CurationServer server(store);
    const int port = server.bind("127.0.0.1", 0);
    std::thread t([&] { server.listen(); });
    httplib::Client client("127.0.0.1", port);
    auto created = client.Post("/sessions", json{{"dataset_path", csv}, {"seed", 21}}.dump(), "application/json");
    if (!created || created->status != 201) {
      server.stop();
      t.join();
      return fail("session creation failed");
    }
    const auto base = "/sessions/" + json::parse(created->body).at("session_id").get<std::string>();
    std::vector<std::vector<std::size_t>> chosen;
    bool ok = true;
    for (corpus::LabelId c = 0; c < d.labels.size(); ++c) {
      chosen.push_back(pick_three(client, base, c, c));
      ok = ok && put_selection(client, base, c, chosen.back());
    }
    auto manifest = client.Get(base + "/manifest");
    server.stop();
    t.join();
    if (!ok || !manifest || manifest->status != 200) return fail("selection or export failed");
    auto sample = corpus::sample_curated(d, corpus::manifest_from_json(json::parse(manifest->body)));
    for (corpus::LabelId c = 0; c < d.labels.size(); ++c) {
      if (sample.instances[c].size() != 3) return fail("curated sample has the wrong size");
      for (std::size_t k = 0; k < 3; ++k) {
        const auto& want = d.utterances[chosen[c][k]];
        if (sample.instances[c][k].text != want.text || sample.instances[c][k].row != want.row) {
          return fail(fmt::format("class {} pick {} is not the selected text", c, k));
        }
      }
    }
  }

  // Durability: kill the service process mid-session and restart it.
  TempDir dir;
  const std::vector<std::string> argv = {FEWSHOT_BINARY, "curate", "--data", csv, "--seed", "21", "--port", "0",
                                         "--state", dir.file("state"), "--out", dir.file("out")};
  auto start = [&](fewshot::testing::Child& child) -> int {
    auto line = child.wait_for("listening on http://", std::chrono::seconds(10));
    if (!line) return -1;
    return std::stoi(line->substr(line->rfind(':') + 1));
  };
  std::vector<std::vector<std::size_t>> chosen(d.labels.size());
  std::string session_id;
  {
    fewshot::testing::Child first(argv);
    const int port = start(first);
    if (port < 0) return fail("service did not start");
    httplib::Client client("127.0.0.1", port);
    auto ids = json::parse(client.Get("/sessions")->body).at("sessions");
    if (ids.size() != 1) return fail("expected one session");
    session_id = ids[0].get<std::string>();
    const auto base = "/sessions/" + session_id;
    for (corpus::LabelId c = 0; c < 2; ++c) {
      chosen[c] = pick_three(client, base, c, 1);
      if (!put_selection(client, base, c, chosen[c])) return fail("selection failed");
    }
    first.kill(SIGKILL);
    first.wait();
  }
  fewshot::testing::Child second(argv);
  const int port = start(second);
  if (port < 0) return fail("service did not restart");
  httplib::Client client("127.0.0.1", port);
  const auto base = "/sessions/" + session_id;
  auto state = json::parse(client.Get(base)->body);
  if (state.at("progress").at("done") != 2) return fail("restarted session lost progress");
  for (corpus::LabelId c = 0; c < 2; ++c) {
    if (state.at("classes")[c].at("selections").get<std::vector<std::size_t>>() != chosen[c]) {
      return fail("restarted session lost a selection");
    }
  }
  for (corpus::LabelId c = 2; c < d.labels.size(); ++c) {
    chosen[c] = pick_three(client, base, c, 2);
    if (!put_selection(client, base, c, chosen[c])) return fail("selection after restart failed");
  }
  if (!second.wait_for("all classes done", std::chrono::seconds(10))) return fail("no completion message");
  second.kill(SIGTERM);
  const int status = second.wait();
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return fail("service did not exit cleanly on SIGTERM");
  auto m = corpus::load_manifest(dir.file("out/" + session_id + ".manifest.json"));
  auto sample = corpus::sample_curated(d, m);
  for (corpus::LabelId c = 0; c < d.labels.size(); ++c) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (sample.instances[c][k].row != chosen[c][k]) return fail("manifest after restart lost a selection");
    }
  }
  return pass("5 classes x 3 of 10 round-trip; state intact across SIGKILL and restart");
}

Verdict pretrained_plugin() {
  auto dir = banking77_dir();
  const char* emb = std::getenv("FEWSHOT_EMBEDDINGS");
  if (!dir || emb == nullptr || *emb == '\0') {
    return skip("optional: needs BANKING77_DIR and FEWSHOT_EMBEDDINGS (precomputed sentence embeddings JSONL)");
  }
  auto train = corpus::load_csv((*dir / "train.csv").string(), corpus::Split::train);
  auto test = corpus::load_csv((*dir / "test.csv").string(), corpus::Split::test, train.labels);
  auto enc = encoder::PrecomputedEncoder::load(emb);
  auto sample = corpus::sample_random(train, 10, 0);
  auto fit = contrastive::fit_head(enc, sample, contrastive::HeadConfig{}, 0);
  std::vector<std::string> texts;
  std::vector<corpus::LabelId> golds, preds;
  for (const auto& u : test.utterances) {
    texts.push_back(u.text);
    golds.push_back(u.label);
  }
  for (const auto& p : contrastive::predict_batch(enc, fit.head, texts)) preds.push_back(p.label);
  auto report = evalkit::score_labels(golds, preds, train.labels.size());
  const auto msg = fmt::format("10-shot micro-F1 {}", evalkit::percent(report.micro_f1));
  return report.micro_f1 >= 0.85 ? pass(msg) : fail(msg + " < 85.0");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"dataset-statistics", 5, dataset_statistics},
      {"test-balance", 1, test_balance},
      {"gradient-correctness", 30, gradient_correctness},
      {"few-shot-sanity", 120, few_shot_sanity},
      {"metric-oracle", 10, metric_oracle},
      {"prompt-golden", 1, prompt_golden},
      {"parser-suite", 1, parser_suite},
      {"icl-replay", 60, icl_replay},
      {"cost-arithmetic", 1, cost_arithmetic},
      {"curation-roundtrip", 30, curation_roundtrip},
      {"pretrained-plugin", 600, pretrained_plugin},
  };
  std::vector<std::string> selected(argv + 1, argv + argc);
  for (const auto& name : selected) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.name == name; })) {
      std::cerr << "unknown criterion: " << name << '\n';
      return 2;
    }
  }

  std::size_t failed = 0, skipped = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.name) == selected.end()) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (v.status == Status::pass && secs > c.time_limit_s) {
      v = fail(fmt::format("{} (took {:.1f} s, limit {} s)", v.detail, secs, c.time_limit_s));
    }
    const char* tag = v.status == Status::pass ? "PASS" : v.status == Status::fail ? "FAIL" : "SKIP";
    failed += v.status == Status::fail;
    skipped += v.status == Status::skip;
    std::cout << fmt::format("{} {:<21} {} [{:.2f} s]", tag, c.name, v.detail, secs) << std::endl;
  }
  if (failed > 0) return 1;
  if (skipped == ran) return 77;
  return 0;
}
