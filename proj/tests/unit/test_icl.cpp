#include <doctest.h>

#include <set>
#include <stdexcept>

#include "banking_fixture.hpp"
#include "fewshot/icl.hpp"
#include "fewshot/rng.hpp"
#include "icl_fixture.hpp"
#include "support.hpp"

using namespace fewshot;
using namespace fewshot::icl;
using fewshot::testing::data_path;
using fewshot::testing::TempDir;

namespace {

corpus::LabelSpace tiny_labels() { return corpus::LabelSpace({"activate_my_card", "declined_card_payment", "exchange_rate"}); }

struct Expect {
  const char* raw;
  Outcome outcome;
  ParseRoute route;
  corpus::LabelId label;
};

// Small dataset whose queries name their label, for run_batch tests.
corpus::Dataset run_fixture(std::size_t per_class) {
  std::vector<std::pair<std::string, std::string>> rows;
  for (const char* name : {"activate_my_card", "declined_card_payment", "exchange_rate"}) {
    for (std::size_t i = 0; i < per_class; ++i) rows.emplace_back(fmt::format("question {} on {}", i, name), name);
  }
  auto d = corpus::make_dataset(rows, corpus::Split::test);
  d.fingerprint = "fixture";
  return d;
}

ScriptedBackend scripted(const corpus::LabelSpace& labels) {
  return ScriptedBackend(fewshot::testing::mock_info(), [labels](const std::vector<ChatMessage>& m) {
    return fewshot::testing::scripted_reply(m, labels);
  });
}

}  // namespace

TEST_CASE("parse_response routes") {
  const auto labels = tiny_labels();
  const std::vector<Expect> cases = {
      {"2 exchange_rate", Outcome::label, ParseRoute::exact_pair, 2},
      {"  0 activate_my_card\n", Outcome::label, ParseRoute::exact_pair, 0},
      {"1 Declined Card Payment.", Outcome::label, ParseRoute::exact_pair, 1},
      {"exchange_rate", Outcome::label, ParseRoute::name_only, 2},
      {"\"Exchange-Rate.\"", Outcome::label, ParseRoute::name_only, 2},
      {"activate my card", Outcome::label, ParseRoute::name_only, 0},
      {"1", Outcome::label, ParseRoute::index_only, 1},
      {"2.", Outcome::label, ParseRoute::index_only, 2},
      {"-1 Unknown", Outcome::abstain, ParseRoute::abstain_token, 0},
      {"\"-1 unknown\"", Outcome::abstain, ParseRoute::abstain_token, 0},
      {"the exchange rate", Outcome::label, ParseRoute::fuzzy, 2},
      {"declined card", Outcome::label, ParseRoute::fuzzy, 1},
      {"3", Outcome::parse_failed, ParseRoute::failed, 0},
      {"-1", Outcome::parse_failed, ParseRoute::failed, 0},
      {"", Outcome::parse_failed, ParseRoute::failed, 0},
      {"I cannot help with that", Outcome::parse_failed, ParseRoute::failed, 0},
      {"card", Outcome::parse_failed, ParseRoute::failed, 0},
  };
  for (const auto& c : cases) {
    CAPTURE(c.raw);
    auto p = parse_response(c.raw, labels);
    CHECK(p.outcome == c.outcome);
    CHECK(p.route == c.route);
    CHECK(p.raw_text == c.raw);
    if (c.outcome == Outcome::label) CHECK(p.label == c.label);
  }
}

TEST_CASE("parse_response round-trips every Banking77 label") {
  auto names = fewshot::testing::banking77_labels(data_path("banking77/labels.txt"));
  corpus::LabelSpace labels(names);
  for (corpus::LabelId id = 0; id < labels.size(); ++id) {
    CAPTURE(labels.name(id));
    auto exact = parse_response(fmt::format("{} {}", id, labels.name(id)), labels);
    CHECK(exact.route == ParseRoute::exact_pair);
    CHECK(exact.label == id);
    auto name = parse_response(labels.name(id), labels);
    CHECK(name.route == ParseRoute::name_only);
    CHECK(name.label == id);
    auto index = parse_response(std::to_string(id), labels);
    CHECK(index.route == ParseRoute::index_only);
    CHECK(index.label == id);
  }
}

TEST_CASE("parse_response is total on random input") {
  const auto labels = tiny_labels();
  Rng rng(12);
  const std::string alphabet = "0123456789 -_.\"'abcdeghklmnoprtuxyAEUX\n\t";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    const auto n = rng.below(30);
    for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
    Prediction p;
    CHECK_NOTHROW(p = parse_response(s, labels));
    CHECK(p.raw_text == s);
    if (p.has_label()) CHECK(p.label < labels.size());
    CHECK((p.outcome == Outcome::parse_failed) == (p.route == ParseRoute::failed));
  }
}

TEST_CASE("normalize_label and token_overlap") {
  CHECK(normalize_label("  'Top Up--Failed'. ") == "top_up_failed");
  CHECK(normalize_label("`exchange rate`") == "exchange_rate");
  CHECK(token_overlap("exchange rate", "exchange_rate") == 1.0);
  CHECK(token_overlap("the exchange rate", "exchange_rate") == doctest::Approx(0.8));
  CHECK(token_overlap("", "exchange_rate") == 0.0);
}

TEST_CASE("prediction JSON round-trip") {
  auto p = parse_response("2 exchange_rate", tiny_labels());
  CHECK(prediction_from_json(to_json(p)) == p);
  auto a = parse_response("-1 Unknown", tiny_labels());
  CHECK(prediction_from_json(to_json(a)) == a);
}

TEST_CASE("request_hash depends on roles and content") {
  std::vector<ChatMessage> a = {{prompting::Role::system, "x"}, {prompting::Role::user, "q"}};
  auto b = a;
  b[1].role = prompting::Role::assistant;
  auto c = a;
  c[1].content = "q ";
  CHECK(request_hash(a) == request_hash(a));
  CHECK(request_hash(a).size() == 16);
  CHECK(request_hash(a) != request_hash(b));
  CHECK(request_hash(a) != request_hash(c));
}

TEST_CASE("recorded transcripts replay the same replies") {
  TempDir dir;
  const auto labels = tiny_labels();
  auto live = scripted(labels);
  RecordingBackend recorder(live, dir.file("t.jsonl"));
  std::vector<std::vector<ChatMessage>> requests;
  for (int i = 0; i < 20; ++i) {
    requests.push_back({{prompting::Role::system, "s"}, {prompting::Role::user, fmt::format("q{} exchange_rate", i)}});
  }
  std::vector<std::string> replies;
  for (const auto& r : requests) replies.push_back(recorder.complete(r));
  auto replay = TranscriptBackend::load(dir.file("t.jsonl"), fewshot::testing::mock_info());
  CHECK(replay.size() == 20);
  for (std::size_t i = 0; i < requests.size(); ++i) CHECK(replay.complete(requests[i]) == replies[i]);
  CHECK(replay.calls() == 20);
  try {
    replay.complete({{prompting::Role::user, "never recorded"}});
    FAIL("expected a missing-response error");
  } catch (const TransportError&) {
    FAIL("a missing transcript entry must not be retried");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("no response") != std::string::npos);
  }
  CHECK_THROWS_AS(TranscriptBackend::load(dir.file("absent.jsonl"), fewshot::testing::mock_info()), IoError);
  fewshot::testing::write_file(dir.path() / "bad.jsonl", "{\"request_hash\": 1}\n");
  CHECK_THROWS_AS(TranscriptBackend::load(dir.file("bad.jsonl"), fewshot::testing::mock_info()), Error);
}

TEST_CASE("complete_with_retry backs off on transport errors only") {
  std::vector<std::chrono::milliseconds> slept;
  RetryPolicy policy;
  policy.sleep = [&](std::chrono::milliseconds d) { slept.push_back(d); };
  const std::vector<ChatMessage> msg = {{prompting::Role::user, "q"}};

  int failures = 2;
  ScriptedBackend flaky(fewshot::testing::mock_info(), [&](const std::vector<ChatMessage>&) -> std::string {
    if (failures-- > 0) throw TransportError("503");
    return "0 activate_my_card";
  });
  CHECK(complete_with_retry(flaky, msg, policy) == "0 activate_my_card");
  CHECK(flaky.calls() == 3);
  CHECK(slept == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(1000), std::chrono::milliseconds(2000)});

  slept.clear();
  ScriptedBackend down(fewshot::testing::mock_info(),
                       [](const std::vector<ChatMessage>&) -> std::string { throw TransportError("timeout"); });
  try {
    complete_with_retry(down, msg, policy);
    FAIL("expected RetriesExhausted");
  } catch (const RetriesExhausted& e) {
    CHECK(e.attempts().size() == 3);
    CHECK(e.attempts()[0].find("timeout") != std::string::npos);
  }
  CHECK(down.calls() == 3);
  CHECK(slept.size() == 2);

  ScriptedBackend broken(fewshot::testing::mock_info(),
                         [](const std::vector<ChatMessage>&) -> std::string { throw Error("401 unauthorized"); });
  CHECK_THROWS_AS(complete_with_retry(broken, msg, policy), Error);
  CHECK(broken.calls() == 1);
}

TEST_CASE("classify_one refuses over-budget prompts before calling the backend") {
  auto d = run_fixture(2);
  auto s = corpus::sample_random(d, 1, 1);
  auto tight = ScriptedBackend(fewshot::testing::mock_info(60), [](const std::vector<ChatMessage>&) {
    return std::string("0 activate_my_card");
  });
  try {
    classify_one(tight, d.labels, s, "query", prompting::PromptStyle::system_context);
    FAIL("expected BudgetExceeded");
  } catch (const BudgetExceeded& e) {
    CHECK(e.limit() == 60);
    CHECK(e.tokens() > 44);
  }
  CHECK(tight.calls() == 0);

  auto ok = scripted(d.labels);
  auto c = classify_one(ok, d.labels, s, "question 9 on exchange_rate", prompting::PromptStyle::chat_history);
  CHECK(c.cost.prompt_tokens > 0);
  CHECK(c.cost.total_usd > 0);
}

TEST_CASE("run_batch checkpoints, resumes and rejects mismatches") {
  TempDir dir;
  auto d = run_fixture(10);
  auto s = corpus::sample_random(d, 2, 3);
  auto backend = scripted(d.labels);
  RunOptions opt;
  opt.checkpoint_dir = dir.file("run");
  opt.seed = 3;
  opt.durable = false;

  RunOptions plain = opt;
  plain.checkpoint_dir.clear();
  auto reference = run_batch(backend, d, s, plain);
  REQUIRE(reference.instances.size() == d.size());

  // Interrupt after 7 commits.
  RunOptions interrupted = opt;
  interrupted.on_commit = [](const InstanceRecord& r) {
    if (r.index == 6) throw std::runtime_error("killed");
  };
  CHECK_THROWS_AS(run_batch(backend, d, s, interrupted), std::runtime_error);
  // A torn final line, as left by a crash mid-write.
  {
    std::ofstream out(dir.path() / "run/instances.jsonl", std::ios::app);
    out << "{\"index\": 7, \"que";
  }
  CHECK_THROWS_AS(run_batch(backend, d, s, opt), Error);  // exists, resume not requested

  const auto calls_before = backend.calls();
  RunOptions resume = opt;
  resume.resume = true;
  auto resumed = run_batch(backend, d, s, resume);
  CHECK(backend.calls() - calls_before == d.size() - 7);
  CHECK(resumed.instances == reference.instances);
  CHECK(resumed.cost.total_usd == doctest::Approx(reference.cost.total_usd));

  auto loaded = load_run(opt.checkpoint_dir);
  CHECK(loaded.instances == reference.instances);
  CHECK(loaded.manifest_hash == resumed.manifest_hash);
  CHECK(loaded.style == opt.style);
  CHECK(std::filesystem::exists(dir.path() / "run/summary.json"));

  RunOptions other = resume;
  other.style = prompting::PromptStyle::chat_history;
  CHECK_THROWS_AS(run_batch(backend, d, s, other), RunMismatch);
  auto s2 = corpus::sample_random(d, 2, 4);
  CHECK_THROWS_AS(run_batch(backend, d, s2, resume), RunMismatch);
}

TEST_CASE("run_batch with several requests in flight matches the sequential run") {
  auto d = run_fixture(15);
  auto s = corpus::sample_random(d, 1, 2);
  auto backend = scripted(d.labels);
  RunOptions seq;
  auto a = run_batch(backend, d, s, seq);
  RunOptions par;
  par.max_in_flight = 6;
  auto b = run_batch(backend, d, s, par);
  CHECK(a.instances == b.instances);
  std::set<ParseRoute> routes;
  for (const auto& inst : a.instances) routes.insert(inst.prediction.route);
  CHECK(routes.size() >= 3);
}

TEST_CASE("run_batch stops at the first failure with earlier instances committed") {
  TempDir dir;
  auto d = run_fixture(4);
  auto s = corpus::sample_random(d, 1, 2);
  RetryPolicy fast;
  fast.sleep = [](std::chrono::milliseconds) {};
  ScriptedBackend backend(fewshot::testing::mock_info(), [&](const std::vector<ChatMessage>& m) -> std::string {
    if (m.back().content == d.utterances[5].text) throw TransportError("503");
    return fewshot::testing::scripted_reply(m, d.labels);
  });
  RunOptions opt;
  opt.checkpoint_dir = dir.file("run");
  opt.retry = fast;
  opt.max_in_flight = 3;
  opt.durable = false;
  CHECK_THROWS_AS(run_batch(backend, d, s, opt), RetriesExhausted);
  auto partial = load_run(opt.checkpoint_dir);
  CHECK(partial.instances.size() == 5);
}
