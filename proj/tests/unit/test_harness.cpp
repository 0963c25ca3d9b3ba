#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "dpg/client.hpp"
#include "dpg/config.hpp"
#include "dpg/dataset.hpp"
#include "dpg/errors.hpp"
#include "dpg/generation.hpp"
#include "dpg/judge.hpp"
#include "dpg/manifest.hpp"
#include "dpg/mock_server.hpp"
#include "dpg/pipeline.hpp"
#include "dpg/report.hpp"
#include "dpg/reward.hpp"
#include "dpg/version.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace dpg;
using harness::Arm;
using harness::ManifestItem;
using harness::MockRule;
using harness::MockServer;
using harness::RunManifest;
using testsupport::TempDir;
using testsupport::slurp;

namespace {

const client::RetryPolicy kFastRetry{1e-4, 2.0, 1e-3};

std::shared_ptr<client::Client> make_client(const std::string& base_url,
                                            std::shared_ptr<client::ResponseCache> cache = nullptr,
                                            int max_retries = 1) {
  client::EndpointConfig cfg;
  cfg.base_url = base_url;
  cfg.model = "mock-model";
  cfg.max_retries = max_retries;
  cfg.timeout_s = 5;
  auto cl = std::make_shared<client::Client>(cfg, std::move(cache));
  cl->set_retry_policy(kFastRetry);
  return cl;
}

void replace_all(std::string& text, const std::string& from, const std::string& to) {
  REQUIRE(!from.empty());
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string normalized(const RunManifest& m) {
  std::string text = m.to_json();
  replace_all(text, m.run_id, "<run_id>");
  replace_all(text, m.created_utc, "<created>");
  return text;
}

bool tree_contains(const fs::path& root, const std::string& needle) {
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    if (slurp(entry.path()).find(needle) != std::string::npos) return true;
  }
  return false;
}

fs::path only_subdir(const fs::path& root) {
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  REQUIRE(dirs.size() == 1);
  return dirs.front();
}

int count_requests_containing(const MockServer& server, const std::string& needle) {
  int n = 0;
  for (const harness::MockRequest& r : server.requests()) {
    if (r.last_user.find(needle) != std::string::npos) ++n;
  }
  return n;
}

std::vector<PromptRecord> three_prompts() {
  return {
      {"q-1", "Why do cats purr so loudly", "unit", {}},
      {"q-2", "Explain tides on short coastlines", "unit", {}},
      {"q-3", "How do glaciers carve valleys", "unit", {}},
  };
}

const std::string kDerivedFixed = "What is the core mechanism at play here?";

std::vector<MockRule> derive_then_echo_rules() {
  return {
      {MockRule::Match::Contains, "### Instruction:", MockRule::Reply::Fixed, kDerivedFixed, 0.0},
      {MockRule::Match::Any, "", MockRule::Reply::Echo, "", 0.0},
  };
}

}  // namespace

TEST_SUITE("dataset loading") {
  TEST_CASE("valid records, blank lines, auto ids, meta fields") {
    TempDir tmp;
    const fs::path file = tmp.file("quest.jsonl",
                                   "{\"id\":\"a\",\"prompt\":\"First question\"}\n"
                                   "\n"
                                   "   \n"
                                   "{\"prompt\":\"Second question\",\"topic\":\"sea\",\"n\":3}\n");
    const auto records = harness::load_dataset(file);
    REQUIRE(records.size() == 2);
    CHECK(records[0].id == "a");
    CHECK(records[0].text == "First question");
    CHECK(records[0].source == "quest");
    CHECK(records[0].meta.empty());
    CHECK(records[1].id == "quest-4");
    CHECK(records[1].text == "Second question");
    REQUIRE(records[1].meta.count("topic") == 1);
    CHECK(records[1].meta.at("topic") == "sea");
    CHECK(records[1].meta.count("n") == 0);
  }

  TEST_CASE("malformed lines carry the line number") {
    TempDir tmp;
    CHECK_THROWS_WITH_AS(
        harness::load_dataset(tmp.file("d.jsonl", "{\"prompt\":\"ok\"}\nnot json\n")),
        doctest::Contains("line 2"), DataError);
    CHECK_THROWS_WITH_AS(
        harness::load_dataset(tmp.file("e.jsonl", "{\"prompt\":\"ok\"}\n{\"id\":\"x\"}\n")),
        doctest::Contains("line 2: missing prompt field"), DataError);
    CHECK_THROWS_WITH_AS(harness::load_dataset(tmp.file("f.jsonl", "{\"prompt\":42}\n")),
                         doctest::Contains("missing prompt field"), DataError);
    CHECK_THROWS_WITH_AS(harness::load_dataset(tmp.file("g.jsonl", "{\"prompt\":\"  \"}\n")),
                         doctest::Contains("blank prompt"), DataError);
    CHECK_THROWS_WITH_AS(
        harness::load_dataset(tmp.file(
            "h.jsonl", "{\"id\":\"x\",\"prompt\":\"one\"}\n{\"id\":\"x\",\"prompt\":\"two\"}\n")),
        doctest::Contains("duplicate id 'x'"), DataError);
    CHECK_THROWS_WITH_AS(harness::load_dataset(tmp.file("i.jsonl", "\n\n")),
                         doctest::Contains("dataset is empty"), DataError);
    CHECK_THROWS_AS(harness::load_dataset(tmp.path() / "absent.jsonl"), DataError);
  }

  TEST_CASE("refined prompt files map id to text") {
    TempDir tmp;
    const auto refined = harness::load_refined_prompts(
        tmp.file("r.jsonl",
                 "{\"id\":\"a\",\"refined_prompt\":\"Better question A\"}\n"
                 "{\"id\":\"b\",\"refined_prompt\":\"Better question B\"}\n"));
    REQUIRE(refined.size() == 2);
    CHECK(refined.at("a") == "Better question A");
    CHECK(refined.at("b") == "Better question B");

    CHECK_THROWS_WITH_AS(
        harness::load_refined_prompts(tmp.file("bad.jsonl", "{\"id\":\"a\"}\n")),
        doctest::Contains("missing refined_prompt field"), DataError);
    CHECK_THROWS_WITH_AS(
        harness::load_refined_prompts(tmp.file("blank.jsonl",
                                               "{\"id\":\"a\",\"refined_prompt\":\" \"}\n")),
        doctest::Contains("blank refined_prompt"), DataError);
    CHECK_THROWS_WITH_AS(
        harness::load_refined_prompts(tmp.file(
            "dup.jsonl",
            "{\"id\":\"a\",\"refined_prompt\":\"x\"}\n{\"id\":\"a\",\"refined_prompt\":\"y\"}\n")),
        doctest::Contains("duplicate id 'a'"), DataError);
  }

  TEST_CASE("dataset digest depends on content, not formatting") {
    TempDir tmp;
    const auto a = harness::load_dataset(
        tmp.file("a.jsonl", "{\"id\":\"p\",\"prompt\":\"What is dew\"}\n"));
    const auto b = harness::load_dataset(
        tmp.file("b.jsonl", "\n{ \"prompt\" : \"What is dew\" ,\"id\":\"p\" }\n\n"));
    const auto c = harness::load_dataset(
        tmp.file("c.jsonl", "{\"id\":\"p\",\"prompt\":\"What is rain\"}\n"));
    CHECK(harness::dataset_digest(a) == harness::dataset_digest(b));
    CHECK(harness::dataset_digest(a) != harness::dataset_digest(c));
    CHECK(harness::dataset_digest(a).size() == 16);
  }
}

TEST_SUITE("app config") {
  TEST_CASE("empty object yields documented defaults") {
    const auto cfg = harness::AppConfig::from_json_text("{}");
    CHECK(cfg.response.base_url.empty());
    CHECK(cfg.response.timeout_s == 30);
    CHECK(cfg.response.max_retries == 3);
    CHECK(cfg.response.max_in_flight == 4);
    CHECK_FALSE(cfg.derive.has_value());
    CHECK_FALSE(cfg.judge.has_value());
    CHECK(cfg.cache.dir == "cache");
    CHECK(cfg.cache.enabled);
    CHECK(cfg.sampling.temperature == doctest::Approx(1.0));
    CHECK(cfg.sampling.top_p == doctest::Approx(0.9));
    CHECK(cfg.sampling.max_tokens == 256);
    CHECK_FALSE(cfg.sampling.seed.has_value());
    CHECK(cfg.training.beta == doctest::Approx(0.05));
    CHECK(cfg.training.learning_rate == doctest::Approx(1e-2));
    CHECK(cfg.training.epochs == 2);
    CHECK(cfg.training.decay == train::Decay::Linear);
    CHECK(cfg.scorer.kind == reward::ScorerKind::Heuristic);
    CHECK(cfg.run.dir == "runs");
    CHECK(cfg.run.workers == 4);
    CHECK_FALSE(cfg.run.skip_on_error);
    CHECK(cfg.derive_endpoint().base_url == cfg.response.base_url);
  }

  TEST_CASE("nested values override defaults") {
    const auto cfg = harness::AppConfig::from_json_text(R"({
      "endpoints": {
        "response": {"base_url": "http://r", "model": "m1", "api_key_env": "KEY_A"},
        "derive": {"base_url": "http://d", "model": "m2", "timeout_s": 7}
      },
      "cache": {"dir": "cc", "enabled": false},
      "sampling": {"temperature": 0.5, "top_p": 0.8, "max_tokens": 64, "seed": 11},
      "templates": {"icl_template_file": "icl.txt"},
      "strategies_file": "strat.txt",
      "training": {"beta": 0.1, "learning_rate": 0.2, "steps": 9, "epochs": 3,
                   "seed": 4, "decay": "none"},
      "scorer": {"kind": "remote", "weights": {"length": 1.0},
                 "endpoint": {"base_url": "http://s", "model": "m3"}},
      "run": {"dir": "out", "workers": 2, "skip_on_error": true}
    })");
    CHECK(cfg.response.base_url == "http://r");
    CHECK(cfg.response.api_key_env == "KEY_A");
    REQUIRE(cfg.derive.has_value());
    CHECK(cfg.derive->timeout_s == 7);
    CHECK(cfg.derive_endpoint().base_url == "http://d");
    CHECK_FALSE(cfg.cache.enabled);
    CHECK(cfg.cache.dir == "cc");
    REQUIRE(cfg.sampling.seed.has_value());
    CHECK(*cfg.sampling.seed == 11);
    CHECK(cfg.templates.icl_template_file == "icl.txt");
    CHECK(cfg.strategies_file == "strat.txt");
    CHECK(cfg.training.steps == 9);
    CHECK(cfg.training.decay == train::Decay::None);
    CHECK(cfg.scorer.kind == reward::ScorerKind::Remote);
    CHECK(cfg.scorer.weights.length_w == doctest::Approx(1.0));
    CHECK(cfg.scorer.weights.keyword_w == doctest::Approx(0.5));
    REQUIRE(cfg.scorer.endpoint.has_value());
    CHECK(cfg.scorer.endpoint->base_url == "http://s");
    CHECK(cfg.run.workers == 2);
    CHECK(cfg.run.skip_on_error);
  }

  TEST_CASE("unknown keys and type mismatches name the dotted path") {
    CHECK_THROWS_WITH_AS(harness::AppConfig::from_json_text(R"({"respnse": {}})"),
                         doctest::Contains("config: unknown key 'respnse'"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::AppConfig::from_json_text(R"({"endpoints": {"response": {"baseurl": "x"}}})"),
        doctest::Contains("unknown key 'endpoints.response.baseurl'"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::AppConfig::from_json_text(R"({"run": {"workers": "four"}})"),
        doctest::Contains("config: bad value type for 'run.workers'"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::AppConfig::from_json_text(R"({"scorer": {"weights": {"speed": 1}}})"),
        doctest::Contains("unknown key 'scorer.weights.speed'"), ConfigError);
    CHECK_THROWS_WITH_AS(harness::AppConfig::from_json_text("[1,2]"),
                         doctest::Contains("config root must be a JSON object"), ConfigError);
    CHECK_THROWS_WITH_AS(harness::AppConfig::from_json_text("{nope"),
                         doctest::Contains("config is not valid JSON"), ConfigError);
  }

  TEST_CASE("semantic validation") {
    CHECK_THROWS_WITH_AS(harness::AppConfig::from_json_text(R"({"scorer": {"kind": "remote"}})"),
                         doctest::Contains("requires scorer.endpoint"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::AppConfig::from_json_text(R"({"training": {"decay": "cosine"}})"),
        doctest::Contains("training.decay must be 'linear' or 'none'"), ConfigError);
    CHECK_THROWS_WITH_AS(harness::AppConfig::from_json_text(R"({"run": {"workers": 0}})"),
                         doctest::Contains("run.workers must be >= 1"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::AppConfig::from_json_text(R"({"sampling": {"max_tokens": 0}})"),
        doctest::Contains("invalid sampling parameters"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::AppConfig::from_json_text(R"({"cache": {"dir": "", "enabled": true}})"),
        doctest::Contains("cache.dir must not be empty"), ConfigError);
  }

  TEST_CASE("load reads a file and rejects a missing one") {
    TempDir tmp;
    const auto cfg =
        harness::AppConfig::load(tmp.file("cfg.json", R"({"run": {"workers": 3}})"));
    CHECK(cfg.run.workers == 3);
    CHECK_THROWS_WITH_AS(harness::AppConfig::load(tmp.path() / "absent.json"),
                         doctest::Contains("cannot open config file"), ConfigError);
  }

  TEST_CASE("snapshot embeds env var names, never values") {
    auto cfg = harness::AppConfig::from_json_text(R"({
      "endpoints": {"response": {"base_url": "http://r", "api_key_env": "SOME_KEY_NAME"}}
    })");
    const std::string snap = cfg.snapshot_json();
    const auto j = nlohmann::json::parse(snap);
    CHECK(j.at("endpoints").at("response").at("api_key_env") == "SOME_KEY_NAME");
    CHECK(j.at("run").at("workers") == 4);
    CHECK(snap.find("SOME_KEY_NAME") != std::string::npos);

    ::setenv("SOME_KEY_NAME", "super-secret-747", 1);
    CHECK(cfg.snapshot_json().find("super-secret-747") == std::string::npos);
    ::unsetenv("SOME_KEY_NAME");
  }
}

TEST_SUITE("run manifest") {
  RunManifest sample_manifest() {
    RunManifest m;
    m.run_id = "20260101-000000-abcdef";
    m.created_utc = "2026-01-01T00:00:00Z";
    m.tool_version = kToolVersion;
    m.kind = "pipeline";
    m.dataset_name = "unit";
    m.dataset_digest = "0123456789abcdef";
    m.dataset_size = 2;
    m.sampling_note = "uniform-with-replacement";
    m.config_snapshot_json = R"({"b":1,"a":"x"})";

    ManifestItem full;
    full.id = "p-1";
    full.prompt = "What is a fjord";
    full.derived_prompt = "How are fjords formed";
    full.derived_response = "By glaciers.";
    full.responses = {{"OP", "A fjord is a sea inlet."}, {"OD", "By glaciers."}};
    full.rewards = {{"OP", 0.25}, {"OD", 0.5}};
    ManifestItem skipped;
    skipped.id = "p-2";
    skipped.prompt = "broken";
    skipped.skipped = true;
    skipped.error = "model returned an empty response";
    m.items = {full, skipped};

    m.reward_means = {{"OP", 0.25}, {"OD", 0.5}};
    m.judgments = {{"OD", "OP", {75.0, 25.0, 0.0, 4, 50.0}, 1, "verdicts.jsonl"}};
    m.skips = {"p-2"};
    m.artifacts = {"cache_refs.txt", "run.log"};
    m.usage = {123, 456};
    return m;
  }

  TEST_CASE("json round trip preserves every field") {
    const RunManifest m = sample_manifest();
    const std::string text = m.to_json();
    const RunManifest back = RunManifest::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.run_id == m.run_id);
    CHECK(back.created_utc == m.created_utc);
    CHECK(back.tool_version == kToolVersion);
    CHECK(back.kind == "pipeline");
    CHECK(back.dataset_name == "unit");
    CHECK(back.dataset_digest == m.dataset_digest);
    CHECK(back.dataset_size == 2);
    CHECK(back.sampling_note == m.sampling_note);
    REQUIRE(back.items.size() == 2);
    CHECK(back.items[0].derived_prompt == m.items[0].derived_prompt);
    CHECK(back.items[0].derived_response == m.items[0].derived_response);
    CHECK(back.items[0].responses == m.items[0].responses);
    CHECK(back.items[0].rewards == m.items[0].rewards);
    CHECK_FALSE(back.items[0].skipped);
    CHECK(back.items[1].skipped);
    CHECK(back.items[1].error == "model returned an empty response");
    CHECK_FALSE(back.items[1].derived_prompt.has_value());
    CHECK(back.reward_means == m.reward_means);
    REQUIRE(back.judgments.size() == 1);
    CHECK(back.judgments[0].arm_a == "OD");
    CHECK(back.judgments[0].arm_b == "OP");
    CHECK(back.judgments[0].summary.n == 4);
    CHECK(back.judgments[0].summary.win_rate == doctest::Approx(50.0));
    CHECK(back.judgments[0].n_unparsed == 1);
    CHECK(back.judgments[0].verdicts_file == "verdicts.jsonl");
    CHECK(back.skips == m.skips);
    CHECK(back.artifacts == m.artifacts);
    CHECK(back.usage.prompt_tokens == 123);
    CHECK(back.usage.completion_tokens == 456);
  }

  TEST_CASE("serialized shape: sorted keys, embedded snapshot object") {
    const RunManifest m = sample_manifest();
    const auto j = nlohmann::json::parse(m.to_json());
    CHECK(j.at("config_snapshot").is_object());
    CHECK(j.at("config_snapshot").at("a") == "x");
    CHECK(j.at("dataset").at("name") == "unit");
    CHECK(j.at("dataset").at("digest") == "0123456789abcdef");
    CHECK(j.at("dataset").at("size") == 2);
    CHECK(j.at("metrics").at("reward_means").at("OD") == doctest::Approx(0.5));
    CHECK(j.at("usage").at("prompt_tokens") == 123);
    CHECK(j.at("items").at(0).contains("derived_prompt"));
    CHECK_FALSE(j.at("items").at(0).contains("error"));
    CHECK(j.at("items").at(1).at("error") == "model returned an empty response");
    CHECK_FALSE(j.at("items").at(1).contains("derived_prompt"));
    const std::string text = m.to_json();
    CHECK(text.find("\"created_utc\"") < text.find("\"run_id\""));
    CHECK(text.back() == '\n');
  }

  TEST_CASE("two manifests differ only in run_id and created_utc bytes") {
    const RunManifest a = sample_manifest();
    RunManifest b = sample_manifest();
    b.run_id = "20260101-000001-fedcba";
    b.created_utc = "2026-01-01T00:00:01Z";
    CHECK(a.to_json() != b.to_json());
    CHECK(normalized(a) == normalized(b));
  }

  TEST_CASE("invalid snapshot text is rejected at serialization") {
    RunManifest m = sample_manifest();
    m.config_snapshot_json = "{broken";
    CHECK_THROWS_WITH_AS(m.to_json(),
                         doctest::Contains("manifest: config snapshot is not valid JSON"),
                         DataError);
  }

  TEST_CASE("write is atomic and read round-trips") {
    TempDir tmp;
    const RunManifest m = sample_manifest();
    m.write(tmp.path());
    CHECK(fs::exists(tmp.path() / "manifest.json"));
    CHECK_FALSE(fs::exists(tmp.path() / "manifest.json.tmp"));
    const RunManifest back = RunManifest::read(tmp.path() / "manifest.json");
    CHECK(back.to_json() == m.to_json());
    CHECK_THROWS_AS(RunManifest::read(tmp.path() / "absent.json"), DataError);
    CHECK_THROWS_AS(RunManifest::from_json("не json"), DataError);
  }

  TEST_CASE("run ids are timestamped, suffixed, and unique") {
    const std::string a = harness::make_run_id("salt-a");
    const std::string b = harness::make_run_id("salt-a");
    REQUIRE(a.size() == 22);
    CHECK(a[8] == '-');
    CHECK(a[15] == '-');
    for (int i : {0, 1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14}) {
      CHECK(std::isdigit(static_cast<unsigned char>(a[i])) != 0);
    }
    for (int i = 16; i < 22; ++i) {
      CHECK(std::isxdigit(static_cast<unsigned char>(a[i])) != 0);
    }
    CHECK(a != b);

    const std::string ts = harness::utc_now_iso8601();
    REQUIRE(ts.size() == 20);
    CHECK(ts[4] == '-');
    CHECK(ts[10] == 'T');
    CHECK(ts[19] == 'Z');
  }

  TEST_CASE("in-progress marker protocol") {
    TempDir tmp;
    CHECK_FALSE(harness::marker_present(tmp.path()));
    harness::touch_marker(tmp.path());
    CHECK(harness::marker_present(tmp.path()));
    harness::remove_marker(tmp.path());
    CHECK_FALSE(harness::marker_present(tmp.path()));
  }
}

TEST_SUITE("mock rule files") {
  TEST_CASE("rule files round trip") {
    TempDir tmp;
    const fs::path file = tmp.file("rules.json", R"([
      {"match": "contains", "pattern": "abc", "reply": "fixed", "text": "hi"},
      {"match": "prefix", "pattern": "p:", "reply": "prefer_containing", "text": "tok"},
      {"match": "any", "reply": "fixed_score", "score": 0.5},
      {"match": "any", "reply": "echo"}
    ])");
    const auto rules = harness::load_mock_rules(file);
    REQUIRE(rules.size() == 4);
    CHECK(rules[0].match == MockRule::Match::Contains);
    CHECK(rules[0].pattern == "abc");
    CHECK(rules[0].reply == MockRule::Reply::Fixed);
    CHECK(rules[0].text == "hi");
    CHECK(rules[1].match == MockRule::Match::Prefix);
    CHECK(rules[1].reply == MockRule::Reply::PreferContaining);
    CHECK(rules[2].reply == MockRule::Reply::FixedScore);
    CHECK(rules[2].score == doctest::Approx(0.5));
    CHECK(rules[3].reply == MockRule::Reply::Echo);
  }

  TEST_CASE("validation rejects malformed rule lists") {
    CHECK_THROWS_WITH_AS(harness::validate_rules({}),
                         doctest::Contains("rule list must not be empty"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::validate_rules({{MockRule::Match::Contains, "x", MockRule::Reply::Echo, "", 0.0}}),
        doctest::Contains("last rule must have match kind 'any'"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::validate_rules({{MockRule::Match::Contains, "", MockRule::Reply::Echo, "", 0.0},
                                 {MockRule::Match::Any, "", MockRule::Reply::Echo, "", 0.0}}),
        doctest::Contains("need a nonempty pattern"), ConfigError);

    TempDir tmp;
    CHECK_THROWS_WITH_AS(
        harness::load_mock_rules(tmp.file("m.json", R"([{"match": "fuzzy", "reply": "echo"}])")),
        doctest::Contains("unknown match kind 'fuzzy'"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::load_mock_rules(tmp.file("r.json", R"([{"match": "any", "reply": "shout"}])")),
        doctest::Contains("unknown reply kind 'shout'"), ConfigError);
    CHECK_THROWS_WITH_AS(harness::load_mock_rules(tmp.file("o.json", R"({"match": "any"})")),
                         doctest::Contains("must hold a JSON array"), ConfigError);
  }

  TEST_CASE("a taken port is an error") {
    MockServer a({{MockRule::Match::Any, "", MockRule::Reply::Echo, "", 0.0}});
    const int port = a.start();
    MockServer b({{MockRule::Match::Any, "", MockRule::Reply::Echo, "", 0.0}});
    CHECK_THROWS_WITH_AS(b.start(port), doctest::Contains("is unavailable"), Error);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("arm tokens round trip") {
    for (Arm a : {Arm::OP, Arm::OD, Arm::BPO, Arm::OD_ICL, Arm::BPO_ICL}) {
      CHECK(harness::arm_from_token(harness::arm_token(a)) == a);
    }
    CHECK(harness::arm_token(Arm::BPO) == "BPO-file");
    CHECK(harness::arm_token(Arm::OD_ICL) == "OD+ICL");
    const auto arms = harness::parse_arm_list("OP,OD+ICL,OP");
    REQUIRE(arms.size() == 3);
    CHECK(arms[0] == Arm::OP);
    CHECK(arms[1] == Arm::OD_ICL);
    CHECK_THROWS_WITH_AS(harness::arm_from_token("op"),
                         doctest::Contains("unknown arm token 'op'"), ConfigError);
    CHECK_THROWS_WITH_AS(harness::parse_arm_list(""), doctest::Contains("empty arm list"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(harness::parse_arm_list(",,"), doctest::Contains("empty arm list"),
                         ConfigError);
  }

  TEST_CASE("shared derivation keeps {OP, OD, OD+ICL} within four calls per prompt") {
    MockServer server(derive_then_echo_rules());
    server.start();
    TempDir cache_dir;
    TempDir runs;
    auto cache = std::make_shared<client::ResponseCache>(cache_dir.path());
    harness::PipelineContext ctx;
    ctx.respond_client = make_client(server.base_url(), cache);
    ctx.derive_client = ctx.respond_client;
    ctx.scorer = std::make_shared<reward::Scorer>(reward::ScorerConfig{});

    harness::PipelineOptions opts;
    opts.arms = {Arm::OD_ICL, Arm::OP, Arm::OD};
    opts.workers = 1;
    opts.run_root = runs.path();
    opts.dataset_name = "unit";

    const auto dataset = three_prompts();
    const RunManifest m = harness::run_pipeline(dataset, ctx, opts);

    CHECK(m.kind == "pipeline");
    CHECK(m.tool_version == kToolVersion);
    CHECK(m.dataset_name == "unit");
    CHECK(m.dataset_digest == harness::dataset_digest(dataset));
    CHECK(m.dataset_size == 3);
    CHECK(m.sampling_note == "uniform-with-replacement");
    CHECK(m.skips.empty());
    REQUIRE(m.items.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      const ManifestItem& item = m.items[i];
      CHECK(item.id == dataset[i].id);
      REQUIRE(item.derived_prompt.has_value());
      CHECK(*item.derived_prompt == kDerivedFixed);
      REQUIRE(item.derived_response.has_value());
      CHECK(*item.derived_response == kDerivedFixed);
      CHECK(item.responses.at("OP") == dataset[i].text);
      CHECK(item.responses.at("OD") == kDerivedFixed);
      const std::string& icl = item.responses.at("OD+ICL");
      CHECK(icl.find(kDerivedFixed) != std::string::npos);
      CHECK(icl.find(dataset[i].text) != std::string::npos);
      CHECK(icl.find(gen::icl_bridge_sentence()) != std::string::npos);
      CHECK(item.rewards.size() == 3);
    }

    CHECK(m.items[0].rewards.at("OP") ==
          reward::heuristic_score({}, dataset[0].text, dataset[0].text));
    REQUIRE(m.reward_means.size() == 3);
    double sum = 0.0;
    for (const ManifestItem& item : m.items) sum += item.rewards.at("OD");
    CHECK(m.reward_means.at("OD") == doctest::Approx(sum / 3.0));

    CHECK(count_requests_containing(server, "### Instruction:") == 3);
    CHECK(count_requests_containing(server, gen::icl_bridge_sentence()) == 3);
    CHECK(server.request_count() == 10);  // 3 derive + 3 OP + 1 OD (then cached) + 3 ICL
    CHECK(server.request_count() <= 4 * 3);
    CHECK(m.usage.prompt_tokens > 0);
    CHECK(m.usage.completion_tokens > 0);

    const fs::path run_dir = runs.path() / m.run_id;
    CHECK(fs::exists(run_dir / "manifest.json"));
    CHECK_FALSE(harness::marker_present(run_dir));
    CHECK(m.artifacts == std::vector<std::string>{"cache_refs.txt", "run.log"});
    CHECK(RunManifest::read(run_dir / "manifest.json").to_json() == m.to_json());

    const std::string log_text = slurp(run_dir / "run.log");
    CHECK(log_text.find("arms: OP OD OD+ICL") != std::string::npos);
    CHECK(log_text.find("item q-2 done") != std::string::npos);

    std::vector<std::string> keys;
    std::ifstream refs(run_dir / "cache_refs.txt");
    for (std::string line; std::getline(refs, line);) keys.push_back(line);
    CHECK(keys.size() == 10);
    CHECK(std::is_sorted(keys.begin(), keys.end()));
    CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == keys.size());
    for (const std::string& key : keys) {
      CHECK(key.size() == 16);
      CHECK(fs::exists(cache->path_for(key)));
    }

    SUBCASE("a cached re-run replays byte-identically modulo run id and timestamp") {
      const RunManifest again = harness::run_pipeline(dataset, ctx, opts);
      CHECK(server.request_count() == 10);
      CHECK(again.run_id != m.run_id);
      CHECK(normalized(again) == normalized(m));
    }
  }

  TEST_CASE("skip_on_error records failures in dataset order") {
    MockServer server({
        {MockRule::Match::Contains, "poison", MockRule::Reply::Fixed, "", 0.0},
        {MockRule::Match::Any, "", MockRule::Reply::Echo, "", 0.0},
    });
    server.start();
    TempDir runs;
    harness::PipelineContext ctx;
    ctx.respond_client = make_client(server.base_url());
    ctx.derive_client = ctx.respond_client;

    harness::PipelineOptions opts;
    opts.arms = {Arm::OP};
    opts.workers = 2;
    opts.skip_on_error = true;
    opts.run_root = runs.path();
    opts.dataset_name = "unit";

    const std::vector<PromptRecord> dataset = {
        {"p-1", "poison alpha problem", "unit", {}},
        {"p-2", "clean middle question", "unit", {}},
        {"p-3", "poison omega problem", "unit", {}},
    };
    const RunManifest m = harness::run_pipeline(dataset, ctx, opts);

    CHECK(m.skips == std::vector<std::string>{"p-1", "p-3"});
    REQUIRE(m.items.size() == 3);
    CHECK(m.items[0].skipped);
    CHECK(m.items[0].error.find("empty response") != std::string::npos);
    CHECK(m.items[0].responses.empty());
    CHECK_FALSE(m.items[1].skipped);
    CHECK(m.items[1].responses.at("OP") == "clean middle question");
    CHECK(m.items[2].skipped);
    const std::string log_text = slurp(runs.path() / m.run_id / "run.log");
    CHECK(log_text.find("item p-1 skipped:") != std::string::npos);
  }

  TEST_CASE("without skip_on_error the first failure aborts with the prompt id") {
    MockServer server({
        {MockRule::Match::Contains, "poison", MockRule::Reply::Fixed, "", 0.0},
        {MockRule::Match::Any, "", MockRule::Reply::Echo, "", 0.0},
    });
    server.start();
    TempDir runs;
    harness::PipelineContext ctx;
    ctx.respond_client = make_client(server.base_url());
    ctx.derive_client = ctx.respond_client;

    harness::PipelineOptions opts;
    opts.arms = {Arm::OP};
    opts.workers = 1;
    opts.run_root = runs.path();

    const std::vector<PromptRecord> dataset = {{"p-1", "poison alpha", "unit", {}},
                                               {"p-2", "clean", "unit", {}}};
    CHECK_THROWS_WITH_AS(harness::run_pipeline(dataset, ctx, opts),
                         doctest::Contains("pipeline: prompt 'p-1'"), Error);

    // The run dir is left with its marker and without a manifest.
    const fs::path run_dir = only_subdir(runs.path());
    CHECK(harness::marker_present(run_dir));
    CHECK_FALSE(fs::exists(run_dir / "manifest.json"));
    CHECK(slurp(run_dir / "run.log").find("run aborted") != std::string::npos);
  }

  TEST_CASE("refined-prompt arms answer the external rewrite") {
    MockServer server({{MockRule::Match::Any, "", MockRule::Reply::Echo, "", 0.0}});
    server.start();
    TempDir runs;
    harness::PipelineContext ctx;
    ctx.respond_client = make_client(server.base_url());
    ctx.derive_client = ctx.respond_client;
    ctx.refined_prompts = {{"r-1", "What refined query one?"},
                           {"r-2", "What refined query two?"}};

    harness::PipelineOptions opts;
    opts.arms = {Arm::BPO, Arm::BPO_ICL};
    opts.workers = 1;
    opts.seed = 42;
    opts.run_root = runs.path();

    const std::vector<PromptRecord> dataset = {{"r-1", "original one", "unit", {}},
                                               {"r-2", "original two", "unit", {}}};
    const RunManifest m = harness::run_pipeline(dataset, ctx, opts);
    REQUIRE(server.request_count() > 0);
    CHECK(server.requests()[0].body.find("\"seed\":42") != std::string::npos);

    REQUIRE(m.items.size() == 2);
    CHECK(m.items[0].responses.at("BPO-file") == "What refined query one?");
    const std::string& icl = m.items[0].responses.at("BPO-file+ICL");
    CHECK(icl.find("What refined query one?") != std::string::npos);
    CHECK(icl.find("original one") != std::string::npos);
    CHECK_FALSE(m.items[0].derived_prompt.has_value());
    CHECK_FALSE(m.items[0].derived_response.has_value());
    CHECK(server.request_count() == 4);
  }

  TEST_CASE("missing refined ids fail before any network call") {
    MockServer server({{MockRule::Match::Any, "", MockRule::Reply::Echo, "", 0.0}});
    server.start();
    TempDir tmp;
    harness::PipelineContext ctx;
    ctx.respond_client = make_client(server.base_url());
    ctx.derive_client = ctx.respond_client;
    ctx.refined_prompts = {{"r-1", "Refined one"}};

    harness::PipelineOptions opts;
    opts.arms = {Arm::BPO};
    opts.workers = 1;
    opts.run_root = tmp.path() / "runs";

    const std::vector<PromptRecord> dataset = {{"r-1", "one", "unit", {}},
                                               {"r-2", "two", "unit", {}}};
    CHECK_THROWS_WITH_AS(harness::run_pipeline(dataset, ctx, opts),
                         doctest::Contains("refined prompt file is missing id 'r-2'"), DataError);
    CHECK(server.request_count() == 0);
    CHECK_FALSE(fs::exists(tmp.path() / "runs"));
  }

  TEST_CASE("input validation") {
    harness::PipelineContext ctx;
    harness::PipelineOptions opts;
    opts.arms = {Arm::OP};
    CHECK_THROWS_WITH_AS(harness::run_pipeline({}, ctx, opts),
                         doctest::Contains("empty dataset"), ConfigError);
    const std::vector<PromptRecord> one = {{"a", "text", "unit", {}}};
    CHECK_THROWS_WITH_AS(harness::run_pipeline(one, ctx, opts),
                         doctest::Contains("respond client required"), ConfigError);
    opts.workers = 0;
    CHECK_THROWS_WITH_AS(harness::run_pipeline(one, ctx, opts),
                         doctest::Contains("workers must be >= 1"), ConfigError);
    opts.workers = 1;
    opts.arms = {};
    ctx.respond_client = make_client("http://127.0.0.1:1");
    ctx.derive_client = ctx.respond_client;
    CHECK_THROWS_WITH_AS(harness::run_pipeline(one, ctx, opts),
                         doctest::Contains("no arms requested"), ConfigError);
  }

  TEST_CASE("no secret byte ever reaches disk") {
    MockServer server(derive_then_echo_rules());
    server.start();
    TempDir tmp;
    const std::string secret = "squeamish-ossifrage-9917";
    ::setenv("DPG_HARNESS_KEY", secret.c_str(), 1);

    const auto cfg = harness::AppConfig::from_json_text(
        R"({"endpoints": {"response": {"base_url": ")" + server.base_url() +
        R"(", "model": "mock-model", "api_key_env": "DPG_HARNESS_KEY"}}})");
    auto cache = std::make_shared<client::ResponseCache>(tmp.path() / "cache");
    harness::PipelineContext ctx;
    ctx.respond_client = std::make_shared<client::Client>(cfg.response, cache);
    ctx.respond_client->set_retry_policy(kFastRetry);
    ctx.derive_client = ctx.respond_client;

    harness::PipelineOptions opts;
    opts.arms = {Arm::OP, Arm::OD};
    opts.workers = 1;
    opts.run_root = tmp.path() / "runs";
    opts.dataset_name = "unit";
    opts.config_snapshot_json = cfg.snapshot_json();

    const std::vector<PromptRecord> dataset = {{"s-1", "What keeps bridges standing", "unit", {}}};
    const RunManifest m = harness::run_pipeline(dataset, ctx, opts);
    ::unsetenv("DPG_HARNESS_KEY");

    REQUIRE(server.request_count() > 0);
    CHECK(server.requests()[0].authorization == "Bearer " + secret);

    CHECK_FALSE(tree_contains(tmp.path(), secret));
    const std::string manifest_text = slurp(tmp.path() / "runs" / m.run_id / "manifest.json");
    CHECK(manifest_text.find("DPG_HARNESS_KEY") != std::string::npos);
  }
}

TEST_SUITE("judge and reward evals") {
  RunManifest source_with_two_arms() {
    RunManifest source;
    source.kind = "pipeline";
    source.dataset_name = "unit";
    source.dataset_digest = "feedfacefeedface";
    source.dataset_size = 3;
    ManifestItem a;
    a.id = "s-1";
    a.prompt = "What holds up a suspension bridge";
    a.responses = {{"OP", "cables"}, {"OD", "a much longer response about cables and towers"}};
    ManifestItem skipped;
    skipped.id = "s-2";
    skipped.prompt = "broken";
    skipped.skipped = true;
    skipped.error = "model returned an empty response";
    ManifestItem b;
    b.id = "s-3";
    b.prompt = "Why is the sky blue at noon";
    b.responses = {{"OP", "optics"}, {"OD", "a fuller answer about scattering of light"}};
    source.items = {a, skipped, b};
    return source;
  }

  TEST_CASE("judge eval writes a judge manifest plus verdicts") {
    MockServer server({{MockRule::Match::Any, "", MockRule::Reply::PreferLonger, "", 0.0}});
    server.start();
    TempDir runs;
    auto judge_client = make_client(server.base_url());

    const RunManifest source = source_with_two_arms();
    const RunManifest m = harness::run_judge_eval(source, "OD", "OP", *judge_client, 5, 2,
                                                  runs.path(), "{}");

    CHECK(m.kind == "judge");
    CHECK(m.dataset_name == "unit");
    CHECK(m.dataset_digest == source.dataset_digest);
    CHECK(m.dataset_size == 2);  // the skipped source item is excluded
    REQUIRE(m.judgments.size() == 1);
    const harness::JudgmentRecord& rec = m.judgments[0];
    CHECK(rec.arm_a == "OD");
    CHECK(rec.arm_b == "OP");
    CHECK(rec.summary.a_win == doctest::Approx(100.0));
    CHECK(rec.summary.b_win == doctest::Approx(0.0));
    CHECK(rec.summary.win_rate == doctest::Approx(100.0));
    CHECK(rec.summary.n == 2);
    CHECK(rec.n_unparsed == 0);
    CHECK(rec.verdicts_file == "verdicts.jsonl");
    CHECK(m.artifacts == std::vector<std::string>{"verdicts.jsonl"});

    const fs::path run_dir = runs.path() / m.run_id;
    CHECK_FALSE(harness::marker_present(run_dir));
    const auto verdicts = judge::load_verdicts((run_dir / "verdicts.jsonl").string());
    REQUIRE(verdicts.size() == 2);
    for (const Verdict& v : verdicts) CHECK(v.outcome == JudgeOutcome::A);
    CHECK(RunManifest::read(run_dir / "manifest.json").judgments.size() == 1);
  }

  TEST_CASE("judge eval validates its arms") {
    MockServer server({{MockRule::Match::Any, "", MockRule::Reply::PreferLonger, "", 0.0}});
    server.start();
    TempDir runs;
    auto judge_client = make_client(server.base_url());
    const RunManifest source = source_with_two_arms();

    CHECK_THROWS_WITH_AS(
        harness::run_judge_eval(source, "OD", "OD", *judge_client, 1, 1, runs.path(), "{}"),
        doctest::Contains("arms must differ"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::run_judge_eval(source, "OD", "banana", *judge_client, 1, 1, runs.path(), "{}"),
        doctest::Contains("unknown arm token 'banana'"), ConfigError);
    CHECK_THROWS_WITH_AS(
        harness::run_judge_eval(source, "BPO-file", "OP", *judge_client, 1, 1, runs.path(), "{}"),
        doctest::Contains("item 's-1' has no arm 'BPO-file'"), DataError);
    CHECK(server.request_count() == 0);

    RunManifest all_skipped = source;
    for (ManifestItem& item : all_skipped.items) item.skipped = true;
    CHECK_THROWS_WITH_AS(
        harness::run_judge_eval(all_skipped, "OD", "OP", *judge_client, 1, 1, runs.path(), "{}"),
        doctest::Contains("no judgeable items"), DataError);
  }

  TEST_CASE("reward eval rescores manifest responses") {
    TempDir runs;
    reward::Scorer scorer{reward::ScorerConfig{}};
    const RunManifest source = source_with_two_arms();

    const RunManifest all = harness::run_reward_eval(source, scorer, {}, runs.path(), "{}");
    CHECK(all.kind == "reward");
    CHECK(all.dataset_size == source.dataset_size);
    REQUIRE(all.items.size() == 2);  // skipped source item dropped
    CHECK(all.items[0].rewards.size() == 2);
    CHECK(all.items[0].rewards.at("OD") ==
          reward::heuristic_score({}, source.items[0].prompt,
                                  source.items[0].responses.at("OD")));
    REQUIRE(all.reward_means.size() == 2);
    const double od_mean = (all.items[0].rewards.at("OD") + all.items[1].rewards.at("OD")) / 2.0;
    CHECK(all.reward_means.at("OD") == doctest::Approx(od_mean));
    CHECK_FALSE(harness::marker_present(runs.path() / all.run_id));
    CHECK(RunManifest::read(runs.path() / all.run_id / "manifest.json").kind == "reward");

    const RunManifest op_only =
        harness::run_reward_eval(source, scorer, {"OP"}, runs.path(), "{}");
    CHECK(op_only.reward_means.size() == 1);
    CHECK(op_only.reward_means.count("OP") == 1);
    for (const ManifestItem& item : op_only.items) {
      CHECK(item.rewards.size() == 1);
      CHECK(item.responses.count("OD") == 0);
    }

    RunManifest empty = source;
    for (ManifestItem& item : empty.items) item.responses.clear();
    CHECK_THROWS_WITH_AS(harness::run_reward_eval(empty, scorer, {}, runs.path(), "{}"),
                         doctest::Contains("manifest has no responses"), DataError);
  }
}

TEST_SUITE("report rendering") {
  RunManifest judged_manifest() {
    RunManifest m;
    m.run_id = "20260101-000000-aaaaaa";
    m.created_utc = "2026-01-01T00:00:00Z";
    m.tool_version = kToolVersion;
    m.kind = "judge";
    m.dataset_name = "unit";
    m.dataset_digest = "0123456789abcdef";
    m.dataset_size = 80;
    m.judgments = {{"OD+ICL", "OP", {90.0, 3.8, 6.2, 80, 86.2}, 0, "verdicts.jsonl"}};
    return m;
  }

  RunManifest rewarded_manifest() {
    RunManifest m;
    m.run_id = "20260101-000001-bbbbbb";
    m.created_utc = "2026-01-01T00:00:01Z";
    m.tool_version = kToolVersion;
    m.kind = "pipeline";
    m.dataset_name = "unit";
    m.dataset_digest = "0123456789abcdef";
    m.dataset_size = 2;
    ManifestItem p1;
    p1.id = "p-1";
    p1.prompt = "one";
    p1.responses = {{"OP", "r"}, {"OD", "r"}, {"OD+ICL", "r"}};
    p1.rewards = {{"OP", 0.50}, {"OD", 0.76}, {"OD+ICL", 0.75}};
    ManifestItem p2;
    p2.id = "p-2";
    p2.prompt = "two";
    p2.responses = {{"OP", "r"}, {"OD", "r"}, {"OD+ICL", "r"}};
    p2.rewards = {{"OP", 0.50}, {"OD", 0.76}, {"OD+ICL", 0.75}};
    m.items = {p1, p2};
    m.reward_means = {{"OP", 0.50}, {"OD", 0.76}, {"OD+ICL", 0.75}};
    return m;
  }

  TEST_CASE("judgment rows show the tally and win rate") {
    const std::string text = harness::render_report({judged_manifest()});
    CHECK(text.find("== run 20260101-000000-aaaaaa | kind judge | dataset unit (n=80) ==") !=
          std::string::npos);
    CHECK(text.find("OD+ICL vs OP   90.0 & 3.8 & 6.2   win rate 86.2") != std::string::npos);
    CHECK(text.find("n=80 unparsed=0") != std::string::npos);
  }

  TEST_CASE("reward tables pick the strongest reference arm and format deltas") {
    const std::string text = harness::render_report({rewarded_manifest()});
    CHECK(text.find("arm            mean    vs OD+ICL") != std::string::npos);
    CHECK(text.find("↑ 0.25") != std::string::npos);   // reference leads OP by 0.25
    CHECK(text.find("↓ -0.01") != std::string::npos);  // reference trails OD by 0.01
    CHECK(text.find("OD+ICL         0.75") != std::string::npos);
  }

  TEST_CASE("cross-manifest comparison recomputes over common prompts") {
    RunManifest a = rewarded_manifest();
    RunManifest b = rewarded_manifest();
    b.run_id = "20260101-000002-cccccc";
    b.items[0].id = "p-2";  // overlap: only p-2 (plus duplicate handling below)
    b.items[1].id = "p-9";
    b.items[0].rewards = {{"OP", 1.0}};
    b.items[0].responses = {{"OP", "r"}};
    b.items[1].rewards = {{"OP", 0.2}};
    b.items[1].responses = {{"OP", "r"}};
    const std::string text = harness::render_report({a, b});
    CHECK(text.find("== reward comparison over 1 common prompts ==") != std::string::npos);

    RunManifest c = rewarded_manifest();
    c.items[0].id = "z-1";
    c.items[1].id = "z-2";
    CHECK_THROWS_WITH_AS(harness::render_report({a, c}),
                         doctest::Contains("share no scored prompt ids"), DataError);
  }

  TEST_CASE("structured report parses as JSON") {
    const std::string text = harness::report_json({judged_manifest(), rewarded_manifest()});
    const auto j = nlohmann::json::parse(text);
    CHECK(j.at("runs").size() == 2);
    CHECK_THROWS_AS(harness::render_report({}), ConfigError);
  }
}
