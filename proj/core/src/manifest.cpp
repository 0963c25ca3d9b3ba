#include "dpg/manifest.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dpg/errors.hpp"
#include "dpg/hashing.hpp"
#include "dpg/version.hpp"

namespace dpg::harness {

namespace {

using nlohmann::json;

constexpr const char* kMarkerName = "IN_PROGRESS";

json item_to_json(const ManifestItem& item) {
  json j;
  j["id"] = item.id;
  j["prompt"] = item.prompt;
  if (item.derived_prompt) j["derived_prompt"] = *item.derived_prompt;
  if (item.derived_response) j["derived_response"] = *item.derived_response;
  j["responses"] = item.responses;
  j["rewards"] = item.rewards;
  j["skipped"] = item.skipped;
  if (item.skipped) j["error"] = item.error;
  return j;
}

ManifestItem item_from_json(const json& j) {
  ManifestItem item;
  item.id = j.at("id").get<std::string>();
  item.prompt = j.at("prompt").get<std::string>();
  if (j.contains("derived_prompt")) item.derived_prompt = j.at("derived_prompt").get<std::string>();
  if (j.contains("derived_response")) {
    item.derived_response = j.at("derived_response").get<std::string>();
  }
  if (j.contains("responses")) {
    item.responses = j.at("responses").get<std::map<std::string, std::string>>();
  }
  if (j.contains("rewards")) {
    item.rewards = j.at("rewards").get<std::map<std::string, double>>();
  }
  item.skipped = j.value("skipped", false);
  item.error = j.value("error", "");
  return item;
}

json summary_to_json(const WinRateSummary& s) {
  return {{"a_win", s.a_win}, {"b_win", s.b_win},       {"tie", s.tie},
          {"n", s.n},         {"win_rate", s.win_rate}};
}

WinRateSummary summary_from_json(const json& j) {
  WinRateSummary s;
  s.a_win = j.at("a_win").get<double>();
  s.b_win = j.at("b_win").get<double>();
  s.tie = j.at("tie").get<double>();
  s.n = j.at("n").get<int>();
  s.win_rate = j.at("win_rate").get<double>();
  return s;
}

}  // namespace

std::string utc_now_iso8601() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string make_run_id(const std::string& salt) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm_utc);

  static std::atomic<std::uint64_t> counter{0};
  std::random_device rd;
  std::ostringstream nonce;
  nonce << salt << '|' << rd() << '|' << rd() << '|' << counter.fetch_add(1);
  return std::string(buf) + "-" + short_digest(nonce.str()).substr(0, 6);
}

std::string RunManifest::to_json() const {
  json j;
  j["run_id"] = run_id;
  j["created_utc"] = created_utc;
  j["tool_version"] = tool_version.empty() ? kToolVersion : tool_version;
  j["kind"] = kind;
  j["dataset"] = {{"name", dataset_name}, {"digest", dataset_digest}, {"size", dataset_size}};
  j["sampling_note"] = sampling_note;
  try {
    j["config_snapshot"] =
        config_snapshot_json.empty() ? json::object() : json::parse(config_snapshot_json);
  } catch (const json::exception&) {
    throw DataError("manifest: config snapshot is not valid JSON");
  }
  auto items_j = json::array();
  for (const ManifestItem& item : items) items_j.push_back(item_to_json(item));
  j["items"] = items_j;
  j["metrics"] = {{"reward_means", reward_means}};
  auto judgments_j = json::array();
  for (const JudgmentRecord& rec : judgments) {
    judgments_j.push_back({{"arm_a", rec.arm_a},
                           {"arm_b", rec.arm_b},
                           {"summary", summary_to_json(rec.summary)},
                           {"n_unparsed", rec.n_unparsed},
                           {"verdicts_file", rec.verdicts_file}});
  }
  j["judgments"] = judgments_j;
  j["skips"] = skips;
  j["artifacts"] = artifacts;
  j["usage"] = {{"prompt_tokens", usage.prompt_tokens},
                {"completion_tokens", usage.completion_tokens}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.created_utc = j.at("created_utc").get<std::string>();
    m.tool_version = j.value("tool_version", "");
    m.kind = j.at("kind").get<std::string>();
    const json& d = j.at("dataset");
    m.dataset_name = d.at("name").get<std::string>();
    m.dataset_digest = d.at("digest").get<std::string>();
    m.dataset_size = d.at("size").get<int>();
    m.sampling_note = j.value("sampling_note", "");
    m.config_snapshot_json = j.value("config_snapshot", json::object()).dump();
    for (const json& item : j.value("items", json::array())) {
      m.items.push_back(item_from_json(item));
    }
    if (j.contains("metrics")) {
      m.reward_means =
          j.at("metrics").value("reward_means", std::map<std::string, double>{});
    }
    for (const json& rec : j.value("judgments", json::array())) {
      JudgmentRecord r;
      r.arm_a = rec.at("arm_a").get<std::string>();
      r.arm_b = rec.at("arm_b").get<std::string>();
      r.summary = summary_from_json(rec.at("summary"));
      r.n_unparsed = rec.value("n_unparsed", 0);
      r.verdicts_file = rec.value("verdicts_file", "");
      m.judgments.push_back(std::move(r));
    }
    m.skips = j.value("skips", std::vector<std::string>{});
    m.artifacts = j.value("artifacts", std::vector<std::string>{});
    if (j.contains("usage")) {
      m.usage.prompt_tokens = j.at("usage").value("prompt_tokens", std::int64_t{0});
      m.usage.completion_tokens = j.at("usage").value("completion_tokens", std::int64_t{0});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest field error: ") + e.what());
  }
  return m;
}

void RunManifest::write(const std::filesystem::path& run_dir) const {
  std::filesystem::create_directories(run_dir);
  const std::filesystem::path target = run_dir / "manifest.json";
  const std::filesystem::path tmp = run_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write manifest: " + tmp.string());
    out << to_json();
    if (!out.flush()) throw Error("failed writing manifest: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

RunManifest RunManifest::read(const std::filesystem::path& manifest_file) {
  std::ifstream in(manifest_file, std::ios::binary);
  if (!in) throw DataError("cannot open manifest: " + manifest_file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void touch_marker(const std::filesystem::path& run_dir) {
  std::filesystem::create_directories(run_dir);
  std::ofstream out(run_dir / kMarkerName, std::ios::binary);
  if (!out) throw Error("cannot create in-progress marker in " + run_dir.string());
  out << "run in progress\n";
}

void remove_marker(const std::filesystem::path& run_dir) {
  std::error_code ec;
  std::filesystem::remove(run_dir / kMarkerName, ec);
}

bool marker_present(const std::filesystem::path& run_dir) {
  return std::filesystem::exists(run_dir / kMarkerName);
}

}  // namespace dpg::harness
