#include "dpg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "dpg/dataset.hpp"
#include "dpg/errors.hpp"
#include "dpg/judge.hpp"
#include "dpg/version.hpp"

namespace dpg::harness {

namespace {

constexpr Arm kCanonicalOrder[] = {Arm::OP, Arm::OD, Arm::BPO, Arm::OD_ICL, Arm::BPO_ICL};

std::vector<Arm> canonicalize_arms(const std::vector<Arm>& arms) {
  if (arms.empty()) throw ConfigError("pipeline: no arms requested");
  std::set<Arm> requested(arms.begin(), arms.end());
  std::vector<Arm> out;
  for (Arm a : kCanonicalOrder) {
    if (requested.count(a) != 0) out.push_back(a);
  }
  return out;
}

bool wants(const std::vector<Arm>& arms, Arm a) {
  return std::find(arms.begin(), arms.end(), a) != arms.end();
}

/// Append-only run log; timestamps live here, never in the manifest items.
class RunLog {
 public:
  explicit RunLog(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open run log: " + path.string());
  }

  void line(const std::string& text) {
    std::lock_guard<std::mutex> lk(mu_);
    out_ << utc_now_iso8601() << " " << text << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

ManifestItem process_prompt(const PromptRecord& x, PipelineContext& ctx,
                            const std::vector<Arm>& arms) {
  ManifestItem item;
  item.id = x.id;
  item.prompt = x.text;

  std::optional<DerivedPrompt> derived;
  std::optional<std::string> derived_response;
  std::optional<std::string> refined;
  std::optional<std::string> refined_response;

  auto ensure_derived = [&] {
    if (!derived) {
      derived = gen::derive_remote(*ctx.derive_client, ctx.derivation_template, x, ctx.sampling);
    }
  };
  auto ensure_derived_response = [&] {
    ensure_derived();
    if (!derived_response) {
      derived_response = gen::respond(*ctx.respond_client, derived->text, ctx.sampling);
    }
  };
  auto ensure_refined = [&] {
    if (!refined) {
      const auto it = ctx.refined_prompts.find(x.id);
      if (it == ctx.refined_prompts.end()) {
        throw DataError("no refined prompt for id '" + x.id + "'");
      }
      refined = it->second;
    }
  };
  auto ensure_refined_response = [&] {
    ensure_refined();
    if (!refined_response) {
      refined_response = gen::respond(*ctx.respond_client, *refined, ctx.sampling);
    }
  };
  auto icl_respond = [&](const DerivedPrompt& d, const std::string& y_prime) {
    const gen::IclQuery q = ctx.icl_template_text.empty()
                                ? gen::build_icl_query(x, d, y_prime)
                                : gen::build_icl_query(ctx.icl_template_text, x, d, y_prime);
    return gen::respond_icl(*ctx.respond_client, q, ctx.sampling);
  };

  for (Arm arm : arms) {
    std::string response;
    switch (arm) {
      case Arm::OP:
        response = gen::respond(*ctx.respond_client, x.text, ctx.sampling);
        break;
      case Arm::OD:
        ensure_derived_response();
        response = *derived_response;
        break;
      case Arm::BPO:
        ensure_refined_response();
        response = *refined_response;
        break;
      case Arm::OD_ICL:
        ensure_derived_response();
        response = icl_respond(*derived, *derived_response);
        break;
      case Arm::BPO_ICL: {
        ensure_refined_response();
        const DerivedPrompt external{x.id, *refined, 0, Producer::RemoteModel};
        response = icl_respond(external, *refined_response);
        break;
      }
    }
    item.responses[arm_token(arm)] = std::move(response);
  }

  if (ctx.scorer) {
    for (const auto& [arm, response] : item.responses) {
      item.rewards[arm] = ctx.scorer->score(x.text, response).value;
    }
  }

  if (derived) item.derived_prompt = derived->text;
  if (derived_response) item.derived_response = derived_response;
  return item;
}

void write_cache_refs(const std::filesystem::path& path, std::vector<std::string> keys) {
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write cache refs: " + path.string());
  for (const std::string& k : keys) out << k << '\n';
}

}  // namespace

std::string arm_token(Arm arm) {
  switch (arm) {
    case Arm::OP: return "OP";
    case Arm::OD: return "OD";
    case Arm::BPO: return "BPO-file";
    case Arm::OD_ICL: return "OD+ICL";
    case Arm::BPO_ICL: return "BPO-file+ICL";
  }
  throw ConfigError("unknown arm");
}

Arm arm_from_token(const std::string& token) {
  if (token == "OP") return Arm::OP;
  if (token == "OD") return Arm::OD;
  if (token == "BPO-file") return Arm::BPO;
  if (token == "OD+ICL") return Arm::OD_ICL;
  if (token == "BPO-file+ICL") return Arm::BPO_ICL;
  throw ConfigError("unknown arm token '" + token +
                    "' (expected OP, OD, BPO-file, OD+ICL, BPO-file+ICL)");
}

std::vector<Arm> parse_arm_list(const std::string& comma_separated) {
  std::vector<Arm> out;
  std::stringstream ss(comma_separated);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(arm_from_token(tok));
  }
  if (out.empty()) throw ConfigError("empty arm list");
  return out;
}

RunManifest run_pipeline(const std::vector<PromptRecord>& dataset, PipelineContext& ctx,
                         const PipelineOptions& opts) {
  if (dataset.empty()) throw ConfigError("pipeline: empty dataset");
  if (opts.workers < 1) throw ConfigError("pipeline: workers must be >= 1");
  if (!ctx.respond_client) throw ConfigError("pipeline: respond client required");
  if (!ctx.derive_client) ctx.derive_client = ctx.respond_client;
  if (opts.seed != 0 && !ctx.sampling.seed) {
    ctx.sampling.seed = static_cast<std::int64_t>(opts.seed);
  }

  const std::vector<Arm> arms = canonicalize_arms(opts.arms);
  const bool needs_bpo = wants(arms, Arm::BPO) || wants(arms, Arm::BPO_ICL);
  if (needs_bpo) {
    for (const PromptRecord& x : dataset) {
      if (ctx.refined_prompts.count(x.id) == 0) {
        throw DataError("pipeline: refined prompt file is missing id '" + x.id + "'");
      }
    }
  }

  RunManifest manifest;
  manifest.run_id = make_run_id(opts.config_snapshot_json);
  manifest.created_utc = utc_now_iso8601();
  manifest.tool_version = kToolVersion;
  manifest.kind = "pipeline";
  manifest.dataset_name = opts.dataset_name;
  manifest.dataset_digest = dataset_digest(dataset);
  manifest.dataset_size = static_cast<int>(dataset.size());
  manifest.sampling_note = "uniform-with-replacement";
  manifest.config_snapshot_json = opts.config_snapshot_json;

  const std::filesystem::path run_dir = opts.run_root / manifest.run_id;
  std::filesystem::create_directories(run_dir);
  touch_marker(run_dir);
  RunLog log(run_dir / "run.log");
  std::ostringstream arms_line;
  for (Arm a : arms) arms_line << arm_token(a) << ' ';
  log.line("run " + manifest.run_id + " started, arms: " + arms_line.str());

  // Drop keys left over from earlier runs sharing these clients.
  ctx.respond_client->drain_touched_keys();
  const bool distinct_derive = ctx.derive_client.get() != ctx.respond_client.get();
  if (distinct_derive) ctx.derive_client->drain_touched_keys();
  const TokenUsage respond_before = ctx.respond_client->usage_totals();
  const TokenUsage derive_before = ctx.derive_client->usage_totals();

  manifest.items.resize(dataset.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::mutex skip_mu;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= dataset.size()) return;
      {
        std::lock_guard<std::mutex> lk(failure_mu);
        if (failure) return;
      }
      const PromptRecord& x = dataset[i];
      try {
        manifest.items[i] = process_prompt(x, ctx, arms);
        log.line("item " + x.id + " done");
      } catch (const std::exception& e) {
        if (opts.skip_on_error) {
          ManifestItem item;
          item.id = x.id;
          item.prompt = x.text;
          item.skipped = true;
          item.error = e.what();
          manifest.items[i] = std::move(item);
          {
            std::lock_guard<std::mutex> lk(skip_mu);
            manifest.skips.push_back(x.id);
          }
          log.line("item " + x.id + " skipped: " + e.what());
        } else {
          std::lock_guard<std::mutex> lk(failure_mu);
          if (!failure) {
            try {
              throw Error("pipeline: prompt '" + x.id + "': " + e.what());
            } catch (...) {
              failure = std::current_exception();
            }
          }
          return;
        }
      }
    }
  };

  const int workers = std::min<int>(opts.workers, static_cast<int>(dataset.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  if (failure) {
    log.line("run aborted");
    std::rethrow_exception(failure);
  }

  // Skips keep dataset order, not completion order.
  std::sort(manifest.skips.begin(), manifest.skips.end(),
            [&dataset](const std::string& a, const std::string& b) {
              auto pos = [&dataset](const std::string& id) {
                for (std::size_t i = 0; i < dataset.size(); ++i) {
                  if (dataset[i].id == id) return i;
                }
                return dataset.size();
              };
              return pos(a) < pos(b);
            });

  for (Arm arm : arms) {
    const std::string tok = arm_token(arm);
    double sum = 0.0;
    int n = 0;
    for (const ManifestItem& item : manifest.items) {
      const auto it = item.rewards.find(tok);
      if (it != item.rewards.end()) {
        sum += it->second;
        ++n;
      }
    }
    if (n > 0) manifest.reward_means[tok] = sum / n;
  }

  const TokenUsage respond_after = ctx.respond_client->usage_totals();
  const TokenUsage derive_after = ctx.derive_client->usage_totals();
  manifest.usage.prompt_tokens = respond_after.prompt_tokens - respond_before.prompt_tokens;
  manifest.usage.completion_tokens =
      respond_after.completion_tokens - respond_before.completion_tokens;
  if (distinct_derive) {
    manifest.usage.prompt_tokens += derive_after.prompt_tokens - derive_before.prompt_tokens;
    manifest.usage.completion_tokens +=
        derive_after.completion_tokens - derive_before.completion_tokens;
  }

  std::vector<std::string> keys = ctx.respond_client->drain_touched_keys();
  if (distinct_derive) {
    for (std::string& k : ctx.derive_client->drain_touched_keys()) keys.push_back(std::move(k));
  }
  write_cache_refs(run_dir / "cache_refs.txt", std::move(keys));
  manifest.artifacts = {"cache_refs.txt", "run.log"};

  manifest.write(run_dir);
  remove_marker(run_dir);
  log.line("run " + manifest.run_id + " finished, skips: " +
           std::to_string(manifest.skips.size()));
  return manifest;
}

RunManifest run_judge_eval(const RunManifest& source, const std::string& arm_a,
                           const std::string& arm_b, client::Client& judge_client,
                           std::uint64_t seed, int workers,
                           const std::filesystem::path& run_root,
                           const std::string& config_snapshot_json) {
  arm_from_token(arm_a);
  arm_from_token(arm_b);
  if (arm_a == arm_b) throw ConfigError("judge eval: arms must differ");

  std::vector<PromptRecord> questions;
  std::map<std::string, std::string> a_map;
  std::map<std::string, std::string> b_map;
  for (const ManifestItem& item : source.items) {
    if (item.skipped) continue;
    const auto a = item.responses.find(arm_a);
    const auto b = item.responses.find(arm_b);
    if (a == item.responses.end()) {
      throw DataError("judge eval: item '" + item.id + "' has no arm '" + arm_a + "'");
    }
    if (b == item.responses.end()) {
      throw DataError("judge eval: item '" + item.id + "' has no arm '" + arm_b + "'");
    }
    questions.push_back({item.id, item.prompt, source.dataset_name, {}});
    a_map[item.id] = a->second;
    b_map[item.id] = b->second;
  }
  if (questions.empty()) throw DataError("judge eval: no judgeable items in manifest");

  const judge::EvaluationResult result =
      judge::evaluate(questions, a_map, b_map, judge_client, seed, workers);

  RunManifest m;
  m.run_id = make_run_id(config_snapshot_json + arm_a + arm_b);
  m.created_utc = utc_now_iso8601();
  m.tool_version = kToolVersion;
  m.kind = "judge";
  m.dataset_name = source.dataset_name;
  m.dataset_digest = source.dataset_digest;
  m.dataset_size = static_cast<int>(questions.size());
  m.config_snapshot_json = config_snapshot_json;

  const std::filesystem::path run_dir = run_root / m.run_id;
  std::filesystem::create_directories(run_dir);
  touch_marker(run_dir);
  judge::save_verdicts((run_dir / "verdicts.jsonl").string(), result.verdicts);
  m.judgments.push_back(
      {arm_a, arm_b, result.summary, result.n_unparsed, "verdicts.jsonl"});
  m.artifacts = {"verdicts.jsonl"};
  m.usage = judge_client.usage_totals();
  m.write(run_dir);
  remove_marker(run_dir);
  return m;
}

RunManifest run_reward_eval(const RunManifest& source, reward::Scorer& scorer,
                            const std::vector<std::string>& arm_tokens,
                            const std::filesystem::path& run_root,
                            const std::string& config_snapshot_json) {
  std::vector<std::string> arms = arm_tokens;
  if (arms.empty()) {
    std::set<std::string> seen;
    for (const ManifestItem& item : source.items) {
      for (const auto& [tok, _] : item.responses) seen.insert(tok);
    }
    arms.assign(seen.begin(), seen.end());
  }
  if (arms.empty()) throw DataError("reward eval: manifest has no responses");

  RunManifest m;
  m.run_id = make_run_id(config_snapshot_json + "reward");
  m.created_utc = utc_now_iso8601();
  m.tool_version = kToolVersion;
  m.kind = "reward";
  m.dataset_name = source.dataset_name;
  m.dataset_digest = source.dataset_digest;
  m.dataset_size = source.dataset_size;
  m.config_snapshot_json = config_snapshot_json;

  for (const ManifestItem& item : source.items) {
    if (item.skipped) continue;
    ManifestItem copy;
    copy.id = item.id;
    copy.prompt = item.prompt;
    for (const std::string& tok : arms) {
      const auto it = item.responses.find(tok);
      if (it == item.responses.end()) continue;
      copy.responses[tok] = it->second;
      copy.rewards[tok] = scorer.score(item.prompt, it->second).value;
    }
    m.items.push_back(std::move(copy));
  }
  if (m.items.empty()) throw DataError("reward eval: no scoreable items in manifest");

  for (const std::string& tok : arms) {
    double sum = 0.0;
    int n = 0;
    for (const ManifestItem& item : m.items) {
      const auto it = item.rewards.find(tok);
      if (it != item.rewards.end()) {
        sum += it->second;
        ++n;
      }
    }
    if (n > 0) m.reward_means[tok] = sum / n;
  }

  const std::filesystem::path run_dir = run_root / m.run_id;
  std::filesystem::create_directories(run_dir);
  touch_marker(run_dir);
  m.write(run_dir);
  remove_marker(run_dir);
  return m;
}

}  // namespace dpg::harness
