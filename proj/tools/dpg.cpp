#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpg/client.hpp"
#include "dpg/config.hpp"
#include "dpg/dataset.hpp"
#include "dpg/errors.hpp"
#include "dpg/generation.hpp"
#include "dpg/manifest.hpp"
#include "dpg/mock_server.hpp"
#include "dpg/pipeline.hpp"
#include "dpg/policy.hpp"
#include "dpg/report.hpp"
#include "dpg/reward.hpp"
#include "dpg/trainer.hpp"
#include "dpg/version.hpp"

namespace fs = std::filesystem;
using namespace dpg;

namespace {

std::atomic<bool> g_stop{false};

void handle_stop(int) { g_stop.store(true); }

/// Shared service objects assembled from one resolved config.
struct Runtime {
  harness::AppConfig cfg;
  std::shared_ptr<client::ResponseCache> cache;
  std::shared_ptr<client::Client> respond;
  std::shared_ptr<client::Client> derive;  // aliases respond without a derive endpoint
  std::shared_ptr<reward::Scorer> scorer;
  gen::DpgTemplate derivation_template;
  std::string icl_template_text;  // empty -> built-in
};

harness::AppConfig load_config(const std::string& path) {
  if (path.empty()) return harness::AppConfig{};
  return harness::AppConfig::load(path);
}

Runtime make_runtime(harness::AppConfig cfg) {
  Runtime rt;
  rt.cfg = std::move(cfg);
  if (rt.cfg.cache.enabled) {
    rt.cache = std::make_shared<client::ResponseCache>(rt.cfg.cache.dir);
  }
  rt.respond = std::make_shared<client::Client>(rt.cfg.response, rt.cache);
  rt.derive = rt.cfg.derive
                  ? std::make_shared<client::Client>(*rt.cfg.derive, rt.cache)
                  : rt.respond;
  std::shared_ptr<client::Client> score_client;
  if (rt.cfg.scorer.kind == reward::ScorerKind::Remote) {
    score_client = std::make_shared<client::Client>(*rt.cfg.scorer.endpoint, rt.cache);
  }
  rt.scorer = std::make_shared<reward::Scorer>(rt.cfg.scorer, score_client);
  if (!rt.cfg.templates.derivation_instruction_file.empty()) {
    rt.derivation_template =
        gen::DpgTemplate::from_file(rt.cfg.templates.derivation_instruction_file);
  }
  if (!rt.cfg.templates.icl_template_file.empty()) {
    rt.icl_template_text = gen::load_icl_template(rt.cfg.templates.icl_template_file);
  }
  return rt;
}

policy::StrategySet load_strategies(const harness::AppConfig& cfg) {
  if (cfg.strategies_file.empty()) return policy::StrategySet::defaults();
  return policy::StrategySet::from_file(cfg.strategies_file);
}

std::string default_dataset_name(const std::string& given, const std::string& dataset_path) {
  if (!given.empty()) return given;
  return fs::path(dataset_path).stem().string();
}

std::ostream& open_sink(std::ofstream& file, const std::string& out_path) {
  if (out_path.empty()) return std::cout;
  file.open(out_path, std::ios::binary);
  if (!file) throw Error("cannot write output file: " + out_path);
  return file;
}

struct DeriveArgs {
  std::string config;
  std::string dataset;
  std::string out;
  std::string theta_file;
  bool local = false;
  std::uint64_t seed = 0;
};

int cmd_derive(const DeriveArgs& args) {
  const harness::AppConfig cfg = load_config(args.config);
  const auto dataset = harness::load_dataset(args.dataset);
  std::ofstream file;
  std::ostream& out = open_sink(file, args.out);

  if (args.local) {
    const policy::StrategySet strategies = load_strategies(cfg);
    std::vector<double> theta(static_cast<std::size_t>(strategies.size()), 0.0);
    if (!args.theta_file.empty()) theta = train::load_theta(args.theta_file);
    if (static_cast<int>(theta.size()) != strategies.size()) {
      throw ConfigError("derive: theta has " + std::to_string(theta.size()) +
                        " entries for " + std::to_string(strategies.size()) + " strategies");
    }
    std::mt19937_64 rng(args.seed);
    for (const PromptRecord& x : dataset) {
      const policy::Draw draw = policy::sample(theta, rng);
      const DerivedPrompt derived = policy::realize(strategies, draw.index, x);
      out << nlohmann::json{{"id", x.id},
                            {"derived_prompt", derived.text},
                            {"strategy_index", derived.strategy_index}}
                 .dump()
          << '\n';
    }
    return 0;
  }

  Runtime rt = make_runtime(cfg);
  for (const PromptRecord& x : dataset) {
    const DerivedPrompt derived =
        gen::derive_remote(*rt.derive, rt.derivation_template, x, rt.cfg.sampling);
    out << nlohmann::json{{"id", x.id}, {"derived_prompt", derived.text}}.dump() << '\n';
  }
  return 0;
}

struct RespondArgs {
  std::string config;
  std::string prompt;
  std::string dataset;
  std::string out;
};

int cmd_respond(const RespondArgs& args) {
  if (args.prompt.empty() == args.dataset.empty()) {
    throw ConfigError("respond: pass exactly one of --prompt and --dataset");
  }
  Runtime rt = make_runtime(load_config(args.config));
  std::ofstream file;
  std::ostream& out = open_sink(file, args.out);
  if (!args.prompt.empty()) {
    out << gen::respond(*rt.respond, args.prompt, rt.cfg.sampling) << '\n';
    return 0;
  }
  for (const PromptRecord& x : harness::load_dataset(args.dataset)) {
    const std::string response = gen::respond(*rt.respond, x.text, rt.cfg.sampling);
    out << nlohmann::json{{"id", x.id}, {"response", response}}.dump() << '\n';
  }
  return 0;
}

struct IclArgs {
  std::string config;
  std::string original;
  std::string derived;
  std::string response;
  bool send = false;
};

int cmd_icl_query(const IclArgs& args) {
  const harness::AppConfig cfg = load_config(args.config);
  std::string template_text;
  if (!cfg.templates.icl_template_file.empty()) {
    template_text = gen::load_icl_template(cfg.templates.icl_template_file);
  }
  const PromptRecord x{"cli", args.original, "cli", {}};
  const DerivedPrompt derived{"cli", args.derived, 0, Producer::RemoteModel};
  const gen::IclQuery query =
      template_text.empty()
          ? gen::build_icl_query(x, derived, args.response)
          : gen::build_icl_query(template_text, x, derived, args.response);
  if (!args.send) {
    std::cout << query.rendered << '\n';
    return 0;
  }
  Runtime rt = make_runtime(cfg);
  std::cout << gen::respond_icl(*rt.respond, query, rt.cfg.sampling) << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string dataset;
  std::string dataset_name;
  std::string theta_in;
  std::string run_dir;
  int steps = 0;
  int epochs = 0;
  std::uint64_t seed = 0;
  double beta = 0.0;
  double lr = 0.0;
  bool steps_set = false, epochs_set = false, seed_set = false;
  bool beta_set = false, lr_set = false, run_dir_set = false;
};

int cmd_train(const TrainArgs& args) {
  Runtime rt = make_runtime(load_config(args.config));
  const auto dataset = harness::load_dataset(args.dataset);
  const policy::StrategySet strategies = load_strategies(rt.cfg);

  train::TrainConfig tc = rt.cfg.training;
  if (args.steps_set) tc.steps = args.steps;
  if (args.epochs_set) tc.epochs = args.epochs;
  if (args.seed_set) tc.seed = args.seed;
  if (args.beta_set) tc.beta = args.beta;
  if (args.lr_set) tc.learning_rate = args.lr;

  std::vector<double> theta0(static_cast<std::size_t>(strategies.size()), 0.0);
  if (!args.theta_in.empty()) theta0 = train::load_theta(args.theta_in);

  std::map<std::string, std::string> original_text;
  for (const PromptRecord& x : dataset) original_text[x.id] = x.text;

  const TokenUsage respond_before = rt.respond->usage_totals();
  const TokenUsage derive_before = rt.derive->usage_totals();

  const auto respond_fn = [&rt](const DerivedPrompt& d) {
    return gen::respond(*rt.respond, d.text, rt.cfg.sampling);
  };
  const auto score_fn = [&rt, &original_text](const DerivedPrompt& d, const std::string& y) {
    return rt.scorer->score(original_text.at(d.parent_id), y).value;
  };
  const train::TrainResult result =
      train::train(dataset, strategies, theta0, respond_fn, score_fn, tc);

  harness::RunManifest m;
  m.run_id = harness::make_run_id(rt.cfg.snapshot_json() + "train");
  m.created_utc = harness::utc_now_iso8601();
  m.tool_version = kToolVersion;
  m.kind = "train";
  m.dataset_name = default_dataset_name(args.dataset_name, args.dataset);
  m.dataset_digest = harness::dataset_digest(dataset);
  m.dataset_size = static_cast<int>(dataset.size());
  m.sampling_note = "uniform-with-replacement";
  m.config_snapshot_json = rt.cfg.snapshot_json();
  const TokenUsage respond_after = rt.respond->usage_totals();
  m.usage.prompt_tokens = respond_after.prompt_tokens - respond_before.prompt_tokens;
  m.usage.completion_tokens =
      respond_after.completion_tokens - respond_before.completion_tokens;
  if (rt.derive.get() != rt.respond.get()) {
    const TokenUsage derive_after = rt.derive->usage_totals();
    m.usage.prompt_tokens += derive_after.prompt_tokens - derive_before.prompt_tokens;
    m.usage.completion_tokens += derive_after.completion_tokens - derive_before.completion_tokens;
  }
  m.artifacts = {"theta.txt", "training_log.jsonl"};

  const fs::path run_dir = (args.run_dir_set ? fs::path(args.run_dir)
                                             : fs::path(rt.cfg.run.dir)) /
                           m.run_id;
  fs::create_directories(run_dir);
  harness::touch_marker(run_dir);
  train::save_theta((run_dir / "theta.txt").string(), result.theta);
  train::save_logs((run_dir / "training_log.jsonl").string(), result.logs);
  m.write(run_dir);
  harness::remove_marker(run_dir);

  std::cout << "manifest " << (run_dir / "manifest.json").string() << '\n';
  std::cout << "theta " << (run_dir / "theta.txt").string() << '\n';
  const std::vector<double> probs = policy::probs(result.theta);
  for (int k = 0; k < strategies.size(); ++k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", probs[static_cast<std::size_t>(k)]);
    std::cout << "strategy " << k << " " << strategies.at(k).name << " " << buf << '\n';
  }
  return 0;
}

struct RunArgs {
  std::string config;
  std::string dataset;
  std::string dataset_name;
  std::string arms;
  std::string refined;
  std::string run_dir;
  int workers = 0;
  std::uint64_t seed = 0;
  bool skip_on_error = false;
  bool workers_set = false, run_dir_set = false, skip_set = false;
};

int cmd_run(const RunArgs& args) {
  Runtime rt = make_runtime(load_config(args.config));
  const auto dataset = harness::load_dataset(args.dataset);

  harness::PipelineContext ctx;
  ctx.respond_client = rt.respond;
  ctx.derive_client = rt.derive;
  ctx.scorer = rt.scorer;
  ctx.derivation_template = rt.derivation_template;
  ctx.icl_template_text = rt.icl_template_text;
  ctx.sampling = rt.cfg.sampling;
  if (!args.refined.empty()) ctx.refined_prompts = harness::load_refined_prompts(args.refined);

  harness::PipelineOptions opts;
  opts.arms = harness::parse_arm_list(args.arms);
  opts.seed = args.seed;
  opts.workers = args.workers_set ? args.workers : rt.cfg.run.workers;
  opts.skip_on_error = args.skip_set ? args.skip_on_error : rt.cfg.run.skip_on_error;
  opts.run_root = args.run_dir_set ? args.run_dir : rt.cfg.run.dir;
  opts.dataset_name = default_dataset_name(args.dataset_name, args.dataset);
  opts.config_snapshot_json = rt.cfg.snapshot_json();

  const harness::RunManifest m = harness::run_pipeline(dataset, ctx, opts);
  std::cout << "manifest " << (opts.run_root / m.run_id / "manifest.json").string() << '\n';
  std::cout << "items " << m.items.size() << " skips " << m.skips.size() << '\n';
  for (const auto& [arm, mean] : m.reward_means) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", mean);
    std::cout << "reward_mean " << arm << " " << buf << '\n';
  }
  return m.skips.empty() ? 0 : 3;
}

struct EvalJudgeArgs {
  std::string config;
  std::string manifest;
  std::string arm_a;
  std::string arm_b;
  std::string run_dir;
  int workers = 0;
  std::uint64_t seed = 0;
  bool workers_set = false, run_dir_set = false;
};

int cmd_eval_judge(const EvalJudgeArgs& args) {
  const harness::AppConfig cfg = load_config(args.config);
  if (!cfg.judge) throw ConfigError("config: endpoints.judge is required for eval-judge");
  std::shared_ptr<client::ResponseCache> cache;
  if (cfg.cache.enabled) cache = std::make_shared<client::ResponseCache>(cfg.cache.dir);
  client::Client judge_client(*cfg.judge, cache);

  const harness::RunManifest source = harness::RunManifest::read(args.manifest);
  const int workers = args.workers_set ? args.workers : cfg.run.workers;
  const fs::path run_root = args.run_dir_set ? args.run_dir : cfg.run.dir;
  const harness::RunManifest m = harness::run_judge_eval(
      source, args.arm_a, args.arm_b, judge_client, args.seed, workers, run_root,
      cfg.snapshot_json());

  std::cout << "manifest " << (run_root / m.run_id / "manifest.json").string() << '\n';
  std::cout << harness::render_report({m});
  return m.judgments.at(0).n_unparsed == 0 ? 0 : 3;
}

struct EvalRewardArgs {
  std::string config;
  std::string manifest;
  std::string arms;
  std::string run_dir;
  bool run_dir_set = false;
};

int cmd_eval_reward(const EvalRewardArgs& args) {
  Runtime rt = make_runtime(load_config(args.config));
  const harness::RunManifest source = harness::RunManifest::read(args.manifest);
  std::vector<std::string> arm_tokens;
  if (!args.arms.empty()) {
    for (harness::Arm a : harness::parse_arm_list(args.arms)) {
      arm_tokens.push_back(harness::arm_token(a));
    }
  }
  const fs::path run_root = args.run_dir_set ? args.run_dir : rt.cfg.run.dir;
  const harness::RunManifest m = harness::run_reward_eval(source, *rt.scorer, arm_tokens,
                                                          run_root, rt.cfg.snapshot_json());
  std::cout << "manifest " << (run_root / m.run_id / "manifest.json").string() << '\n';
  std::cout << harness::render_report({m});
  return 0;
}

struct ReportArgs {
  std::vector<std::string> manifests;
  bool as_json = false;
};

int cmd_report(const ReportArgs& args) {
  std::vector<harness::RunManifest> manifests;
  manifests.reserve(args.manifests.size());
  for (const std::string& path : args.manifests) {
    manifests.push_back(harness::RunManifest::read(path));
  }
  std::cout << (args.as_json ? harness::report_json(manifests)
                             : harness::render_report(manifests));
  return 0;
}

struct MockServeArgs {
  std::string rules;
  int port = 0;
  int latency_ms = 0;
};

int cmd_mock_serve(const MockServeArgs& args) {
  harness::MockServer server(harness::load_mock_rules(args.rules), args.latency_ms);
  const int port = server.start(args.port);
  std::cout << "listening on http://127.0.0.1:" << port << std::endl;
  std::signal(SIGINT, handle_stop);
  std::signal(SIGTERM, handle_stop);
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  std::cout << "stopped" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"derived-prompt generation, training and evaluation toolkit"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  DeriveArgs derive_args;
  CLI::App* derive_cmd =
      app.add_subcommand("derive", "Produce derived prompts for a dataset");
  derive_cmd->add_option("-c,--config", derive_args.config, "Config file");
  derive_cmd->add_option("--dataset", derive_args.dataset, "Dataset JSONL")->required();
  derive_cmd->add_option("--out", derive_args.out, "Output file (default stdout)");
  derive_cmd->add_flag("--local", derive_args.local,
                       "Sample a local strategy instead of calling the derive endpoint");
  derive_cmd->add_option("--theta", derive_args.theta_file, "Policy parameters for --local");
  derive_cmd->add_option("--seed", derive_args.seed, "Sampling seed for --local");

  RespondArgs respond_args;
  CLI::App* respond_cmd = app.add_subcommand("respond", "Query the response endpoint");
  respond_cmd->add_option("-c,--config", respond_args.config, "Config file");
  respond_cmd->add_option("--prompt", respond_args.prompt, "Single prompt text");
  respond_cmd->add_option("--dataset", respond_args.dataset, "Dataset JSONL");
  respond_cmd->add_option("--out", respond_args.out, "Output file (default stdout)");

  IclArgs icl_args;
  CLI::App* icl_cmd =
      app.add_subcommand("icl-query", "Render a one-shot in-context query");
  icl_cmd->add_option("-c,--config", icl_args.config, "Config file");
  icl_cmd->add_option("--original", icl_args.original, "Original prompt")->required();
  icl_cmd->add_option("--derived", icl_args.derived, "Derived prompt")->required();
  icl_cmd->add_option("--response", icl_args.response, "Derived-prompt response")->required();
  icl_cmd->add_flag("--send", icl_args.send, "Send the query and print the model reply");

  TrainArgs train_args;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Train the derivation policy with reinforcement learning");
  train_cmd->add_option("-c,--config", train_args.config, "Config file");
  train_cmd->add_option("--dataset", train_args.dataset, "Dataset JSONL")->required();
  train_cmd->add_option("--dataset-name", train_args.dataset_name, "Name recorded in the manifest");
  train_cmd->add_option("--theta-in", train_args.theta_in, "Warm-start parameters");
  auto* t_steps = train_cmd->add_option("--steps", train_args.steps, "Steps per epoch");
  auto* t_epochs = train_cmd->add_option("--epochs", train_args.epochs, "Epochs");
  auto* t_seed = train_cmd->add_option("--seed", train_args.seed, "Training seed");
  auto* t_beta = train_cmd->add_option("--beta", train_args.beta, "Regularizer weight");
  auto* t_lr = train_cmd->add_option("--lr", train_args.lr, "Learning rate");
  auto* t_dir = train_cmd->add_option("--run-dir", train_args.run_dir, "Run directory root");

  RunArgs run_args;
  CLI::App* run_cmd = app.add_subcommand("run", "Run response arms over a dataset");
  run_cmd->add_option("-c,--config", run_args.config, "Config file");
  run_cmd->add_option("--dataset", run_args.dataset, "Dataset JSONL")->required();
  run_cmd->add_option("--dataset-name", run_args.dataset_name, "Name recorded in the manifest");
  run_cmd->add_option("--arms", run_args.arms, "Comma-separated arm list")->required();
  run_cmd->add_option("--refined", run_args.refined, "Refined prompts JSONL for BPO arms");
  run_cmd->add_option("--seed", run_args.seed, "Request sampling seed");
  auto* r_workers = run_cmd->add_option("--workers", run_args.workers, "Worker threads");
  auto* r_dir = run_cmd->add_option("--run-dir", run_args.run_dir, "Run directory root");
  auto* r_skip = run_cmd->add_flag("--skip-on-error", run_args.skip_on_error,
                                   "Record failed prompts as skips instead of aborting");

  EvalJudgeArgs judge_args;
  CLI::App* judge_cmd =
      app.add_subcommand("eval-judge", "Judge two arms of a run manifest pairwise");
  judge_cmd->add_option("-c,--config", judge_args.config, "Config file");
  judge_cmd->add_option("--manifest", judge_args.manifest, "Pipeline manifest")->required();
  judge_cmd->add_option("--arm-a", judge_args.arm_a, "First arm")->required();
  judge_cmd->add_option("--arm-b", judge_args.arm_b, "Second arm")->required();
  judge_cmd->add_option("--seed", judge_args.seed, "Position-shuffle seed");
  auto* j_workers = judge_cmd->add_option("--workers", judge_args.workers, "Worker threads");
  auto* j_dir = judge_cmd->add_option("--run-dir", judge_args.run_dir, "Run directory root");

  EvalRewardArgs reward_args;
  CLI::App* reward_cmd =
      app.add_subcommand("eval-reward", "Re-score a run manifest's responses");
  reward_cmd->add_option("-c,--config", reward_args.config, "Config file");
  reward_cmd->add_option("--manifest", reward_args.manifest, "Pipeline manifest")->required();
  reward_cmd->add_option("--arms", reward_args.arms, "Comma-separated arm list (default: all)");
  auto* w_dir = reward_cmd->add_option("--run-dir", reward_args.run_dir, "Run directory root");

  ReportArgs report_args;
  CLI::App* report_cmd = app.add_subcommand("report", "Render comparison tables");
  report_cmd->add_option("manifests", report_args.manifests, "Manifest files")
      ->required()
      ->expected(-1);
  report_cmd->add_flag("--json", report_args.as_json, "Emit structured JSON");

  MockServeArgs mock_args;
  CLI::App* mock_cmd =
      app.add_subcommand("mock-serve", "Serve deterministic mock endpoints");
  mock_cmd->add_option("--rules", mock_args.rules, "Rule file (JSON array)")->required();
  mock_cmd->add_option("--port", mock_args.port, "Port (0 picks a free one)");
  mock_cmd->add_option("--latency-ms", mock_args.latency_ms, "Artificial per-request latency");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  train_args.steps_set = t_steps->count() > 0;
  train_args.epochs_set = t_epochs->count() > 0;
  train_args.seed_set = t_seed->count() > 0;
  train_args.beta_set = t_beta->count() > 0;
  train_args.lr_set = t_lr->count() > 0;
  train_args.run_dir_set = t_dir->count() > 0;
  run_args.workers_set = r_workers->count() > 0;
  run_args.run_dir_set = r_dir->count() > 0;
  run_args.skip_set = r_skip->count() > 0;
  judge_args.workers_set = j_workers->count() > 0;
  judge_args.run_dir_set = j_dir->count() > 0;
  reward_args.run_dir_set = w_dir->count() > 0;

  try {
    if (derive_cmd->parsed()) return cmd_derive(derive_args);
    if (respond_cmd->parsed()) return cmd_respond(respond_args);
    if (icl_cmd->parsed()) return cmd_icl_query(icl_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (run_cmd->parsed()) return cmd_run(run_args);
    if (judge_cmd->parsed()) return cmd_eval_judge(judge_args);
    if (reward_cmd->parsed()) return cmd_eval_reward(reward_args);
    if (report_cmd->parsed()) return cmd_report(report_args);
    if (mock_cmd->parsed()) return cmd_mock_serve(mock_args);
  } catch (const client::TransportError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
