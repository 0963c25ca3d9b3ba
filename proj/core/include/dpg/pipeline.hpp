#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dpg/client.hpp"
#include "dpg/generation.hpp"
#include "dpg/manifest.hpp"
#include "dpg/reward.hpp"
#include "dpg/types.hpp"

namespace dpg::harness {

/// Response arms. OP answers the original prompt; OD answers the derived
/// prompt; BPO answers an externally refined prompt; the ICL variants wrap
/// the (derived, response) pair into a one-shot example.
enum class Arm { OP, OD, BPO, OD_ICL, BPO_ICL };

std::string arm_token(Arm arm);
Arm arm_from_token(const std::string& token);
std::vector<Arm> parse_arm_list(const std::string& comma_separated);

struct PipelineContext {
  std::shared_ptr<client::Client> respond_client;
  std::shared_ptr<client::Client> derive_client;  // may alias respond_client
  std::shared_ptr<reward::Scorer> scorer;         // null -> no reward pass
  gen::DpgTemplate derivation_template;
  std::string icl_template_text;  // empty -> built-in
  SamplingParams sampling;
  std::map<std::string, std::string> refined_prompts;  // required for BPO arms
};

struct PipelineOptions {
  std::vector<Arm> arms;
  std::uint64_t seed = 0;  // nonzero: forwarded as the request sampling seed
  int workers = 4;
  bool skip_on_error = false;
  std::filesystem::path run_root = "runs";
  std::string dataset_name;
  std::string config_snapshot_json = "{}";
};

/// Runs every requested arm over the dataset. Per prompt, the derived
/// prompt and its response are produced once and shared by OD and OD+ICL;
/// with caching enabled the arm set {OP, OD, OD+ICL} costs at most four
/// network calls per prompt. Failures abort with the prompt id unless
/// skip_on_error, in which case the item is recorded as skipped. Writes
/// manifest.json, cache_refs.txt and run.log under {run_root}/{run_id}.
RunManifest run_pipeline(const std::vector<PromptRecord>& dataset, PipelineContext& ctx,
                         const PipelineOptions& opts);

/// Judges arm_a vs arm_b over a pipeline manifest's responses and writes a
/// judge-kind manifest plus verdicts.jsonl under {run_root}/{run_id}.
/// Skipped source items are excluded from both arms.
RunManifest run_judge_eval(const RunManifest& source, const std::string& arm_a,
                           const std::string& arm_b, client::Client& judge_client,
                           std::uint64_t seed, int workers,
                           const std::filesystem::path& run_root,
                           const std::string& config_snapshot_json);

/// Re-scores a manifest's responses with a (possibly different) scorer and
/// writes a reward-kind manifest under {run_root}/{run_id}.
RunManifest run_reward_eval(const RunManifest& source, reward::Scorer& scorer,
                            const std::vector<std::string>& arm_tokens,
                            const std::filesystem::path& run_root,
                            const std::string& config_snapshot_json);

}  // namespace dpg::harness
