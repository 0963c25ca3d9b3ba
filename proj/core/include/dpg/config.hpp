#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "dpg/client.hpp"
#include "dpg/reward.hpp"
#include "dpg/trainer.hpp"
#include "dpg/types.hpp"

namespace dpg::harness {

struct CacheConfig {
  std::string dir = "cache";
  bool enabled = true;
};

struct RunConfig {
  std::string dir = "runs";
  int workers = 4;
  bool skip_on_error = false;
};

struct TemplateConfig {
  std::string derivation_instruction_file;  // empty -> built-in
  std::string icl_template_file;            // empty -> built-in
};

/// Hierarchical application config, loaded from JSON. Unknown keys and type
/// mismatches are ConfigErrors so typos never pass silently. Secrets stay
/// in the environment: endpoints carry env-var names only.
struct AppConfig {
  client::EndpointConfig response;
  std::optional<client::EndpointConfig> derive;  // defaults to response
  std::optional<client::EndpointConfig> judge;
  CacheConfig cache;
  SamplingParams sampling;
  TemplateConfig templates;
  std::string strategies_file;  // empty -> built-in strategy set
  train::TrainConfig training;
  reward::ScorerConfig scorer;
  RunConfig run;

  static AppConfig load(const std::filesystem::path& path);
  static AppConfig from_json_text(const std::string& text);

  client::EndpointConfig derive_endpoint() const { return derive ? *derive : response; }

  /// Resolved config as sorted-key JSON, embedded in manifests. Contains
  /// env-var names, never their values.
  std::string snapshot_json() const;
};

}  // namespace dpg::harness
