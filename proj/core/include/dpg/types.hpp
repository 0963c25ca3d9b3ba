#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dpg {

enum class Role { System, User, Assistant };

std::string to_string(Role role);
Role role_from_string(const std::string& s);

struct Message {
  Role role = Role::User;
  std::string content;

  bool operator==(const Message&) const = default;
};

/// One original user prompt; the unit every pipeline stage operates on.
/// Invariants: id unique within a dataset, text nonempty after trimming.
struct PromptRecord {
  std::string id;
  std::string text;
  std::string source;
  std::map<std::string, std::string> meta;
};

enum class Producer { RemoteModel, LocalPolicy };

/// A rewrite of an original prompt that preserves its intent.
struct DerivedPrompt {
  std::string parent_id;
  std::string text;
  int strategy_index = 0;  // meaningful only when producer == LocalPolicy
  Producer producer = Producer::RemoteModel;
};

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 0.9;
  int max_tokens = 256;
  std::optional<std::int64_t> seed;

  bool operator==(const SamplingParams&) const = default;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

/// One request/response round trip against a chat endpoint.
struct ChatExchange {
  std::string endpoint;
  std::string model;
  std::vector<Message> messages;
  SamplingParams params;
  std::string response_text;
  std::string cache_key;  // digest of (endpoint, model, messages, params)
  std::int64_t latency_ms = 0;
  TokenUsage usage;
};

/// Scalar quality score for a (prompt, response) pair. value is always
/// finite; scorers reject non-finite output instead of storing it.
struct RewardScore {
  std::string prompt_text;
  std::string response_text;
  double value = 0.0;
  std::string scorer;
};

enum class JudgeOutcome { A, B, Tie, Unparsed };

std::string to_string(JudgeOutcome outcome);
JudgeOutcome judge_outcome_from_string(const std::string& s);

/// One pairwise comparison, recorded after position unflipping: outcome
/// always refers to the caller's A/B assignment, not the presented order.
struct Verdict {
  std::string prompt_id;
  bool flipped = false;
  std::string raw_text;
  JudgeOutcome outcome = JudgeOutcome::Unparsed;
};

/// Percentage tally over judged pairs, one decimal place per component.
struct WinRateSummary {
  double a_win = 0.0;
  double b_win = 0.0;
  double tie = 0.0;
  int n = 0;
  double win_rate = 0.0;  // a_win - b_win over the rounded components
};

}  // namespace dpg
