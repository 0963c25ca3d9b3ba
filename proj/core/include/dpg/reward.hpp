#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpg/client.hpp"
#include "dpg/errors.hpp"
#include "dpg/types.hpp"

namespace dpg::reward {

class ScorerError : public Error {
 public:
  using Error::Error;
};

struct HeuristicWeights {
  double length_w = 0.4;
  double keyword_w = 0.5;
  double echo_penalty_w = 0.1;
};

enum class ScorerKind { Heuristic, Remote };

struct ScorerConfig {
  ScorerKind kind = ScorerKind::Heuristic;
  HeuristicWeights weights;
  std::optional<client::EndpointConfig> endpoint;  // required for Remote
};

/// Whitespace-delimited token count.
int count_tokens(std::string_view text);

/// Fraction of the prompt's distinct keywords (lowercased alphanumeric
/// words of length >= 4) that appear in the response. 0 when the prompt
/// has no keywords.
double keyword_coverage(const std::string& prompt, const std::string& response);

/// True when the response starts by repeating >= 80% of the prompt.
bool is_echo(const std::string& prompt, const std::string& response);

/// length_w * min(1, tokens/256) + keyword_w * coverage - echo penalty.
double heuristic_score(const HeuristicWeights& w, const std::string& prompt,
                       const std::string& response);

/// Pure function of its inputs for a fixed config: scoring the same pair
/// twice yields bit-identical values.
class Scorer {
 public:
  explicit Scorer(ScorerConfig cfg, std::shared_ptr<client::Client> remote = nullptr);

  RewardScore score(const std::string& prompt, const std::string& response);
  const ScorerConfig& config() const { return cfg_; }

 private:
  ScorerConfig cfg_;
  std::shared_ptr<client::Client> remote_;
};

struct DatasetScore {
  double mean = 0.0;
  std::vector<RewardScore> per_item;
};

/// Scores every (prompt, response) pair; any scorer failure aborts with the
/// item index in the message. pre: pairs nonempty.
DatasetScore score_dataset(Scorer& scorer,
                           const std::vector<std::pair<std::string, std::string>>& pairs);

/// Reward-mean delta rendered for reports: "↑ 0.25" when reference wins by
/// 0.25, "↓ -0.01" when it loses. Two decimals.
std::string format_delta(double reference_mean, double other_mean);

}  // namespace dpg::reward
