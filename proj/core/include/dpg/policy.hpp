#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpg/types.hpp"

namespace dpg::policy {

/// One deterministic textual derivation strategy. text_template must
/// contain the placeholder {original} exactly once.
struct Strategy {
  std::string name;
  std::string text_template;
};

class StrategySet {
 public:
  explicit StrategySet(std::vector<Strategy> strategies);

  /// Built-in set of 6 strategies, index 0 being the identity rewrite.
  static StrategySet defaults();

  /// One strategy per line: name, tab, template. Blank lines and lines
  /// starting with '#' are skipped.
  static StrategySet from_file(const std::string& path);

  int size() const { return static_cast<int>(strategies_.size()); }
  const Strategy& at(int k) const;
  const std::vector<Strategy>& strategies() const { return strategies_; }

 private:
  std::vector<Strategy> strategies_;
};

/// Trainable parameter vector over strategy logits plus the frozen
/// reference copy taken at construction time.
class PolicyParameters {
 public:
  explicit PolicyParameters(std::vector<double> theta);

  std::vector<double> theta;
  const std::vector<double>& theta_ref() const { return theta_ref_; }

 private:
  std::vector<double> theta_ref_;
};

/// Softmax with max-subtraction. Entries are positive and sum to 1 within
/// 1e-12. Rejects empty or non-finite input.
std::vector<double> probs(std::span<const double> theta);

/// log probs via the log-sum-exp identity; exp(log_probs) == probs.
std::vector<double> log_probs(std::span<const double> theta);

struct Draw {
  int index = 0;
  double log_prob = 0.0;
};

/// Samples a strategy index by inverse CDF over probs(theta). The uniform
/// variate is derived from the top 53 bits of one rng() call, so a given
/// seed draws the same sequence on every platform.
Draw sample(std::span<const double> theta, std::mt19937_64& rng);

/// Score-function gradient of log pi(k | theta): e_k - probs(theta).
std::vector<double> grad_log_prob(std::span<const double> theta, int k);

/// log(pi_theta(k) / pi_ref(k)); the per-sample regularization term.
double kl_log_ratio(std::span<const double> theta, std::span<const double> theta_ref, int k);

/// Exact KL(pi_theta || pi_ref) by enumeration. Always >= 0.
double kl_divergence(std::span<const double> theta, std::span<const double> theta_ref);

/// Applies strategy k to an original prompt. Substitutes the {original}
/// placeholder once; placeholder-like text inside x is never re-expanded.
DerivedPrompt realize(const StrategySet& strategies, int k, const PromptRecord& x);

}  // namespace dpg::policy
