#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpg/policy.hpp"
#include "dpg/types.hpp"

namespace dpg::train {

enum class Decay { None, Linear };

struct TrainConfig {
  double beta = 0.05;         // weight of the reference-policy regularizer
  double learning_rate = 1e-2;
  int steps = 0;              // per epoch; must be > 0 for train()
  int epochs = 2;
  std::uint64_t seed = 0;
  Decay decay = Decay::Linear;
};

struct TrainStepLog {
  int step = 0;
  std::string prompt_id;
  int sampled_k = 0;
  int greedy_k = 0;
  double reward_sampled = 0.0;
  double reward_greedy = 0.0;
  double kl_term = 0.0;
  double advantage = 0.0;
  double learning_rate = 0.0;
  std::string theta_digest;  // short digest of the post-update serialization
};

using RespondFn = std::function<std::string(const DerivedPrompt&)>;
using ScoreFn = std::function<double(const DerivedPrompt&, const std::string&)>;

/// r - beta * kl. Rejects non-finite inputs.
double shaped_reward(double reward, double beta, double kl_term);

/// Learning rate at 0-based step t of total_steps. Linear decay anneals
/// to 0 as t -> total_steps; None keeps the configured rate.
double learning_rate_at(const TrainConfig& cfg, int t, int total_steps);

struct StepResult {
  std::vector<double> theta;
  TrainStepLog log;
};

/// One REINFORCE step with a greedy-rollout baseline: sample k, roll out,
/// roll out the current argmax arm, and update along
/// (shaped(sampled) - shaped(greedy)) * grad_log_prob. theta_ref only
/// enters through the shaped-reward regularizer.
StepResult remax_step(const std::vector<double>& theta, const std::vector<double>& theta_ref,
                      const policy::StrategySet& strategies, const PromptRecord& x,
                      const RespondFn& respond, const ScoreFn& score, const TrainConfig& cfg,
                      int t, int total_steps, std::mt19937_64& rng);

struct TrainResult {
  std::vector<double> theta;
  std::vector<TrainStepLog> logs;
};

/// Runs steps*epochs updates over prompts drawn uniformly with replacement.
/// The reference policy is frozen at theta0. Same seed and same callback
/// behavior reproduce theta and logs exactly.
TrainResult train(const std::vector<PromptRecord>& dataset,
                  const policy::StrategySet& strategies, std::vector<double> theta0,
                  const RespondFn& respond, const ScoreFn& score, const TrainConfig& cfg);

struct LabeledPrompt {
  PromptRecord prompt;
  int gold_strategy = 0;
};

/// Supervised baseline: gradient ascent on log-likelihood of gold strategy
/// labels. steps == 0 returns theta unchanged.
std::vector<double> sft_baseline(const std::vector<LabeledPrompt>& dataset,
                                 const TrainConfig& cfg, std::vector<double> theta);

/// One value per line, printed with 17 significant digits so a round trip
/// reproduces the doubles bit-exactly.
void save_theta(const std::string& path, std::span<const double> theta);
std::vector<double> load_theta(const std::string& path);
std::string serialize_theta(std::span<const double> theta);

void save_logs(const std::string& path, const std::vector<TrainStepLog>& logs);
std::vector<TrainStepLog> load_logs(const std::string& path);

}  // namespace dpg::train
