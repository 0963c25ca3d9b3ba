#include "dpg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dpg/errors.hpp"
#include "dpg/hashing.hpp"

namespace dpg::train {

namespace {

void check_config(const TrainConfig& cfg) {
  if (cfg.beta < 0.0 || !std::isfinite(cfg.beta)) {
    throw ConfigError("trainer: beta must be finite and >= 0");
  }
  if (cfg.learning_rate <= 0.0 || !std::isfinite(cfg.learning_rate)) {
    throw ConfigError("trainer: learning_rate must be finite and > 0");
  }
  if (cfg.epochs <= 0) throw ConfigError("trainer: epochs must be > 0");
}

double canonical_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

double shaped_reward(double reward, double beta, double kl_term) {
  if (!std::isfinite(reward)) throw ConfigError("shaped_reward: non-finite reward");
  if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("shaped_reward: invalid beta");
  if (!std::isfinite(kl_term)) throw ConfigError("shaped_reward: non-finite kl term");
  return reward - beta * kl_term;
}

double learning_rate_at(const TrainConfig& cfg, int t, int total_steps) {
  if (t < 0 || total_steps <= 0 || t >= total_steps) {
    throw ConfigError("learning_rate_at: step index out of range");
  }
  if (cfg.decay == Decay::None) return cfg.learning_rate;
  return cfg.learning_rate *
         (1.0 - static_cast<double>(t) / static_cast<double>(total_steps));
}

StepResult remax_step(const std::vector<double>& theta, const std::vector<double>& theta_ref,
                      const policy::StrategySet& strategies, const PromptRecord& x,
                      const RespondFn& respond, const ScoreFn& score, const TrainConfig& cfg,
                      int t, int total_steps, std::mt19937_64& rng) {
  check_config(cfg);
  if (static_cast<int>(theta.size()) != strategies.size()) {
    throw ConfigError("remax_step: theta size does not match strategy count");
  }
  if (theta.size() != theta_ref.size()) {
    throw ConfigError("remax_step: theta and theta_ref size mismatch");
  }

  const policy::Draw draw = policy::sample(theta, rng);
  const DerivedPrompt sampled = policy::realize(strategies, draw.index, x);
  const std::string y_sampled = respond(sampled);
  const double r_sampled = score(sampled, y_sampled);

  const std::vector<double> p = policy::probs(theta);
  const int greedy_k = static_cast<int>(
      std::distance(p.begin(), std::max_element(p.begin(), p.end())));
  const DerivedPrompt greedy = policy::realize(strategies, greedy_k, x);
  const std::string y_greedy = respond(greedy);
  const double r_greedy = score(greedy, y_greedy);

  if (!std::isfinite(r_sampled) || !std::isfinite(r_greedy)) {
    throw Error("remax_step: non-finite reward for prompt '" + x.id + "'");
  }

  const double kl = policy::kl_log_ratio(theta, theta_ref, draw.index);
  const double kl_greedy = policy::kl_log_ratio(theta, theta_ref, greedy_k);
  const double advantage =
      shaped_reward(r_sampled, cfg.beta, kl) - shaped_reward(r_greedy, cfg.beta, kl_greedy);
  if (!std::isfinite(advantage)) {
    throw Error("remax_step: non-finite advantage for prompt '" + x.id + "'");
  }

  const double lr = learning_rate_at(cfg, t, total_steps);
  const std::vector<double> g = policy::grad_log_prob(theta, draw.index);

  StepResult out;
  out.theta = theta;
  for (std::size_t i = 0; i < out.theta.size(); ++i) {
    out.theta[i] += lr * advantage * g[i];
    if (!std::isfinite(out.theta[i])) {
      throw Error("remax_step: parameter update diverged for prompt '" + x.id + "'");
    }
  }
  out.log = TrainStepLog{t,        x.id,     draw.index, greedy_k,  r_sampled,
                         r_greedy, kl,       advantage,  lr,        short_digest(
                                                                        serialize_theta(out.theta))};
  return out;
}

TrainResult train(const std::vector<PromptRecord>& dataset,
                  const policy::StrategySet& strategies, std::vector<double> theta0,
                  const RespondFn& respond, const ScoreFn& score, const TrainConfig& cfg) {
  check_config(cfg);
  if (cfg.steps <= 0) throw ConfigError("trainer: steps must be > 0");
  if (dataset.empty()) throw ConfigError("trainer: empty dataset");
  if (!respond || !score) throw ConfigError("trainer: respond and score callbacks required");

  const std::vector<double> theta_ref = theta0;
  std::mt19937_64 rng(cfg.seed);
  const int total = cfg.steps * cfg.epochs;

  TrainResult result;
  result.theta = std::move(theta0);
  result.logs.reserve(static_cast<std::size_t>(total));
  for (int t = 0; t < total; ++t) {
    const auto idx = static_cast<std::size_t>(canonical_uniform(rng) *
                                              static_cast<double>(dataset.size()));
    const PromptRecord& x = dataset[std::min(idx, dataset.size() - 1)];
    try {
      StepResult step = remax_step(result.theta, theta_ref, strategies, x, respond, score,
                                   cfg, t, total, rng);
      result.theta = std::move(step.theta);
      result.logs.push_back(std::move(step.log));
    } catch (const Error& e) {
      throw Error("train: step " + std::to_string(t) + ", prompt '" + x.id + "': " + e.what());
    }
  }
  return result;
}

std::vector<double> sft_baseline(const std::vector<LabeledPrompt>& dataset,
                                 const TrainConfig& cfg, std::vector<double> theta) {
  check_config(cfg);
  if (cfg.steps < 0) throw ConfigError("sft_baseline: steps must be >= 0");
  if (cfg.steps == 0) return theta;
  if (dataset.empty()) throw ConfigError("sft_baseline: empty dataset");
  const int k_count = static_cast<int>(theta.size());
  for (const LabeledPrompt& lp : dataset) {
    if (lp.gold_strategy < 0 || lp.gold_strategy >= k_count) {
      throw DataError("sft_baseline: gold label " + std::to_string(lp.gold_strategy) +
                      " out of range for prompt '" + lp.prompt.id + "'");
    }
  }

  std::mt19937_64 rng(cfg.seed);
  const int total = cfg.steps * cfg.epochs;
  for (int t = 0; t < total; ++t) {
    const auto idx = static_cast<std::size_t>(canonical_uniform(rng) *
                                              static_cast<double>(dataset.size()));
    const LabeledPrompt& ex = dataset[std::min(idx, dataset.size() - 1)];
    const double lr = learning_rate_at(cfg, t, total);
    const std::vector<double> g = policy::grad_log_prob(theta, ex.gold_strategy);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += lr * g[i];
  }
  return theta;
}

std::string serialize_theta(std::span<const double> theta) {
  std::ostringstream out;
  char buf[64];
  for (double v : theta) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf << '\n';
  }
  return out.str();
}

void save_theta(const std::string& path, std::span<const double> theta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write theta file: " + path);
  out << serialize_theta(theta);
  if (!out.flush()) throw Error("failed writing theta file: " + path);
}

std::vector<double> load_theta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open theta file: " + path);
  std::vector<double> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    // strtod instead of std::stod: subnormal values parse with ERANGE, which
    // stod turns into out_of_range and would reject a legal round trip.
    char* end = nullptr;
    const double v = std::strtod(line.c_str(), &end);
    const bool consumed = end == line.c_str() + line.size() && end != line.c_str();
    if (!consumed || !std::isfinite(v)) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": invalid number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw DataError(path + ": no parameters found");
  return out;
}

void save_logs(const std::string& path, const std::vector<TrainStepLog>& logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write training log: " + path);
  for (const TrainStepLog& l : logs) {
    nlohmann::json j;
    j["step"] = l.step;
    j["prompt_id"] = l.prompt_id;
    j["sampled_k"] = l.sampled_k;
    j["greedy_k"] = l.greedy_k;
    j["reward_sampled"] = l.reward_sampled;
    j["reward_greedy"] = l.reward_greedy;
    j["kl_term"] = l.kl_term;
    j["advantage"] = l.advantage;
    j["learning_rate"] = l.learning_rate;
    j["theta_digest"] = l.theta_digest;
    out << j.dump() << '\n';
  }
  if (!out.flush()) throw Error("failed writing training log: " + path);
}

std::vector<TrainStepLog> load_logs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open training log: " + path);
  std::vector<TrainStepLog> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      TrainStepLog l;
      l.step = j.at("step").get<int>();
      l.prompt_id = j.at("prompt_id").get<std::string>();
      l.sampled_k = j.at("sampled_k").get<int>();
      l.greedy_k = j.at("greedy_k").get<int>();
      l.reward_sampled = j.at("reward_sampled").get<double>();
      l.reward_greedy = j.at("reward_greedy").get<double>();
      l.kl_term = j.at("kl_term").get<double>();
      l.advantage = j.at("advantage").get<double>();
      l.learning_rate = j.at("learning_rate").get<double>();
      l.theta_digest = j.at("theta_digest").get<std::string>();
      out.push_back(std::move(l));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dpg::train
