#include "dpg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "dpg/errors.hpp"

namespace dpg::policy {

namespace {

constexpr const char* kPlaceholder = "{original}";

int placeholder_count(const std::string& text) {
  int n = 0;
  for (std::size_t pos = text.find(kPlaceholder); pos != std::string::npos;
       pos = text.find(kPlaceholder, pos + 1)) {
    ++n;
  }
  return n;
}

void check_theta(std::span<const double> theta) {
  if (theta.empty()) throw ConfigError("policy: empty parameter vector");
  for (double v : theta) {
    if (!std::isfinite(v)) throw ConfigError("policy: non-finite parameter");
  }
}

}  // namespace

StrategySet::StrategySet(std::vector<Strategy> strategies) : strategies_(std::move(strategies)) {
  if (strategies_.empty()) throw ConfigError("strategy set must not be empty");
  std::set<std::string> names;
  for (const Strategy& s : strategies_) {
    if (s.name.empty()) throw ConfigError("strategy with empty name");
    if (!names.insert(s.name).second) throw ConfigError("duplicate strategy name: " + s.name);
    if (placeholder_count(s.text_template) != 1) {
      throw ConfigError("strategy '" + s.name + "' must contain {original} exactly once");
    }
  }
}

StrategySet StrategySet::defaults() {
  return StrategySet({
      {"identity", "{original}"},
      {"comprehensive",
       "Please give a comprehensive, multi-angle answer to the following question: {original}"},
      {"add-context",
       "Please add any helpful context this question needs, without narrowing it, then answer: "
       "{original}"},
      {"newcomer", "Please explain this to someone new to the topic: {original}"},
      {"aspects", "Please identify the key aspects involved and address each one: {original}"},
      {"structured", "Please provide a structured, detailed answer: {original}"},
  });
}

StrategySet StrategySet::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open strategy file: " + path);
  std::vector<Strategy> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ConfigError(path + ": line " + std::to_string(line_no) +
                        ": expected 'name<TAB>template'");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return StrategySet(std::move(out));
}

const Strategy& StrategySet::at(int k) const {
  if (k < 0 || k >= size()) {
    throw ConfigError("strategy index " + std::to_string(k) + " out of range [0, " +
                      std::to_string(size()) + ")");
  }
  return strategies_[static_cast<std::size_t>(k)];
}

PolicyParameters::PolicyParameters(std::vector<double> theta)
    : theta(theta), theta_ref_(std::move(theta)) {
  check_theta(this->theta);
}

std::vector<double> log_probs(std::span<const double> theta) {
  check_theta(theta);
  const double mx = *std::max_element(theta.begin(), theta.end());
  double sum = 0.0;
  for (double v : theta) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = theta[i] - lse;
  return out;
}

std::vector<double> probs(std::span<const double> theta) {
  std::vector<double> out = log_probs(theta);
  for (double& v : out) {
    // Clamp so extreme logit gaps cannot underflow an entry to exact zero.
    v = std::max(std::exp(v), std::numeric_limits<double>::min());
  }
  return out;
}

Draw sample(std::span<const double> theta, std::mt19937_64& rng) {
  const std::vector<double> p = probs(theta);
  const std::vector<double> lp = log_probs(theta);
  // Top 53 bits of one draw -> uniform in [0, 1); identical on every platform.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double cum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return {static_cast<int>(i), lp[i]};
  }
  return {static_cast<int>(p.size() - 1), lp.back()};
}

std::vector<double> grad_log_prob(std::span<const double> theta, int k) {
  std::vector<double> g = probs(theta);
  if (k < 0 || k >= static_cast<int>(g.size())) {
    throw ConfigError("grad_log_prob: index out of range");
  }
  for (double& v : g) v = -v;
  g[static_cast<std::size_t>(k)] += 1.0;
  return g;
}

double kl_log_ratio(std::span<const double> theta, std::span<const double> theta_ref, int k) {
  if (theta.size() != theta_ref.size()) {
    throw ConfigError("kl_log_ratio: parameter size mismatch");
  }
  const std::vector<double> lp = log_probs(theta);
  const std::vector<double> lpr = log_probs(theta_ref);
  if (k < 0 || k >= static_cast<int>(lp.size())) {
    throw ConfigError("kl_log_ratio: index out of range");
  }
  return lp[static_cast<std::size_t>(k)] - lpr[static_cast<std::size_t>(k)];
}

double kl_divergence(std::span<const double> theta, std::span<const double> theta_ref) {
  if (theta.size() != theta_ref.size()) {
    throw ConfigError("kl_divergence: parameter size mismatch");
  }
  const std::vector<double> p = probs(theta);
  const std::vector<double> lp = log_probs(theta);
  const std::vector<double> lpr = log_probs(theta_ref);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * (lp[i] - lpr[i]);
  return std::max(kl, 0.0);
}

DerivedPrompt realize(const StrategySet& strategies, int k, const PromptRecord& x) {
  const Strategy& s = strategies.at(k);
  const auto pos = s.text_template.find(kPlaceholder);
  std::string text = s.text_template;
  text.replace(pos, std::char_traits<char>::length(kPlaceholder), x.text);
  return DerivedPrompt{x.id, std::move(text), k, Producer::LocalPolicy};
}

}  // namespace dpg::policy
