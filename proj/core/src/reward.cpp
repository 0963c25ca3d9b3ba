#include "dpg/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

namespace dpg::reward {

namespace {

std::set<std::string> keywords(const std::string& text) {
  std::set<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.size() >= 4) out.insert(word);
    word.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) != 0) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace

int count_tokens(std::string_view text) {
  int n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

double keyword_coverage(const std::string& prompt, const std::string& response) {
  const std::set<std::string> want = keywords(prompt);
  if (want.empty()) return 0.0;
  const std::set<std::string> have = keywords(response);
  int hit = 0;
  for (const std::string& w : want) {
    if (have.count(w) != 0) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(want.size());
}

bool is_echo(const std::string& prompt, const std::string& response) {
  if (prompt.empty()) return false;
  const std::size_t limit = std::min(prompt.size(), response.size());
  std::size_t common = 0;
  while (common < limit && prompt[common] == response[common]) ++common;
  return static_cast<double>(common) >= 0.8 * static_cast<double>(prompt.size());
}

double heuristic_score(const HeuristicWeights& w, const std::string& prompt,
                       const std::string& response) {
  const double length_part =
      std::min(1.0, static_cast<double>(count_tokens(response)) / 256.0);
  const double keyword_part = keyword_coverage(prompt, response);
  const double echo_part = is_echo(prompt, response) ? 1.0 : 0.0;
  return w.length_w * length_part + w.keyword_w * keyword_part - w.echo_penalty_w * echo_part;
}

Scorer::Scorer(ScorerConfig cfg, std::shared_ptr<client::Client> remote)
    : cfg_(std::move(cfg)), remote_(std::move(remote)) {
  if (cfg_.kind == ScorerKind::Remote) {
    if (remote_ == nullptr && !cfg_.endpoint) {
      throw ConfigError("remote scorer requires an endpoint or a client");
    }
    if (remote_ == nullptr) {
      client::validate(*cfg_.endpoint);
      remote_ = std::make_shared<client::Client>(*cfg_.endpoint);
    }
  }
}

RewardScore Scorer::score(const std::string& prompt, const std::string& response) {
  RewardScore out;
  out.prompt_text = prompt;
  out.response_text = response;
  if (cfg_.kind == ScorerKind::Heuristic) {
    out.scorer = "heuristic";
    out.value = heuristic_score(cfg_.weights, prompt, response);
  } else {
    out.scorer = "remote";
    out.value = remote_->score(prompt, response);
  }
  if (!std::isfinite(out.value)) {
    throw ScorerError("scorer returned a non-finite value");
  }
  return out;
}

DatasetScore score_dataset(Scorer& scorer,
                           const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw ConfigError("score_dataset: no pairs to score");
  DatasetScore out;
  out.per_item.reserve(pairs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    try {
      out.per_item.push_back(scorer.score(pairs[i].first, pairs[i].second));
    } catch (const Error& e) {
      throw ScorerError("score_dataset: item " + std::to_string(i) + ": " + e.what());
    }
    sum += out.per_item.back().value;
  }
  out.mean = sum / static_cast<double>(pairs.size());
  return out;
}

std::string format_delta(double reference_mean, double other_mean) {
  const double delta = reference_mean - other_mean;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s %.2f", delta >= 0.0 ? "↑" : "↓", delta);
  return buf;
}

}  // namespace dpg::reward
