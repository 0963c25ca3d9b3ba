#include "dpg/judge.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

#include "dpg/errors.hpp"
#include "dpg/hashing.hpp"
#include "dpg/metrics.hpp"

namespace dpg::judge {

const std::string& system_prompt() {
  static const std::string text =
      "Please act as an impartial judge and evaluate the quality of the responses provided "
      "by two AI assistants to the user question displayed below. You should choose the "
      "assistant that follows the user's instructions and answers the user's question "
      "better. Your evaluation should consider factors such as the helpfulness, relevance, "
      "accuracy, depth, creativity, and level of detail of their responses. Begin your "
      "evaluation by comparing the two responses and provide a short explanation. Avoid any "
      "position biases and ensure that the order in which the responses were presented does "
      "not influence your decision. Do not allow the length of the responses to influence "
      "your evaluation. Do not favor certain names of the assistants. Be as objective as "
      "possible. After providing your explanation, output your final verdict by strictly "
      "following this format: '[[A]]' if assistant A is better, '[[B]]' if assistant B is "
      "better, and '[[C]]' for a tie.";
  return text;
}

std::vector<Message> build_judge_messages(const std::string& question,
                                          const std::string& answer_a,
                                          const std::string& answer_b) {
  std::string user = question;
  user += "\n\n[The Start of Assistant A's Answer]\n";
  user += answer_a;
  user += "\n[The End of Assistant A's Answer]";
  user += "\n\n[The Start of Assistant B's Answer]\n";
  user += answer_b;
  user += "\n[The End of Assistant B's Answer]";
  return {{Role::System, system_prompt()}, {Role::User, std::move(user)}};
}

JudgeOutcome parse_verdict(std::string_view raw) {
  const std::string s(raw);
  const auto a = s.rfind("[[A]]");
  const auto b = s.rfind("[[B]]");
  const auto c = s.rfind("[[C]]");
  std::size_t best = std::string::npos;
  JudgeOutcome outcome = JudgeOutcome::Unparsed;
  if (a != std::string::npos) {
    best = a;
    outcome = JudgeOutcome::A;
  }
  if (b != std::string::npos && (best == std::string::npos || b > best)) {
    best = b;
    outcome = JudgeOutcome::B;
  }
  if (c != std::string::npos && (best == std::string::npos || c > best)) {
    outcome = JudgeOutcome::Tie;
  }
  return outcome;
}

bool flip_coin(std::uint64_t run_seed, const std::string& prompt_id) {
  const std::string hex = sha256_hex(std::to_string(run_seed) + ":" + prompt_id);
  const char c = hex[0];
  const int v = (c <= '9') ? c - '0' : c - 'a' + 10;
  return (v & 1) == 1;
}

SamplingParams judge_sampling() {
  SamplingParams p;
  p.temperature = 0.0;
  p.max_tokens = 512;
  return p;
}

Verdict judge_pair(client::Client& judge_client, const std::string& prompt_id,
                   const std::string& question, const std::string& answer_a,
                   const std::string& answer_b, std::uint64_t run_seed) {
  Verdict v;
  v.prompt_id = prompt_id;
  v.flipped = flip_coin(run_seed, prompt_id);
  const std::string& first = v.flipped ? answer_b : answer_a;
  const std::string& second = v.flipped ? answer_a : answer_b;
  const ChatExchange ex =
      judge_client.complete(build_judge_messages(question, first, second), judge_sampling());
  v.raw_text = ex.response_text;
  JudgeOutcome outcome = parse_verdict(v.raw_text);
  if (v.flipped) {
    if (outcome == JudgeOutcome::A) {
      outcome = JudgeOutcome::B;
    } else if (outcome == JudgeOutcome::B) {
      outcome = JudgeOutcome::A;
    }
  }
  v.outcome = outcome;
  return v;
}

EvaluationResult evaluate(const std::vector<PromptRecord>& questions,
                          const std::map<std::string, std::string>& arm_a,
                          const std::map<std::string, std::string>& arm_b,
                          client::Client& judge_client, std::uint64_t run_seed, int workers) {
  if (questions.empty()) throw ConfigError("evaluate: no questions");
  if (workers < 1) throw ConfigError("evaluate: workers must be >= 1");

  std::set<std::string> question_ids;
  for (const PromptRecord& q : questions) question_ids.insert(q.id);
  auto check_arm = [&question_ids](const std::map<std::string, std::string>& arm,
                                   const char* name) {
    for (const auto& [id, _] : arm) {
      if (question_ids.count(id) == 0) {
        throw DataError(std::string("evaluate: arm ") + name + " has extra id '" + id + "'");
      }
    }
    for (const std::string& id : question_ids) {
      if (arm.count(id) == 0) {
        throw DataError(std::string("evaluate: arm ") + name + " is missing id '" + id + "'");
      }
    }
  };
  check_arm(arm_a, "A");
  check_arm(arm_b, "B");

  EvaluationResult result;
  result.verdicts.resize(questions.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= questions.size()) return;
      {
        std::lock_guard<std::mutex> lk(failure_mu);
        if (failure) return;
      }
      try {
        const PromptRecord& q = questions[i];
        result.verdicts[i] = judge_pair(judge_client, q.id, q.text, arm_a.at(q.id),
                                        arm_b.at(q.id), run_seed);
      } catch (...) {
        std::lock_guard<std::mutex> lk(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<JudgeOutcome> parsed;
  parsed.reserve(result.verdicts.size());
  for (const Verdict& v : result.verdicts) {
    if (v.outcome == JudgeOutcome::Unparsed) {
      ++result.n_unparsed;
    } else {
      parsed.push_back(v.outcome);
    }
  }
  result.n_judged = static_cast<int>(parsed.size());
  result.summary = parsed.empty() ? WinRateSummary{} : tally(parsed);
  return result;
}

void save_verdicts(const std::string& path, const std::vector<Verdict>& verdicts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write verdict log: " + path);
  for (const Verdict& v : verdicts) {
    nlohmann::json j;
    j["prompt_id"] = v.prompt_id;
    j["flipped"] = v.flipped;
    j["raw_text"] = v.raw_text;
    j["outcome"] = to_string(v.outcome);
    out << j.dump() << '\n';
  }
  if (!out.flush()) throw Error("failed writing verdict log: " + path);
}

std::vector<Verdict> load_verdicts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open verdict log: " + path);
  std::vector<Verdict> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      Verdict v;
      v.prompt_id = j.at("prompt_id").get<std::string>();
      v.flipped = j.at("flipped").get<bool>();
      v.raw_text = j.at("raw_text").get<std::string>();
      v.outcome = judge_outcome_from_string(j.at("outcome").get<std::string>());
      out.push_back(std::move(v));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dpg::judge
