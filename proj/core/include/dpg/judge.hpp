#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dpg/client.hpp"
#include "dpg/types.hpp"

namespace dpg::judge {

/// Fixed system message instructing an impartial pairwise comparison with
/// a bracketed verdict token.
const std::string& system_prompt();

/// System message plus one user message holding the question and both
/// answers in marked blocks. Answers are inserted verbatim, never parsed
/// back out of the rendered text.
std::vector<Message> build_judge_messages(const std::string& question,
                                          const std::string& answer_a,
                                          const std::string& answer_b);

/// Last occurrence of [[A]] / [[B]] / [[C]] wins; none -> Unparsed.
JudgeOutcome parse_verdict(std::string_view raw);

/// Deterministic position-shuffle coin for (run_seed, prompt_id).
bool flip_coin(std::uint64_t run_seed, const std::string& prompt_id);

/// temperature 0, max_tokens 512.
SamplingParams judge_sampling();

/// Judges one pair, presenting the answers in flipped order when the coin
/// says so, then unflips the outcome so it refers to the caller's A/B.
Verdict judge_pair(client::Client& judge_client, const std::string& prompt_id,
                   const std::string& question, const std::string& answer_a,
                   const std::string& answer_b, std::uint64_t run_seed);

struct EvaluationResult {
  WinRateSummary summary;        // over parsed verdicts only
  std::vector<Verdict> verdicts; // question order, one per question
  int n_judged = 0;
  int n_unparsed = 0;
};

/// Judges every question against the two arm response maps. Arms must cover
/// exactly the question id set. workers > 1 parallelizes across questions;
/// verdict order follows question order regardless of completion order.
EvaluationResult evaluate(const std::vector<PromptRecord>& questions,
                          const std::map<std::string, std::string>& arm_a,
                          const std::map<std::string, std::string>& arm_b,
                          client::Client& judge_client, std::uint64_t run_seed,
                          int workers = 1);

/// JSONL verdict log, one record per verdict, raw judge text escaped.
void save_verdicts(const std::string& path, const std::vector<Verdict>& verdicts);
std::vector<Verdict> load_verdicts(const std::string& path);

}  // namespace dpg::judge
