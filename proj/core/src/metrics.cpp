#include "dpg/metrics.hpp"

#include <cmath>

#include "dpg/errors.hpp"

namespace dpg {

std::string to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  throw Error("unknown role");
}

Role role_from_string(const std::string& s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw DataError("unknown role: " + s);
}

std::string to_string(JudgeOutcome outcome) {
  switch (outcome) {
    case JudgeOutcome::A: return "A";
    case JudgeOutcome::B: return "B";
    case JudgeOutcome::Tie: return "Tie";
    case JudgeOutcome::Unparsed: return "Unparsed";
  }
  throw Error("unknown judge outcome");
}

JudgeOutcome judge_outcome_from_string(const std::string& s) {
  if (s == "A") return JudgeOutcome::A;
  if (s == "B") return JudgeOutcome::B;
  if (s == "Tie") return JudgeOutcome::Tie;
  if (s == "Unparsed") return JudgeOutcome::Unparsed;
  throw DataError("unknown judge outcome: " + s);
}

double round_one_decimal(double x) {
  if (!std::isfinite(x)) throw ConfigError("round_one_decimal: non-finite input");
  return std::floor(x * 10.0 + 0.5) / 10.0;
}

double win_rate(double a_win, double b_win) {
  if (!std::isfinite(a_win) || !std::isfinite(b_win)) {
    throw ConfigError("win_rate: non-finite input");
  }
  if (a_win < 0.0 || b_win < 0.0) throw ConfigError("win_rate: negative percentage");
  if (a_win + b_win > 100.0 + 1e-9) throw ConfigError("win_rate: percentages exceed 100");
  return a_win - b_win;
}

WinRateSummary tally(const std::vector<JudgeOutcome>& outcomes) {
  if (outcomes.empty()) throw DataError("tally: empty verdict list");
  int a = 0, b = 0, t = 0;
  for (JudgeOutcome o : outcomes) {
    switch (o) {
      case JudgeOutcome::A: ++a; break;
      case JudgeOutcome::B: ++b; break;
      case JudgeOutcome::Tie: ++t; break;
      case JudgeOutcome::Unparsed: throw DataError("tally: unparsed verdict present");
    }
  }
  const double n = static_cast<double>(outcomes.size());
  WinRateSummary s;
  s.n = static_cast<int>(outcomes.size());
  s.a_win = round_one_decimal(100.0 * a / n);
  s.b_win = round_one_decimal(100.0 * b / n);
  s.tie = round_one_decimal(100.0 * t / n);
  // Difference taken directly: per-component half-up rounding may push the
  // rounded a/b sum a hair past 100, which is fine for a partition tally.
  s.win_rate = s.a_win - s.b_win;
  return s;
}

WinRateSummary tally(const std::vector<Verdict>& verdicts) {
  std::vector<JudgeOutcome> outcomes;
  outcomes.reserve(verdicts.size());
  for (const Verdict& v : verdicts) outcomes.push_back(v.outcome);
  return tally(outcomes);
}

}  // namespace dpg
