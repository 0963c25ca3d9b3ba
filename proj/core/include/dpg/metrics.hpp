#pragma once

#include <vector>

#include "dpg/types.hpp"

namespace dpg {

/// Half-up rounding to one decimal place.
double round_one_decimal(double x);

/// Difference of the two win percentages. pre: 0 <= a_win, 0 <= b_win,
/// a_win + b_win <= 100.
double win_rate(double a_win, double b_win);

/// Percentage tally of a verdict multiset. pre: nonempty, every verdict
/// parsed (A, B, or Tie). Percentages are rounded half-up to one decimal,
/// then win_rate is taken over the rounded a/b components.
WinRateSummary tally(const std::vector<JudgeOutcome>& outcomes);
WinRateSummary tally(const std::vector<Verdict>& verdicts);

}  // namespace dpg
