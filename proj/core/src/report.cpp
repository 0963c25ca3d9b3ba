#include "dpg/report.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dpg/errors.hpp"
#include "dpg/reward.hpp"

namespace dpg::harness {

namespace {

using nlohmann::json;

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string mean2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

/// Reference arm for reward deltas, most derived first.
const char* kReferenceOrder[] = {"OD+ICL", "BPO-file+ICL", "OD", "BPO-file", "OP"};

std::string pick_reference(const std::map<std::string, double>& means) {
  for (const char* tok : kReferenceOrder) {
    if (means.count(tok) != 0) return tok;
  }
  return means.begin()->first;
}

std::vector<std::string> ordered_arms(const std::map<std::string, double>& means) {
  std::vector<std::string> out;
  for (const char* tok : kReferenceOrder) {
    if (means.count(tok) != 0) out.emplace_back(tok);
  }
  for (const auto& [tok, _] : means) {
    if (std::find(out.begin(), out.end(), tok) == out.end()) out.push_back(tok);
  }
  return out;
}

std::map<std::string, double> means_over_ids(const RunManifest& m,
                                             const std::set<std::string>& ids) {
  std::map<std::string, double> sums;
  std::map<std::string, int> counts;
  for (const ManifestItem& item : m.items) {
    if (item.skipped || ids.count(item.id) == 0) continue;
    for (const auto& [tok, value] : item.rewards) {
      sums[tok] += value;
      counts[tok] += 1;
    }
  }
  std::map<std::string, double> out;
  for (const auto& [tok, sum] : sums) out[tok] = sum / counts.at(tok);
  return out;
}

void render_reward_table(std::ostringstream& out, const std::map<std::string, double>& means) {
  const std::string ref = pick_reference(means);
  out << "  arm            mean    vs " << ref << "\n";
  for (const std::string& tok : ordered_arms(means)) {
    out << "  " << tok;
    for (std::size_t pad = tok.size(); pad < 15; ++pad) out << ' ';
    out << mean2(means.at(tok));
    if (tok != ref) out << "    " << reward::format_delta(means.at(ref), means.at(tok));
    out << "\n";
  }
}

std::set<std::string> scored_ids(const RunManifest& m) {
  std::set<std::string> out;
  for (const ManifestItem& item : m.items) {
    if (!item.skipped && !item.rewards.empty()) out.insert(item.id);
  }
  return out;
}

}  // namespace

std::string render_report(const std::vector<RunManifest>& manifests) {
  if (manifests.empty()) throw ConfigError("report: no manifests");
  std::ostringstream out;

  for (const RunManifest& m : manifests) {
    out << "== run " << m.run_id << " | kind " << m.kind << " | dataset " << m.dataset_name
        << " (n=" << m.dataset_size << ") ==\n";
    if (!m.skips.empty()) out << "  skipped prompts: " << m.skips.size() << "\n";

    if (!m.judgments.empty()) {
      out << "pairwise judgments (A win & B win & tie, %):\n";
      for (const JudgmentRecord& rec : m.judgments) {
        out << "  " << rec.arm_a << " vs " << rec.arm_b << "   " << pct(rec.summary.a_win)
            << " & " << pct(rec.summary.b_win) << " & " << pct(rec.summary.tie)
            << "   win rate " << pct(rec.summary.win_rate) << "   n=" << rec.summary.n
            << " unparsed=" << rec.n_unparsed << "\n";
      }
    }

    if (!m.reward_means.empty()) {
      out << "reward means:\n";
      render_reward_table(out, m.reward_means);
    }
    out << "\n";
  }

  std::vector<const RunManifest*> with_rewards;
  for (const RunManifest& m : manifests) {
    if (!scored_ids(m).empty()) with_rewards.push_back(&m);
  }
  if (with_rewards.size() >= 2) {
    std::set<std::string> common = scored_ids(*with_rewards.front());
    for (std::size_t i = 1; i < with_rewards.size(); ++i) {
      const std::set<std::string> ids = scored_ids(*with_rewards[i]);
      std::set<std::string> next;
      std::set_intersection(common.begin(), common.end(), ids.begin(), ids.end(),
                            std::inserter(next, next.begin()));
      common.swap(next);
    }
    if (common.empty()) {
      throw DataError("report: manifests share no scored prompt ids");
    }
    out << "== reward comparison over " << common.size() << " common prompts ==\n";
    for (const RunManifest* m : with_rewards) {
      out << "run " << m->run_id << " (dataset " << m->dataset_name << "):\n";
      render_reward_table(out, means_over_ids(*m, common));
    }
  }

  return out.str();
}

std::string report_json(const std::vector<RunManifest>& manifests) {
  if (manifests.empty()) throw ConfigError("report: no manifests");
  json out;
  auto runs = json::array();
  for (const RunManifest& m : manifests) {
    json r;
    r["run_id"] = m.run_id;
    r["kind"] = m.kind;
    r["dataset"] = m.dataset_name;
    r["n"] = m.dataset_size;
    r["skips"] = m.skips.size();
    auto judgments = json::array();
    for (const JudgmentRecord& rec : m.judgments) {
      judgments.push_back({{"arm_a", rec.arm_a},
                           {"arm_b", rec.arm_b},
                           {"a_win", rec.summary.a_win},
                           {"b_win", rec.summary.b_win},
                           {"tie", rec.summary.tie},
                           {"win_rate", rec.summary.win_rate},
                           {"n", rec.summary.n},
                           {"n_unparsed", rec.n_unparsed}});
    }
    r["judgments"] = judgments;
    r["reward_means"] = m.reward_means;
    runs.push_back(std::move(r));
  }
  out["runs"] = runs;

  std::vector<const RunManifest*> with_rewards;
  for (const RunManifest& m : manifests) {
    if (!scored_ids(m).empty()) with_rewards.push_back(&m);
  }
  if (with_rewards.size() >= 2) {
    std::set<std::string> common = scored_ids(*with_rewards.front());
    for (std::size_t i = 1; i < with_rewards.size(); ++i) {
      const std::set<std::string> ids = scored_ids(*with_rewards[i]);
      std::set<std::string> next;
      std::set_intersection(common.begin(), common.end(), ids.begin(), ids.end(),
                            std::inserter(next, next.begin()));
      common.swap(next);
    }
    if (common.empty()) {
      throw DataError("report: manifests share no scored prompt ids");
    }
    json cross;
    cross["common_prompts"] = common.size();
    auto per_run = json::array();
    for (const RunManifest* m : with_rewards) {
      per_run.push_back({{"run_id", m->run_id}, {"reward_means", means_over_ids(*m, common)}});
    }
    cross["runs"] = per_run;
    out["cross_run"] = cross;
  }
  return out.dump(2) + "\n";
}

}  // namespace dpg::harness
