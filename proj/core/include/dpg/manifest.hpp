#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpg/types.hpp"

namespace dpg::harness {

struct ManifestItem {
  std::string id;
  std::string prompt;
  std::optional<std::string> derived_prompt;
  std::optional<std::string> derived_response;
  std::map<std::string, std::string> responses;  // arm token -> response text
  std::map<std::string, double> rewards;         // arm token -> score
  bool skipped = false;
  std::string error;  // set when skipped
};

struct JudgmentRecord {
  std::string arm_a;
  std::string arm_b;
  WinRateSummary summary;
  int n_unparsed = 0;
  std::string verdicts_file;
};

/// Replayable record of one run. Serialization uses sorted keys, so two
/// runs that differ only in run_id and created_utc differ in exactly those
/// bytes.
struct RunManifest {
  std::string run_id;
  std::string created_utc;
  std::string tool_version;
  std::string kind;  // "pipeline" | "judge" | "train" | "reward"
  std::string dataset_name;
  std::string dataset_digest;
  int dataset_size = 0;
  std::string sampling_note;
  std::string config_snapshot_json;  // embedded as a JSON object
  std::vector<ManifestItem> items;
  std::map<std::string, double> reward_means;
  std::vector<JudgmentRecord> judgments;
  std::vector<std::string> skips;
  std::vector<std::string> artifacts;  // extra files inside the run dir
  TokenUsage usage;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);

  /// Atomic write of {run_dir}/manifest.json (temp file + rename).
  void write(const std::filesystem::path& run_dir) const;
  static RunManifest read(const std::filesystem::path& manifest_file);
};

/// UTC timestamp plus a salted digest suffix; unique per invocation.
std::string make_run_id(const std::string& salt);
std::string utc_now_iso8601();

/// In-progress marker protocol: the marker exists from run start until the
/// manifest has been atomically written.
void touch_marker(const std::filesystem::path& run_dir);
void remove_marker(const std::filesystem::path& run_dir);
bool marker_present(const std::filesystem::path& run_dir);

}  // namespace dpg::harness
