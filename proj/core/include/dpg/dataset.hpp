#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dpg/types.hpp"

namespace dpg::harness {

/// JSONL loader: one {"prompt": ..., "id"?: ...} object per line. Missing
/// ids become "{file stem}-{line}". Errors carry the 1-based line number;
/// duplicate ids and blank prompts are rejected.
std::vector<PromptRecord> load_dataset(const std::filesystem::path& path);

/// JSONL loader for externally refined prompts: {"id": ..., "refined_prompt": ...}.
std::map<std::string, std::string> load_refined_prompts(const std::filesystem::path& path);

/// Digest over the (id, prompt) sequence; independent of file formatting.
std::string dataset_digest(const std::vector<PromptRecord>& records);

}  // namespace dpg::harness
