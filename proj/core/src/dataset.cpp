#include "dpg/dataset.hpp"

#include <cctype>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dpg/errors.hpp"
#include "dpg/hashing.hpp"

namespace dpg::harness {

namespace {

using nlohmann::json;

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())) != 0) {
    s.erase(s.begin());
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())) != 0) s.pop_back();
  return s;
}

json parse_line(const std::filesystem::path& path, const std::string& line, int line_no) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw DataError("record is not a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
  }
}

}  // namespace

std::vector<PromptRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path.string());
  const std::string stem = path.stem().string();

  std::vector<PromptRecord> out;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const json j = parse_line(path, line, line_no);

    PromptRecord rec;
    if (!j.contains("prompt") || !j.at("prompt").is_string()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": missing prompt field");
    }
    rec.text = j.at("prompt").get<std::string>();
    if (trim(rec.text).empty()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": blank prompt");
    }
    if (j.contains("id")) {
      if (!j.at("id").is_string() || j.at("id").get<std::string>().empty()) {
        throw DataError(path.string() + ": line " + std::to_string(line_no) + ": invalid id");
      }
      rec.id = j.at("id").get<std::string>();
    } else {
      rec.id = stem + "-" + std::to_string(line_no);
    }
    if (!seen.insert(rec.id).second) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": duplicate id '" + rec.id + "'");
    }
    rec.source = stem;
    for (const auto& [key, value] : j.items()) {
      if (key == "id" || key == "prompt") continue;
      if (value.is_string()) rec.meta[key] = value.get<std::string>();
    }
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw DataError("dataset is empty: " + path.string());
  return out;
}

std::map<std::string, std::string> load_refined_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open refined prompt file: " + path.string());

  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const json j = parse_line(path, line, line_no);
    if (!j.contains("id") || !j.at("id").is_string()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": missing id field");
    }
    if (!j.contains("refined_prompt") || !j.at("refined_prompt").is_string()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": missing refined_prompt field");
    }
    const std::string id = j.at("id").get<std::string>();
    const std::string refined = j.at("refined_prompt").get<std::string>();
    if (trim(refined).empty()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": blank refined_prompt");
    }
    if (!out.emplace(id, refined).second) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": duplicate id '" + id + "'");
    }
  }
  if (out.empty()) throw DataError("refined prompt file is empty: " + path.string());
  return out;
}

std::string dataset_digest(const std::vector<PromptRecord>& records) {
  json arr = json::array();
  for (const PromptRecord& r : records) arr.push_back({{"id", r.id}, {"prompt", r.text}});
  return short_digest(arr.dump());
}

}  // namespace dpg::harness
