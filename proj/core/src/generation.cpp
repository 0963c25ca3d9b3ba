#include "dpg/generation.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace dpg::gen {

namespace {

std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && issp(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// Single-pass placeholder substitution; substituted text is never rescanned.
std::string substitute(const std::string& template_text,
                       const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(template_text.size());
  std::size_t pos = 0;
  while (pos < template_text.size()) {
    std::size_t best = std::string::npos;
    const std::pair<std::string, std::string>* hit = nullptr;
    for (const auto& kv : values) {
      const auto found = template_text.find(kv.first, pos);
      if (found < best) {
        best = found;
        hit = &kv;
      }
    }
    if (hit == nullptr) break;
    out.append(template_text, pos, best - pos);
    out.append(hit->second);
    pos = best + hit->first.size();
  }
  out.append(template_text, pos, std::string::npos);
  return out;
}

}  // namespace

const std::string& DpgTemplate::default_instruction() {
  static const std::string text =
      "### Instruction: Please provide a more comprehensive, easily understandable, and "
      "answerable version of the following question. Ensure that necessary contextual "
      "information is added during the rewrite, but do not limit the understanding and "
      "response to the question. Avoid confining the question to just a few aspects, "
      "allowing the responder to think from multiple angles. Only return the refined "
      "question and do not explain. Here is my original question:";
  return text;
}

DpgTemplate::DpgTemplate() : instruction_text(default_instruction()) {}

DpgTemplate DpgTemplate::from_file(const std::string& path) {
  DpgTemplate t;
  std::string text = read_file(path, "derivation instruction");
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  if (trim(text).empty()) throw ConfigError("derivation instruction file is empty: " + path);
  t.instruction_text = std::move(text);
  return t;
}

std::string assemble_derivation_request(const DpgTemplate& tmpl, const PromptRecord& x) {
  if (trim(tmpl.instruction_text).empty()) {
    throw ConfigError("derivation template has an empty instruction");
  }
  const std::string text = trim(x.text);
  if (text.empty()) throw DataError("prompt '" + x.id + "' is empty after trimming");
  return tmpl.instruction_text + tmpl.separator + tmpl.question_prefix + text;
}

const std::string& icl_template() {
  static const std::string text =
      "### Question: {derived}.\n"
      "### Response: {response}.\n"
      "\n"
      "Given the above Question and Response as an example, emulate the way it responds to "
      "the question to reply to the following question:\n"
      "\n"
      "### Question: {original}.";
  return text;
}

const std::string& icl_bridge_sentence() {
  static const std::string text =
      "Given the above Question and Response as an example, emulate the way it responds to "
      "the question to reply to the following question:";
  return text;
}

std::string load_icl_template(const std::string& path) {
  std::string text = read_file(path, "ICL template");
  while (!text.empty() && text.back() == '\n') text.pop_back();
  for (const char* ph : {"{original}", "{derived}", "{response}"}) {
    if (text.find(ph) == std::string::npos) {
      throw ConfigError("ICL template missing placeholder " + std::string(ph) + ": " + path);
    }
  }
  return text;
}

IclQuery build_icl_query(const PromptRecord& x, const DerivedPrompt& derived,
                         const std::string& derived_response) {
  return build_icl_query(icl_template(), x, derived, derived_response);
}

IclQuery build_icl_query(const std::string& template_text, const PromptRecord& x,
                         const DerivedPrompt& derived, const std::string& derived_response) {
  IclQuery q;
  q.original = trim(x.text);
  q.derived = trim(derived.text);
  q.derived_response = trim(derived_response);
  if (q.original.empty()) throw DataError("ICL query: original prompt is empty");
  if (q.derived.empty()) throw DataError("ICL query: derived prompt is empty");
  if (q.derived_response.empty()) throw DataError("ICL query: derived response is empty");
  q.rendered = substitute(template_text, {{"{original}", q.original},
                                          {"{derived}", q.derived},
                                          {"{response}", q.derived_response}});
  return q;
}

std::string strip_derivation_artifacts(std::string text) {
  text = trim(std::move(text));

  auto strip_quotes = [](std::string s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
      s = trim(s.substr(1, s.size() - 2));
    }
    return s;
  };
  text = strip_quotes(std::move(text));

  static const std::string kPrefix = "### Question:";
  const auto nl = text.find('\n');
  if (nl != std::string::npos) {
    const std::string first = trim(text.substr(0, nl));
    const std::string lowered = to_lower(first);
    if (first == kPrefix ||
        (lowered.size() >= 9 && lowered.compare(lowered.size() - 9, 9, "question:") == 0)) {
      text = trim(text.substr(nl + 1));
    }
  }
  if (text.compare(0, kPrefix.size(), kPrefix) == 0) {
    text = trim(text.substr(kPrefix.size()));
  }
  return strip_quotes(std::move(text));
}

DerivedPrompt derive_remote(client::Client& cl, const DpgTemplate& tmpl, const PromptRecord& x,
                            const SamplingParams& params) {
  const std::string request = assemble_derivation_request(tmpl, x);
  const ChatExchange ex = cl.complete({{Role::User, request}}, params);
  std::string text = strip_derivation_artifacts(ex.response_text);
  if (text.empty()) {
    throw EmptyDerivationError("model returned an empty derivation for prompt '" + x.id + "'");
  }
  return DerivedPrompt{x.id, std::move(text), 0, Producer::RemoteModel};
}

std::string respond(client::Client& cl, const std::string& prompt_text,
                    const SamplingParams& params) {
  if (trim(prompt_text).empty()) throw DataError("respond: empty prompt text");
  const ChatExchange ex = cl.complete({{Role::User, prompt_text}}, params);
  if (trim(ex.response_text).empty()) {
    throw EmptyResponseError("model returned an empty response");
  }
  return ex.response_text;
}

std::string respond_icl(client::Client& cl, const IclQuery& query, const SamplingParams& params) {
  if (query.rendered.empty()) throw DataError("respond_icl: query was never rendered");
  return respond(cl, query.rendered, params);
}

}  // namespace dpg::gen
