#pragma once

#include <string>

#include "dpg/client.hpp"
#include "dpg/errors.hpp"
#include "dpg/types.hpp"

namespace dpg::gen {

// Model returned nothing usable as a derived prompt.
class EmptyDerivationError : public Error {
 public:
  using Error::Error;
};

// Model returned an empty response text.
class EmptyResponseError : public Error {
 public:
  using Error::Error;
};

/// Instruction block prepended to an original prompt so the model emits a
/// rewritten question instead of answering it.
struct DpgTemplate {
  std::string instruction_text;
  std::string separator = "\n\n";
  std::string question_prefix = "### Question: ";

  DpgTemplate();

  static const std::string& default_instruction();
  /// Whole file becomes instruction_text (trailing newline trimmed);
  /// separator and prefix keep their defaults.
  static DpgTemplate from_file(const std::string& path);
};

/// instruction + separator + question_prefix + trimmed original text.
/// pre: instruction nonempty, x.text nonempty after trimming.
std::string assemble_derivation_request(const DpgTemplate& tmpl, const PromptRecord& x);

/// One-shot in-context query: the derived pair (x', y') is presented as a
/// worked example, then the original question is asked again.
struct IclQuery {
  std::string original;
  std::string derived;
  std::string derived_response;
  std::string rendered;
};

/// Built-in ICL template with {original}, {derived}, {response} placeholders.
const std::string& icl_template();
/// The sentence bridging the example block and the re-asked question.
const std::string& icl_bridge_sentence();
/// Loads an override template; every placeholder must appear at least once.
std::string load_icl_template(const std::string& path);

IclQuery build_icl_query(const PromptRecord& x, const DerivedPrompt& derived,
                         const std::string& derived_response);
IclQuery build_icl_query(const std::string& template_text, const PromptRecord& x,
                         const DerivedPrompt& derived, const std::string& derived_response);

/// Cleans raw model output into a derived prompt: trims, strips one pair of
/// surrounding quotes, drops a leading line equal to "### Question:" or
/// ending in "question:" (case-insensitive), and strips an inline leading
/// "### Question:" prefix.
std::string strip_derivation_artifacts(std::string text);

/// Sends the assembled derivation request as a single user message and
/// post-processes the reply. Empty result after cleanup raises
/// EmptyDerivationError.
DerivedPrompt derive_remote(client::Client& cl, const DpgTemplate& tmpl, const PromptRecord& x,
                            const SamplingParams& params);

/// Plain single-message completion; empty reply raises EmptyResponseError.
std::string respond(client::Client& cl, const std::string& prompt_text,
                    const SamplingParams& params);

/// Sends query.rendered as a single user message.
std::string respond_icl(client::Client& cl, const IclQuery& query, const SamplingParams& params);

}  // namespace dpg::gen
