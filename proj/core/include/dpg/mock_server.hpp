#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dpg/types.hpp"

namespace dpg::harness {

/// One deterministic response rule. Chat requests match against the last
/// user message; /score requests match against "prompt\nresponse" and
/// consider only FixedScore rules. First matching rule wins; the list must
/// end with a Match::Any rule.
struct MockRule {
  enum class Match { Contains, Prefix, Any };
  enum class Reply { Fixed, Echo, PreferLonger, PreferContaining, FixedScore };

  Match match = Match::Any;
  std::string pattern;
  Reply reply = Reply::Echo;
  std::string text;  // Fixed payload, or the token for PreferContaining
  double score = 0.0;
};

void validate_rules(const std::vector<MockRule>& rules);

/// JSON array of {"match", "pattern"?, "reply", "text"?, "score"?}.
std::vector<MockRule> load_mock_rules(const std::filesystem::path& path);

struct MockRequest {
  std::string path;
  std::string model;
  std::string last_user;
  std::string body;
  std::string authorization;
};

/// In-process OpenAI-style endpoint for tests and offline runs. Serves
/// /v1/chat/completions and /score, keeps an ordered request log, and
/// tracks the concurrency high-water mark. /__log returns the log as JSON;
/// /__reset clears it.
class MockServer {
 public:
  explicit MockServer(std::vector<MockRule> rules, int latency_ms = 0);
  ~MockServer();

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds 127.0.0.1 and serves on a background thread. port 0 picks a free
  /// ephemeral port; a taken port is an Error. Returns the bound port.
  int start(int port = 0);
  void stop();

  int port() const;
  std::string base_url() const;

  std::vector<MockRequest> requests() const;
  int request_count() const;
  int max_in_flight() const;
  void reset_log();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dpg::harness
