#include "dpg/mock_server.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dpg/errors.hpp"
#include "dpg/reward.hpp"

namespace dpg::harness {

namespace {

using nlohmann::json;

MockRule::Match match_from_string(const std::string& s) {
  if (s == "contains") return MockRule::Match::Contains;
  if (s == "prefix") return MockRule::Match::Prefix;
  if (s == "any") return MockRule::Match::Any;
  throw ConfigError("mock rule: unknown match kind '" + s + "'");
}

MockRule::Reply reply_from_string(const std::string& s) {
  if (s == "fixed") return MockRule::Reply::Fixed;
  if (s == "echo") return MockRule::Reply::Echo;
  if (s == "prefer_longer") return MockRule::Reply::PreferLonger;
  if (s == "prefer_containing") return MockRule::Reply::PreferContaining;
  if (s == "fixed_score") return MockRule::Reply::FixedScore;
  throw ConfigError("mock rule: unknown reply kind '" + s + "'");
}

bool matches(const MockRule& rule, const std::string& text) {
  switch (rule.match) {
    case MockRule::Match::Contains: return text.find(rule.pattern) != std::string::npos;
    case MockRule::Match::Prefix: return text.rfind(rule.pattern, 0) == 0;
    case MockRule::Match::Any: return true;
  }
  return false;
}

std::optional<std::string> extract_block(const std::string& text, const std::string& start,
                                         const std::string& end) {
  const auto s = text.find(start);
  if (s == std::string::npos) return std::nullopt;
  const auto from = s + start.size();
  const auto e = text.find(end, from);
  if (e == std::string::npos) return std::nullopt;
  return text.substr(from, e - from);
}

std::string judge_blocks_reply(const MockRule& rule, const std::string& content) {
  const auto a = extract_block(content, "[The Start of Assistant A's Answer]\n",
                               "\n[The End of Assistant A's Answer]");
  const auto b = extract_block(content, "[The Start of Assistant B's Answer]\n",
                               "\n[The End of Assistant B's Answer]");
  if (!a || !b) return "[[C]]";
  if (rule.reply == MockRule::Reply::PreferLonger) {
    if (a->size() > b->size()) return "[[A]]";
    if (b->size() > a->size()) return "[[B]]";
    return "[[C]]";
  }
  if (a->find(rule.text) != std::string::npos) return "[[A]]";
  if (b->find(rule.text) != std::string::npos) return "[[B]]";
  return "[[C]]";
}

}  // namespace

void validate_rules(const std::vector<MockRule>& rules) {
  if (rules.empty()) throw ConfigError("mock server: rule list must not be empty");
  if (rules.back().match != MockRule::Match::Any) {
    throw ConfigError("mock server: last rule must have match kind 'any'");
  }
  for (const MockRule& r : rules) {
    if (r.match != MockRule::Match::Any && r.pattern.empty()) {
      throw ConfigError("mock server: contains/prefix rules need a nonempty pattern");
    }
  }
}

std::vector<MockRule> load_mock_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mock rules file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("mock rules file " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw ConfigError("mock rules file must hold a JSON array");
  std::vector<MockRule> rules;
  for (const json& item : j) {
    MockRule r;
    r.match = match_from_string(item.value("match", "any"));
    r.pattern = item.value("pattern", "");
    r.reply = reply_from_string(item.value("reply", "echo"));
    r.text = item.value("text", "");
    r.score = item.value("score", 0.0);
    rules.push_back(std::move(r));
  }
  validate_rules(rules);
  return rules;
}

struct MockServer::Impl {
  std::vector<MockRule> rules;
  int latency_ms = 0;

  httplib::Server server;
  std::thread thread;
  int port = 0;
  bool running = false;

  mutable std::mutex mu;
  std::vector<MockRequest> log;
  std::atomic<int> in_flight{0};
  std::atomic<int> high_water{0};

  void track_enter() {
    const int now = in_flight.fetch_add(1) + 1;
    int seen = high_water.load();
    while (now > seen && !high_water.compare_exchange_weak(seen, now)) {
    }
    if (latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms));
  }

  void track_exit() { in_flight.fetch_sub(1); }

  void push_log(MockRequest entry) {
    std::lock_guard<std::mutex> lk(mu);
    log.push_back(std::move(entry));
  }

  std::string chat_reply(const std::string& content) const {
    for (const MockRule& r : rules) {
      if (r.reply == MockRule::Reply::FixedScore) continue;
      if (!matches(r, content)) continue;
      switch (r.reply) {
        case MockRule::Reply::Fixed: return r.text;
        case MockRule::Reply::Echo: return content;
        case MockRule::Reply::PreferLonger:
        case MockRule::Reply::PreferContaining: return judge_blocks_reply(r, content);
        case MockRule::Reply::FixedScore: break;
      }
    }
    return content;  // unreachable when a trailing chat-capable Any rule exists
  }

  double score_reply(const std::string& match_text) const {
    for (const MockRule& r : rules) {
      if (r.reply != MockRule::Reply::FixedScore) continue;
      if (matches(r, match_text)) return r.score;
    }
    return 0.0;
  }
};

MockServer::MockServer(std::vector<MockRule> rules, int latency_ms)
    : impl_(std::make_unique<Impl>()) {
  validate_rules(rules);
  impl_->rules = std::move(rules);
  impl_->latency_ms = latency_ms;

  // SO_REUSEADDR only; the library default adds SO_REUSEPORT, which lets a
  // second server bind a taken port instead of failing.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });

  impl_->server.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
    impl_->track_enter();
    std::string content;
    std::string model;
    json body;
    try {
      body = json::parse(req.body);
      model = body.value("model", "");
      for (const json& m : body.at("messages")) {
        if (m.value("role", "") == "user") content = m.value("content", "");
      }
    } catch (const json::exception&) {
      impl_->push_log({"/v1/chat/completions", model, content, req.body,
                       req.get_header_value("Authorization")});
      res.status = 400;
      res.set_content(R"({"error":"bad request"})", "application/json");
      impl_->track_exit();
      return;
    }
    impl_->push_log({"/v1/chat/completions", model, content, req.body,
                     req.get_header_value("Authorization")});

    const std::string reply = impl_->chat_reply(content);
    std::int64_t prompt_tokens = 0;
    for (const json& m : body.at("messages")) {
      prompt_tokens += reward::count_tokens(m.value("content", ""));
    }
    json out;
    out["id"] = "mock-chat";
    out["object"] = "chat.completion";
    out["model"] = model;
    out["choices"] = json::array(
        {{{"index", 0},
          {"message", {{"role", "assistant"}, {"content", reply}}},
          {"finish_reason", "stop"}}});
    out["usage"] = {{"prompt_tokens", prompt_tokens},
                    {"completion_tokens", reward::count_tokens(reply)},
                    {"total_tokens", prompt_tokens + reward::count_tokens(reply)}};
    res.set_content(out.dump(), "application/json");
    impl_->track_exit();
  });

  impl_->server.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
    impl_->track_enter();
    std::string prompt;
    std::string response;
    try {
      const json body = json::parse(req.body);
      prompt = body.value("prompt", "");
      response = body.value("response", "");
    } catch (const json::exception&) {
      impl_->push_log({"/score", "", "", req.body, req.get_header_value("Authorization")});
      res.status = 400;
      res.set_content(R"({"error":"bad request"})", "application/json");
      impl_->track_exit();
      return;
    }
    impl_->push_log({"/score", "", prompt, req.body, req.get_header_value("Authorization")});
    json out;
    out["score"] = impl_->score_reply(prompt + "\n" + response);
    res.set_content(out.dump(), "application/json");
    impl_->track_exit();
  });

  impl_->server.Get("/__log", [this](const httplib::Request&, httplib::Response& res) {
    json out;
    {
      std::lock_guard<std::mutex> lk(impl_->mu);
      out["count"] = impl_->log.size();
      auto arr = json::array();
      for (const MockRequest& r : impl_->log) {
        arr.push_back({{"path", r.path},
                       {"model", r.model},
                       {"last_user", r.last_user},
                       {"body", r.body}});
      }
      out["requests"] = arr;
    }
    out["max_in_flight"] = impl_->high_water.load();
    res.set_content(out.dump(), "application/json");
  });

  impl_->server.Post("/__reset", [this](const httplib::Request&, httplib::Response& res) {
    reset_log();
    res.set_content(R"({"ok":true})", "application/json");
  });
}

MockServer::~MockServer() { stop(); }

int MockServer::start(int port) {
  if (impl_->running) throw Error("mock server already running");
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    if (impl_->port <= 0) throw Error("mock server: could not bind an ephemeral port");
  } else {
    if (!impl_->server.bind_to_port("127.0.0.1", port)) {
      throw Error("mock server: port " + std::to_string(port) + " is unavailable");
    }
    impl_->port = port;
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  impl_->running = true;
  return impl_->port;
}

void MockServer::stop() {
  if (!impl_->running) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->running = false;
}

int MockServer::port() const { return impl_->port; }

std::string MockServer::base_url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

std::vector<MockRequest> MockServer::requests() const {
  std::lock_guard<std::mutex> lk(impl_->mu);
  return impl_->log;
}

int MockServer::request_count() const {
  std::lock_guard<std::mutex> lk(impl_->mu);
  return static_cast<int>(impl_->log.size());
}

int MockServer::max_in_flight() const { return impl_->high_water.load(); }

void MockServer::reset_log() {
  std::lock_guard<std::mutex> lk(impl_->mu);
  impl_->log.clear();
  impl_->high_water.store(0);
}

}  // namespace dpg::harness
