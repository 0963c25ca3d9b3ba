#include "dpg/client.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dpg/hashing.hpp"

namespace dpg::client {

namespace {

using nlohmann::json;

json exchange_to_json(const ChatExchange& ex) {
  json j;
  j["kind"] = "chat";
  j["endpoint"] = ex.endpoint;
  j["model"] = ex.model;
  auto msgs = json::array();
  for (const Message& m : ex.messages) {
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  j["messages"] = msgs;
  json p;
  p["temperature"] = ex.params.temperature;
  p["top_p"] = ex.params.top_p;
  p["max_tokens"] = ex.params.max_tokens;
  if (ex.params.seed) p["seed"] = *ex.params.seed;
  j["params"] = p;
  j["response_text"] = ex.response_text;
  j["cache_key"] = ex.cache_key;
  j["latency_ms"] = ex.latency_ms;
  j["usage"] = {{"prompt_tokens", ex.usage.prompt_tokens},
                {"completion_tokens", ex.usage.completion_tokens}};
  return j;
}

ChatExchange exchange_from_json(const json& j) {
  ChatExchange ex;
  ex.endpoint = j.at("endpoint").get<std::string>();
  ex.model = j.at("model").get<std::string>();
  for (const json& m : j.at("messages")) {
    ex.messages.push_back(
        {role_from_string(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  }
  const json& p = j.at("params");
  ex.params.temperature = p.at("temperature").get<double>();
  ex.params.top_p = p.at("top_p").get<double>();
  ex.params.max_tokens = p.at("max_tokens").get<int>();
  if (p.contains("seed")) ex.params.seed = p.at("seed").get<std::int64_t>();
  ex.response_text = j.at("response_text").get<std::string>();
  ex.cache_key = j.at("cache_key").get<std::string>();
  ex.latency_ms = j.at("latency_ms").get<std::int64_t>();
  ex.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<std::int64_t>();
  ex.usage.completion_tokens = j.at("usage").at("completion_tokens").get<std::int64_t>();
  return ex;
}

std::string score_request_canonical(const std::string& endpoint, const std::string& prompt,
                                    const std::string& response) {
  json j;
  j["endpoint"] = endpoint;
  j["prompt"] = prompt;
  j["response"] = response;
  j["route"] = "score";
  return j.dump();
}

}  // namespace

CacheCorruptError::CacheCorruptError(const std::string& what, std::string key)
    : Error(what), key_(std::move(key)) {}

void validate(const EndpointConfig& cfg) {
  if (cfg.base_url.empty()) throw ConfigError("endpoint: base_url must not be empty");
  if (cfg.base_url.rfind("http://", 0) != 0 && cfg.base_url.rfind("https://", 0) != 0) {
    throw ConfigError("endpoint: base_url must start with http:// or https://");
  }
  if (cfg.model.empty()) throw ConfigError("endpoint: model must not be empty");
  if (cfg.timeout_s < 1) throw ConfigError("endpoint: timeout_s must be >= 1");
  if (cfg.max_retries < 0) throw ConfigError("endpoint: max_retries must be >= 0");
  if (cfg.max_in_flight < 1) throw ConfigError("endpoint: max_in_flight must be >= 1");
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) throw ConfigError("cache: directory must not be empty");
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  if (key.size() < 3) throw ConfigError("cache: key too short: " + key);
  return dir_ / key.substr(0, 2) / (key + ".record");
}

std::optional<std::string> ResponseCache::lookup_raw(const std::string& key) const {
  const std::filesystem::path p = path_for(key);
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void ResponseCache::store_raw(const std::string& key, const std::string& record) {
  const std::filesystem::path p = path_for(key);
  std::error_code ec;
  std::filesystem::create_directories(p.parent_path(), ec);
  if (std::filesystem::exists(p)) return;  // first write wins
  static std::atomic<std::uint64_t> counter{0};
  std::ostringstream tmp_name;
  tmp_name << p.filename().string() << ".tmp." << std::this_thread::get_id() << "."
           << counter.fetch_add(1);
  const std::filesystem::path tmp = p.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cache: cannot write " + tmp.string());
    out << record;
    if (!out.flush()) throw Error("cache: failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, p, ec);
  if (ec) std::filesystem::remove(tmp, ec);
}

std::optional<ChatExchange> ResponseCache::lookup(const std::string& key) const {
  const std::optional<std::string> raw = lookup_raw(key);
  if (!raw) return std::nullopt;
  try {
    const json j = json::parse(*raw);
    if (j.at("kind").get<std::string>() != "chat") {
      throw DataError("record kind is not chat");
    }
    return exchange_from_json(j);
  } catch (const std::exception& e) {
    throw CacheCorruptError("cache: corrupt record for key " + key + ": " + e.what(), key);
  }
}

void ResponseCache::store(const ChatExchange& exchange) {
  store_raw(exchange.cache_key, exchange_to_json(exchange).dump());
}

void Client::Semaphore::acquire() {
  std::unique_lock<std::mutex> lk(mu_);
  cv_.wait(lk, [this] { return slots_ > 0; });
  --slots_;
}

void Client::Semaphore::release() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    ++slots_;
  }
  cv_.notify_one();
}

Client::Client(EndpointConfig cfg, std::shared_ptr<ResponseCache> cache)
    : cfg_(std::move(cfg)), cache_(std::move(cache)), sem_(cfg_.max_in_flight) {
  validate(cfg_);
}

void Client::record_touch(const std::string& key) {
  std::lock_guard<std::mutex> lk(mu_);
  touched_.push_back(key);
}

void Client::usage_add(const TokenUsage& usage) {
  std::lock_guard<std::mutex> lk(mu_);
  prompt_tokens_ += usage.prompt_tokens;
  completion_tokens_ += usage.completion_tokens;
}

TokenUsage Client::usage_totals() const {
  std::lock_guard<std::mutex> lk(mu_);
  return {prompt_tokens_, completion_tokens_};
}

std::vector<std::string> Client::drain_touched_keys() {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<std::string> out;
  out.swap(touched_);
  return out;
}

Client::HttpResult Client::post_json(const std::string& path, const std::string& body) {
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    const char* secret = std::getenv(cfg_.api_key_env.c_str());
    if (secret == nullptr || *secret == '\0') {
      throw ConfigError("environment variable '" + cfg_.api_key_env + "' is not set");
    }
    // The secret lives only in this request header, never in errors or logs.
    headers.emplace("Authorization", std::string("Bearer ") + secret);
  }

  thread_local std::mt19937_64 jitter_rng{std::random_device{}()};

  struct Slot {
    Semaphore& sem;
    explicit Slot(Semaphore& s) : sem(s) { sem.acquire(); }
    ~Slot() { sem.release(); }
  } slot(sem_);

  int attempt = 0;
  for (;;) {
    ++attempt;
    httplib::Client http(cfg_.base_url);
    http.set_connection_timeout(cfg_.timeout_s, 0);
    http.set_read_timeout(cfg_.timeout_s, 0);
    http.set_write_timeout(cfg_.timeout_s, 0);

    const auto t0 = std::chrono::steady_clock::now();
    httplib::Result res = http.Post(path, headers, body, "application/json");
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();

    const bool retries_left = attempt <= cfg_.max_retries;
    auto backoff = [&] {
      const double cap = retry_.max_delay_s;
      const double ceiling =
          std::min(cap, retry_.base_delay_s * std::pow(retry_.factor, attempt - 1));
      const double u = static_cast<double>(jitter_rng() >> 11) * 0x1.0p-53;
      std::this_thread::sleep_for(std::chrono::duration<double>(u * ceiling));
    };

    if (!res) {
      if (retries_left) {
        backoff();
        continue;
      }
      throw TimeoutError("POST " + path + " failed after " + std::to_string(attempt) +
                         " attempts: " + httplib::to_string(res.error()));
    }
    if (res->status == 200) return {res->body, latency};
    if (res->status == 401 || res->status == 403) {
      throw AuthError("POST " + path + ": authentication rejected (status " +
                      std::to_string(res->status) + ")");
    }
    if (res->status == 429 || res->status >= 500) {
      if (retries_left) {
        backoff();
        continue;
      }
      const std::string what = "POST " + path + ": status " + std::to_string(res->status) +
                               " after " + std::to_string(attempt) + " attempts";
      if (res->status == 429) throw RateLimitedError(what);
      throw ServerError(what);
    }
    throw TransportError("POST " + path + ": unexpected status " +
                         std::to_string(res->status));
  }
}

ChatExchange Client::complete(const std::vector<Message>& messages,
                              const SamplingParams& params) {
  if (messages.empty()) throw ConfigError("complete: no messages");
  const std::string key = dpg::cache_key(cfg_.base_url, cfg_.model, messages, params);
  record_touch(key);
  if (cache_) {
    if (auto hit = cache_->lookup(key)) {
      usage_add(hit->usage);
      return *hit;
    }
  }

  json body;
  body["model"] = cfg_.model;
  auto msgs = json::array();
  for (const Message& m : messages) {
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  body["messages"] = msgs;
  body["temperature"] = params.temperature;
  body["top_p"] = params.top_p;
  body["max_tokens"] = params.max_tokens;
  if (params.seed) body["seed"] = *params.seed;

  const HttpResult res = post_json("/v1/chat/completions", body.dump());

  ChatExchange ex;
  ex.endpoint = cfg_.base_url;
  ex.model = cfg_.model;
  ex.messages = messages;
  ex.params = params;
  ex.cache_key = key;
  ex.latency_ms = res.latency_ms;
  try {
    const json j = json::parse(res.body);
    ex.response_text =
        j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage")) {
      const json& u = j.at("usage");
      ex.usage.prompt_tokens = u.value("prompt_tokens", std::int64_t{0});
      ex.usage.completion_tokens = u.value("completion_tokens", std::int64_t{0});
    }
  } catch (const json::exception& e) {
    throw MalformedResponseError(std::string("chat response did not parse: ") + e.what());
  }

  if (cache_) cache_->store(ex);
  usage_add(ex.usage);
  return ex;
}

double Client::score(const std::string& prompt, const std::string& response) {
  const std::string key =
      short_digest(score_request_canonical(cfg_.base_url, prompt, response));
  record_touch(key);
  if (cache_) {
    if (auto raw = cache_->lookup_raw(key)) {
      try {
        const json j = json::parse(*raw);
        if (j.at("kind").get<std::string>() != "score") throw DataError("not a score record");
        return j.at("score").get<double>();
      } catch (const std::exception& e) {
        throw CacheCorruptError("cache: corrupt record for key " + key + ": " + e.what(), key);
      }
    }
  }

  json body;
  body["model"] = cfg_.model;
  body["prompt"] = prompt;
  body["response"] = response;
  const HttpResult res = post_json("/score", body.dump());

  double value = 0.0;
  try {
    const json j = json::parse(res.body);
    if (!j.at("score").is_number()) throw DataError("score is not a number");
    value = j.at("score").get<double>();
  } catch (const std::exception& e) {
    throw MalformedResponseError(std::string("score response did not parse: ") + e.what());
  }

  // Non-finite values are returned for the caller to reject, never cached.
  if (cache_ && std::isfinite(value)) {
    json record;
    record["kind"] = "score";
    record["prompt"] = prompt;
    record["response"] = response;
    record["score"] = value;
    cache_->store_raw(key, record.dump());
  }
  return value;
}

}  // namespace dpg::client
