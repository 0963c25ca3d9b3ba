#pragma once

#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dpg/errors.hpp"
#include "dpg/types.hpp"

namespace dpg::client {

class TransportError : public Error {
 public:
  using Error::Error;
};

// 401/403. Never retried.
class AuthError : public TransportError {
 public:
  using TransportError::TransportError;
};

// 429 after retries were exhausted.
class RateLimitedError : public TransportError {
 public:
  using TransportError::TransportError;
};

// Connect/read/write failure after retries were exhausted.
class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

// 5xx after retries were exhausted.
class ServerError : public TransportError {
 public:
  using TransportError::TransportError;
};

// 200 whose body does not parse into the expected shape.
class MalformedResponseError : public TransportError {
 public:
  using TransportError::TransportError;
};

class CacheCorruptError : public Error {
 public:
  CacheCorruptError(const std::string& what, std::string key);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct EndpointConfig {
  std::string base_url;
  std::string model;
  std::string api_key_env;  // env var NAME; the value itself is never stored
  int timeout_s = 30;
  int max_retries = 3;
  int max_in_flight = 4;
};

void validate(const EndpointConfig& cfg);

/// Content-addressed response cache. One self-contained JSON record per
/// file at {dir}/{key[0:2]}/{key}.record. Append-only: the first write for
/// a key wins, lookups never mutate anything.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<ChatExchange> lookup(const std::string& key) const;
  void store(const ChatExchange& exchange);

  /// Raw record access for non-chat records (e.g. scores).
  std::optional<std::string> lookup_raw(const std::string& key) const;
  void store_raw(const std::string& key, const std::string& record);

  std::filesystem::path path_for(const std::string& key) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

/// Exponential backoff with full jitter: sleep U(0, min(cap, base*factor^i)).
/// Defaults match production; tests shrink them via Client::set_retry_policy.
struct RetryPolicy {
  double base_delay_s = 0.5;
  double factor = 2.0;
  double max_delay_s = 30.0;
};

/// Minimal chat-completions client: caching, bounded concurrency, retries
/// with exponential backoff. 429/5xx/timeouts are retried up to
/// max_retries; 401/403 fail immediately.
class Client {
 public:
  explicit Client(EndpointConfig cfg, std::shared_ptr<ResponseCache> cache = nullptr);

  /// POST /v1/chat/completions. Returns the cached exchange byte-identically
  /// when the key is already stored.
  ChatExchange complete(const std::vector<Message>& messages, const SamplingParams& params);

  /// POST /score with {prompt, response}; returns the scalar score.
  /// Finite scores are cached; non-finite values are returned uncached.
  double score(const std::string& prompt, const std::string& response);

  const EndpointConfig& config() const { return cfg_; }
  const std::shared_ptr<ResponseCache>& cache() const { return cache_; }
  void set_retry_policy(const RetryPolicy& policy) { retry_ = policy; }

  /// Token totals over every exchange returned so far (cache hits included).
  TokenUsage usage_totals() const;

  /// Cache keys touched since the last drain, in first-touch order.
  std::vector<std::string> drain_touched_keys();

 private:
  struct HttpResult {
    std::string body;
    std::int64_t latency_ms = 0;
  };

  HttpResult post_json(const std::string& path, const std::string& body);
  void record_touch(const std::string& key);
  void usage_add(const TokenUsage& usage);

  class Semaphore {
   public:
    explicit Semaphore(int slots) : slots_(slots) {}
    void acquire();
    void release();

   private:
    std::mutex mu_;
    std::condition_variable cv_;
    int slots_;
  };

  EndpointConfig cfg_;
  std::shared_ptr<ResponseCache> cache_;
  RetryPolicy retry_;
  Semaphore sem_;
  mutable std::mutex mu_;
  std::vector<std::string> touched_;
  std::int64_t prompt_tokens_ = 0;
  std::int64_t completion_tokens_ = 0;
};

}  // namespace dpg::client
