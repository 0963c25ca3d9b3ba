#include "dpg/hashing.hpp"

#include <openssl/evp.h>

#include <json.hpp>

#include "dpg/errors.hpp"

namespace dpg {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("sha256: EVP context allocation failed");
  bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
            EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
            EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha256: digest computation failed");

  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string short_digest(std::string_view bytes) { return sha256_hex(bytes).substr(0, 16); }

std::string canonical_request(const std::string& endpoint, const std::string& model,
                              const std::vector<Message>& messages,
                              const SamplingParams& params) {
  nlohmann::json j;
  j["endpoint"] = endpoint;
  j["model"] = model;
  auto msgs = nlohmann::json::array();
  for (const Message& m : messages) {
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  j["messages"] = msgs;
  nlohmann::json p;
  p["temperature"] = params.temperature;
  p["top_p"] = params.top_p;
  p["max_tokens"] = params.max_tokens;
  if (params.seed) p["seed"] = *params.seed;
  j["params"] = p;
  // nlohmann objects iterate in key order, so dump() is canonical.
  return j.dump();
}

std::string cache_key(const std::string& endpoint, const std::string& model,
                      const std::vector<Message>& messages, const SamplingParams& params) {
  return short_digest(canonical_request(endpoint, model, messages, params));
}

}  // namespace dpg
