#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dpg/types.hpp"

namespace dpg {

/// Lowercase hex SHA-256 of the input bytes (64 chars).
std::string sha256_hex(std::string_view bytes);

/// First 16 hex chars of sha256_hex. Filename-safe.
std::string short_digest(std::string_view bytes);

/// Canonical serialization of a request tuple: JSON with sorted keys, so
/// key equality coincides with byte equality of this serialization.
std::string canonical_request(const std::string& endpoint, const std::string& model,
                              const std::vector<Message>& messages,
                              const SamplingParams& params);

/// Cache key for a chat request: short_digest(canonical_request(...)).
std::string cache_key(const std::string& endpoint, const std::string& model,
                      const std::vector<Message>& messages, const SamplingParams& params);

}  // namespace dpg
