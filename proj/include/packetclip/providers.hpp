#pragma once

#include <cstdint>
#include <string>

namespace packetclip {

struct ProviderConfig {
  enum class Kind { stub, http };
  Kind kind = Kind::stub;
  std::string endpoint;            // http kind: full URL of a chat-completion route
  std::string model = "default";   // model field of the request body
  double timeout_s = 10.0;
  uint64_t seed = 0;               // stub kind: determinism root

  static Kind kind_from_string(const std::string& s);
};

// Single-turn chat completion POST:
//   {"model": ..., "messages": [{"role": "user", "content": prompt}]}
// Bearer token taken from PACKETCLIP_API_TOKEN when set. Returns the first
// choice's message content; anything else raises provider-error.
std::string chat_complete(const ProviderConfig& provider, const std::string& prompt);

}  // namespace packetclip
