#include "packetclip/providers.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>

#include "httplib.h"
#include "json.hpp"
#include "packetclip/error.hpp"

namespace packetclip {

ProviderConfig::Kind ProviderConfig::kind_from_string(const std::string& s) {
  if (s == "stub") return Kind::stub;
  if (s == "http") return Kind::http;
  fail(Err::config, "unknown provider kind: " + s);
}

namespace {

struct UrlParts {
  std::string scheme_host_port;  // e.g. http://localhost:8080
  std::string path;
};

UrlParts parse_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(Err::config, "provider endpoint is not a URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  UrlParts parts;
  if (path_start == std::string::npos) {
    parts.scheme_host_port = url;
    parts.path = "/";
  } else {
    parts.scheme_host_port = url.substr(0, path_start);
    parts.path = url.substr(path_start);
  }
  return parts;
}

}  // namespace

std::string chat_complete(const ProviderConfig& provider, const std::string& prompt) {
  if (provider.kind != ProviderConfig::Kind::http)
    fail(Err::state, "chat_complete requires an http provider");

  UrlParts parts = parse_url(provider.endpoint);
  httplib::Client client(parts.scheme_host_port);
  auto timeout = std::chrono::milliseconds(int64_t(std::llround(provider.timeout_s * 1000.0)));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  if (const char* token = std::getenv("PACKETCLIP_API_TOKEN"))
    client.set_default_headers({{"Authorization", std::string("Bearer ") + token}});

  nlohmann::json body = {
      {"model", provider.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
  };
  auto res = client.Post(parts.path, body.dump(), "application/json");
  if (!res)
    fail(Err::provider, "provider unreachable: " + provider.endpoint);
  if (res->status < 200 || res->status >= 300)
    fail(Err::provider,
         "provider returned status " + std::to_string(res->status) + " from " + provider.endpoint);

  std::string content;
  try {
    auto j = nlohmann::json::parse(res->body);
    content = j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const std::exception& e) {
    fail(Err::provider, std::string("provider response not parseable: ") + e.what());
  }
  if (content.empty()) fail(Err::provider, "provider returned an empty completion");
  return content;
}

}  // namespace packetclip
