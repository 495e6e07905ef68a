#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace polaudit::detail {

struct Endpoint {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // "" or "/v1"
};

// Splits "http://host:port/prefix" into origin and path prefix. Throws
// ConfigError for unsupported schemes.
Endpoint parse_base_url(const std::string& base_url);

struct HttpReply {
  int status = 0;
  std::string body;
};

// Transport failures throw TransientError.
HttpReply post_json(const Endpoint& endpoint, const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body, std::chrono::milliseconds timeout);

}  // namespace polaudit::detail
