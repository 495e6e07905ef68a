#include "http_client.hpp"

#include <httplib.h>

#include "polaudit/error.hpp"

namespace polaudit::detail {

Endpoint parse_base_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + base_url);
  auto scheme = base_url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https")
    throw ConfigError("unsupported scheme \"" + scheme + "\" in " + base_url);
  auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = base_url.substr(0, path_start);
  if (path_start != std::string::npos) ep.path_prefix = base_url.substr(path_start);
  while (!ep.path_prefix.empty() && ep.path_prefix.back() == '/') ep.path_prefix.pop_back();
  return ep;
}

HttpReply post_json(const Endpoint& endpoint, const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body, std::chrono::milliseconds timeout) {
  httplib::Client client(endpoint.origin);
  auto secs = timeout.count() / 1000;
  auto usecs = (timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers hdrs;
  for (const auto& [k, v] : headers)
    if (!k.empty()) hdrs.emplace(k, v);
  auto res = client.Post(endpoint.path_prefix + path, hdrs, body, "application/json");
  if (!res) throw TransientError("POST " + endpoint.origin + endpoint.path_prefix + path + ": " +
                                 httplib::to_string(res.error()));
  return {res->status, res->body};
}

}  // namespace polaudit::detail
