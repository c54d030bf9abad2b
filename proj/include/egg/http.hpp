#pragma once

// JSON-over-HTTP calls with bounded exponential backoff, shared by the
// remote generation, embedding, and teacher backends.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
// <resolv.h> defines _res as a macro, which collides with Eigen parameter names.
#undef _res
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "egg/error.hpp"

namespace egg {

struct RemoteEndpoint {
  std::string url;  // scheme://host[:port][/base]
  std::string model;
  std::string auth_token_env = "EGG_AUTH_TOKEN";
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds backoff_cap{8'000};
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host:port
  std::string base;    // path prefix without trailing slash
};

inline SplitUrl split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint url '" + url + "' lacks a scheme");
  auto slash = url.find('/', scheme + 3);
  SplitUrl out;
  out.origin = url.substr(0, slash);
  out.base = slash == std::string::npos ? "" : url.substr(slash);
  while (!out.base.empty() && out.base.back() == '/') out.base.pop_back();
  // Accept both ".../v1" and bare origins; routes below add "/v1/...".
  if (out.base.size() >= 3 && out.base.compare(out.base.size() - 3, 3, "/v1") == 0)
    out.base.erase(out.base.size() - 3);
  return out;
}

}  // namespace detail

inline std::chrono::milliseconds backoff_delay(const RemoteEndpoint& ep, int attempt) {
  auto ms = ep.backoff_base.count();
  for (int i = 0; i < attempt && ms < ep.backoff_cap.count(); ++i) ms *= 2;
  return std::chrono::milliseconds(std::min<long long>(ms, ep.backoff_cap.count()));
}

// POSTs `body` to `route` (e.g. "/v1/completions"). Transport errors, 429,
// and 5xx are retried up to max_retries times; other statuses fail at once.
// `request_counter`, when given, is incremented per HTTP attempt.
inline nlohmann::json post_json(const RemoteEndpoint& ep, const std::string& route, const nlohmann::json& body,
                                std::atomic<std::size_t>* request_counter = nullptr) {
  auto [origin, base] = detail::split_url(ep.url);
  httplib::Headers headers;
  if (!ep.auth_token_env.empty()) {
    if (const char* token = std::getenv(ep.auth_token_env.c_str()); token && *token)
      headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  const std::string path = base + route;
  const std::string target = origin + path;
  const std::string payload = body.dump();
  std::string last_error;
  const int attempts = 1 + std::max(0, ep.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(backoff_delay(ep, attempt - 1));
    if (request_counter) ++*request_counter;
    httplib::Client client(origin);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(ep.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(ep.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const std::exception& e) {
        throw BackendError(target + ": invalid JSON response: " + e.what());
      }
    } else if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      throw BackendError(target + ": HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    spdlog::warn("{}: attempt {}/{} failed ({})", target, attempt + 1, attempts, last_error);
  }
  throw BackendError(target + ": giving up after " + std::to_string(attempts) + " attempts (" +
                     std::to_string(ep.max_retries) + " retries): " + last_error);
}

}  // namespace egg
