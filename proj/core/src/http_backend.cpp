#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "road/backend.hpp"
#include "road/errors.hpp"

namespace road {

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw InvalidArgument("http backend needs a base_url");
  if (config_.max_attempts < 1) throw InvalidArgument("max_attempts must be at least 1");
  if (!config_.sleep) config_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string HttpBackend::describe() const { return "http:" + config_.base_url + config_.path; }

ChatResponse HttpBackend::complete(const ChatRequest& request) {
  request.check();
  const std::string body = to_wire(request, config_.model).dump();

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  std::string last_error;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) {
      const auto& b = config_.backoff;
      config_.sleep(b.empty() ? std::chrono::milliseconds(0) : b[std::min<std::size_t>(attempt - 1, b.size() - 1)]);
    }
    ++attempts_;
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    auto res = client.Post(config_.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw TransportError("HTTP " + std::to_string(res->status) + " from " + describe() + ": " + res->body);
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw TransportError("response body from " + describe() + " is not JSON");
    return from_wire(parsed);
  }
  throw TransportError("giving up on " + describe() + " after " + std::to_string(config_.max_attempts) +
                       " attempts: " + last_error);
}

}  // namespace road
