#pragma once

// Network backend for completion-style model servers.
//
//   POST <endpoint>/v1/completions
//   {"prompt": str, "max_tokens": int, "temperature": float, "stop": [str]}
//   -> {"choices": [{"text": str}], "usage": {"completion_tokens": int}}
//
// `usage` is optional. Transport failures, 429 and 5xx are retried with
// exponential backoff; the request body is serialized once and resent
// unchanged on every attempt.

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "retune/backends.hpp"
#include "retune/errors.hpp"

namespace retune {

inline constexpr const char* kEndpointEnv = "RECURSE_ENDPOINT";

struct HttpConfig {
  std::string endpoint;  // http://host:port[/prefix]
  std::vector<std::pair<std::string, std::string>> headers;
  int max_retries = 2;
  double backoff_seconds = 0.2;
  std::string backend_id = "http";
};

// "Name: value"
inline std::pair<std::string, std::string> parse_header_line(const std::string& line) {
  const auto colon = line.find(':');
  if (colon == std::string::npos || colon == 0) throw InputError("header must look like 'Name: value', got '" + line + "'");
  std::string value = line.substr(colon + 1);
  value.erase(0, value.find_first_not_of(' '));
  return {line.substr(0, colon), value};
}

inline std::string default_endpoint() {
  const char* env = std::getenv(kEndpointEnv);
  return env ? env : "";
}

inline std::string completion_request_body(const GenerationRequest& req) {
  nlohmann::ordered_json j;
  j["prompt"] = req.context;
  j["max_tokens"] = req.max_units;
  j["temperature"] = req.temperature;
  j["stop"] = req.stop;
  return j.dump();
}

inline GenerationResult parse_completion_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BackendError(std::string("response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty() ||
      !j["choices"][0].is_object() || !j["choices"][0].contains("text") || !j["choices"][0]["text"].is_string())
    throw BackendError("response lacks choices[0].text: " + body.substr(0, 200));
  GenerationResult r;
  r.text = j["choices"][0]["text"].get<std::string>();
  if (j.contains("usage") && j["usage"].is_object() && j["usage"].contains("completion_tokens") &&
      j["usage"]["completion_tokens"].is_number_unsigned())
    r.tokens = j["usage"]["completion_tokens"].get<std::size_t>();
  return r;
}

class HttpBackend : public ModelBackend {
 public:
  explicit HttpBackend(HttpConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty()) cfg_.endpoint = default_endpoint();
    if (cfg_.endpoint.empty()) throw InputError(std::string("no endpoint given and ") + kEndpointEnv + " is unset");
    split_endpoint();
    if (cfg_.max_retries < 0) throw InputError("max_retries must be >= 0");
  }

  GenerationResult generate(const GenerationRequest& req) override {
    req.validate();
    const std::string body = completion_request_body(req);
    httplib::Headers headers;
    for (const auto& [k, v] : cfg_.headers) headers.emplace(k, v);
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.backoff_seconds * double(1 << (attempt - 1))));
      httplib::Client client(host_);
      const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::duration<double>(req.timeout_seconds));
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      auto res = client.Post(path_, headers, body, "application/json");
      if (!res) {
        last_error = "transport failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
        continue;
      }
      if (res->status < 200 || res->status >= 300)
        throw BackendError(cfg_.endpoint + path_suffix() + " returned HTTP " + std::to_string(res->status) + ": " +
                           res->body.substr(0, 200));
      return parse_completion_response(res->body);
    }
    throw BackendError(cfg_.endpoint + path_suffix() + " failed after " + std::to_string(cfg_.max_retries + 1) +
                       " attempts, last: " + last_error);
  }

  std::string id() const override { return cfg_.backend_id; }
  const std::string& path() const { return path_; }

 private:
  static std::string path_suffix() { return "/v1/completions"; }

  void split_endpoint() {
    std::string ep = cfg_.endpoint;
    while (!ep.empty() && ep.back() == '/') ep.pop_back();
    const auto scheme = ep.find("://");
    if (scheme == std::string::npos) ep = "http://" + ep;
    if (ep.rfind("http://", 0) != 0) throw InputError("only http:// endpoints are supported, got '" + cfg_.endpoint + "'");
    const auto slash = ep.find('/', 7);
    host_ = slash == std::string::npos ? ep : ep.substr(0, slash);
    path_ = (slash == std::string::npos ? "" : ep.substr(slash)) + path_suffix();
  }

  HttpConfig cfg_;
  std::string host_;
  std::string path_;
};

}  // namespace retune
