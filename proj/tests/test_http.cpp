#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "retune/executor.hpp"
#include "retune/http_backend.hpp"

using namespace retune;

namespace {

// Completion server on a free local port. `fail_first` requests get a 500.
class MockServer {
 public:
  explicit MockServer(int fail_first = 0, int status = 200) : fail_first_(fail_first), status_(status) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
    server_.Post("/prefix/v1/completions", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::vector<std::string> bodies() {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::vector<std::string> header(const std::string& name) {
    std::lock_guard lock(mu_);
    return headers_[name];
  }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu_);
    bodies_.push_back(req.body);
    for (const auto& [k, v] : req.headers) headers_[k].push_back(v);
    if (static_cast<int>(bodies_.size()) <= fail_first_) {
      res.status = 500;
      res.set_content("busy", "text/plain");
      return;
    }
    if (status_ != 200) {
      res.status = status_;
      res.set_content("nope", "text/plain");
      return;
    }
    const auto j = nlohmann::json::parse(req.body);
    OracleBackend oracle;
    std::string text = oracle.continuation(j.at("prompt").get<std::string>());
    nlohmann::json out{{"choices", {{{"text", apply_stop(text, j.at("stop").get<std::vector<std::string>>())}}}},
                       {"usage", {{"completion_tokens", 3}}}};
    res.set_content(out.dump(), "application/json");
  }

  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  int fail_first_;
  int status_;
  std::mutex mu_;
  std::vector<std::string> bodies_;
  std::map<std::string, std::vector<std::string>> headers_;
};

HttpConfig fast(const std::string& endpoint) {
  HttpConfig c;
  c.endpoint = endpoint;
  c.backoff_seconds = 0.01;
  return c;
}

GenerationRequest request(const std::string& ctx) {
  GenerationRequest r;
  r.context = ctx;
  r.stop = {"\n"};
  r.max_units = 64;
  r.timeout_seconds = 5;
  return r;
}

}  // namespace

TEST(HttpWire, RequestBodyFieldOrder) {
  EXPECT_EQ(completion_request_body(request("1 + 2\nSolution: ")),
            "{\"prompt\":\"1 + 2\\nSolution: \",\"max_tokens\":64,\"temperature\":0.01,\"stop\":[\"\\n\"]}");
}

TEST(HttpWire, ResponseParsing) {
  const auto r = parse_completion_response(R"({"choices":[{"text":"Answer: 1"}],"usage":{"completion_tokens":4}})");
  EXPECT_EQ(r.text, "Answer: 1");
  EXPECT_EQ(r.tokens, std::optional<std::size_t>(4));
  EXPECT_FALSE(parse_completion_response(R"({"choices":[{"text":""}]})").tokens);
  EXPECT_THROW(parse_completion_response("nope"), BackendError);
  EXPECT_THROW(parse_completion_response(R"({"choices":[]})"), BackendError);
}

TEST(HttpWire, HeaderLines) {
  EXPECT_EQ(parse_header_line("Authorization: Bearer x"), (std::pair<std::string, std::string>{"Authorization", "Bearer x"}));
  EXPECT_THROW(parse_header_line("novalue"), InputError);
}

TEST(HttpBackendTest, RecursiveRunOverHttp) {
  MockServer server;
  auto cfg = fast(server.endpoint());
  cfg.headers = {{"X-Test", "1"}};
  HttpBackend http(cfg);
  const auto trace = recursive_generate(http, "687 + 891\nSolution: ");
  EXPECT_EQ(final_answer(trace, TaskKind::Addition), "1578");
  EXPECT_EQ(server.bodies().size(), trace.backend_invocations);
  EXPECT_EQ(trace.root.gen_token_count, std::optional<std::size_t>(6));
  EXPECT_EQ(server.header("X-Test").size(), server.bodies().size());
}

TEST(HttpBackendTest, PathPrefix) {
  MockServer server;
  HttpBackend http(fast(server.endpoint() + "/prefix/"));
  EXPECT_EQ(http.path(), "/prefix/v1/completions");
  EXPECT_EQ(http.generate(request("4 + 8\nSolution: ")).text, "Answer: Carry 1, Output 2");
}

TEST(HttpBackendTest, RetriesServerErrorsWithIdenticalBody) {
  MockServer server(2);
  HttpBackend http(fast(server.endpoint()));
  EXPECT_EQ(http.generate(request("4 + 8\nSolution: ")).text, "Answer: Carry 1, Output 2");
  const auto bodies = server.bodies();
  ASSERT_EQ(bodies.size(), 3u);
  EXPECT_EQ(bodies[0], bodies[1]);
  EXPECT_EQ(bodies[1], bodies[2]);
}

TEST(HttpBackendTest, GivesUpAfterRetries) {
  MockServer server(10);
  HttpBackend http(fast(server.endpoint()));
  EXPECT_THROW(http.generate(request("4 + 8\nSolution: ")), BackendError);
  EXPECT_EQ(server.bodies().size(), 3u);
}

TEST(HttpBackendTest, ClientErrorIsNotRetried) {
  MockServer server(0, 400);
  HttpBackend http(fast(server.endpoint()));
  EXPECT_THROW(http.generate(request("4 + 8\nSolution: ")), BackendError);
  EXPECT_EQ(server.bodies().size(), 1u);
}

TEST(HttpBackendTest, UnreachableEndpoint) {
  // Nothing listens on loopback port 1.
  auto cfg = fast("http://127.0.0.1:1");
  cfg.max_retries = 1;
  HttpBackend http(cfg);
  EXPECT_THROW(http.generate(request("4 + 8\nSolution: ")), BackendError);
  try {
    recursive_generate(http, "4 + 8\nSolution: ");
    FAIL();
  } catch (const BackendFailure&) {
  }
}

TEST(HttpBackendTest, EndpointFromEnvironment) {
  ::unsetenv(kEndpointEnv);
  EXPECT_THROW(HttpBackend(HttpConfig{}), InputError);
  MockServer server;
  ::setenv(kEndpointEnv, server.endpoint().c_str(), 1);
  HttpBackend http(HttpConfig{});
  EXPECT_EQ(http.generate(request("4 + 8\nSolution: ")).text, "Answer: Carry 1, Output 2");
  ::unsetenv(kEndpointEnv);
  EXPECT_THROW(HttpBackend(fast("https://example.invalid")), InputError);
}
