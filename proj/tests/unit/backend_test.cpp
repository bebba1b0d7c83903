#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "httplib.h"
#include "road/backend.hpp"
#include "road/errors.hpp"

namespace road {
namespace {

ChatRequest request(const std::string& user, const std::string& system = "sys") {
  ChatRequest r;
  r.model_name = "m";
  r.messages = {{Role::system, system}, {Role::user, user}};
  return r;
}

TEST(ChatRequest, Check) {
  EXPECT_NO_THROW(request("hi").check());
  ChatRequest empty;
  EXPECT_THROW(empty.check(), InvalidArgument);
  ChatRequest bad;
  bad.messages = {{Role::assistant, "x"}};
  EXPECT_THROW(bad.check(), InvalidArgument);
}

TEST(ScriptedBackend, TurnIndexVerbatim) {
  ScriptedBackend b({{TurnIndexMatcher{0}, "first reply"}, {TurnIndexMatcher{1}, "second reply"}});
  auto r = b.complete(request("a"));
  EXPECT_EQ(r.content, "first reply");
  EXPECT_EQ(r.finish_reason, FinishReason::stop);
  EXPECT_EQ(b.complete(request("b")).content, "second reply");
  try {
    b.complete(request("c"));
    FAIL();
  } catch (const ScriptError& e) {
    EXPECT_NE(std::string(e.what()).find("script exhausted"), std::string::npos);
  }
}

TEST(ScriptedBackend, HashMatcher) {
  const auto req = request("exact");
  ScriptedBackend b({{MessageHashMatcher{request_hash(req)}, "hashed"}});
  EXPECT_EQ(b.complete(req).content, "hashed");
  EXPECT_THROW(b.complete(request("other")), ScriptError);
}

TEST(ScriptedBackend, RequestHashIgnoresSampling) {
  auto a = request("x");
  auto b = request("x");
  b.temperature = 0.7;
  b.max_tokens = 5;
  EXPECT_EQ(request_hash(a), request_hash(b));
  b.model_name = "other";
  EXPECT_NE(request_hash(a), request_hash(b));
  EXPECT_NE(request_hash(request("x")), request_hash(request("y")));
}

TEST(ScriptedBackend, ContentMatcher) {
  ContentMatcher c;
  c.system_contains = {"RULE"};
  c.first_user_contains = "order";
  c.user_turn = 1;
  ScriptedBackend b({{c, "matched"}});
  EXPECT_EQ(b.complete(request("my order", "RULE here")).content, "matched");
  EXPECT_THROW(b.complete(request("my order", "no rule")), ScriptError);
}

TEST(ScriptedBackend, AmbiguousAndDuplicateEntries) {
  EXPECT_THROW(ScriptedBackend({{TurnIndexMatcher{0}, "a"}, {TurnIndexMatcher{0}, "b"}}), ScriptError);
  ContentMatcher any;
  ScriptedBackend b({{any, "a"}, {any, "b"}});
  EXPECT_THROW(b.complete(request("x")), ScriptError);
}

TEST(ScriptedBackend, ReplayIsByteIdentical) {
  ScriptedBackend b({{TurnIndexMatcher{0}, "r0"}, {TurnIndexMatcher{1}, "r1"}, {TurnIndexMatcher{2}, "r2"}});
  const std::vector<ChatRequest> log{request("a"), request("b"), request("c")};
  std::vector<std::string> first, second;
  for (const auto& r : log) first.push_back(b.complete(r).content);
  b.reset();
  for (const auto& r : log) second.push_back(b.complete(r).content);
  EXPECT_EQ(first, second);
}

TEST(ScriptedBackend, ScriptJsonRoundTrip) {
  ContentMatcher c;
  c.last_user_contains = {"x"};
  c.user_turn = 2;
  const std::vector<ScriptEntry> entries{{TurnIndexMatcher{3}, "t"}, {MessageHashMatcher{"abc"}, "h"}, {c, "c"}};
  const nlohmann::json j = entries;
  const auto back = j.get<std::vector<ScriptEntry>>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Wire, RequestBodyShape) {
  auto r = request("hello");
  r.temperature = 0.5;
  r.max_tokens = 77;
  const auto j = to_wire(r, "override");
  EXPECT_EQ(j.at("model"), "override");
  EXPECT_EQ(j.at("messages").size(), 2u);
  EXPECT_EQ(j.at("messages")[1].at("role"), "user");
  EXPECT_EQ(j.at("messages")[1].at("content"), "hello");
  EXPECT_EQ(j.at("max_tokens"), 77);
  EXPECT_EQ(to_wire(r).at("model"), "m");
}

TEST(Wire, ResponseMapping) {
  const auto r = from_wire(nlohmann::json::parse(
      R"({"choices":[{"message":{"role":"assistant","content":"ok"},"finish_reason":"length"}],
          "usage":{"prompt_tokens":3,"completion_tokens":1}})"));
  EXPECT_EQ(r.content, "ok");
  EXPECT_EQ(r.finish_reason, FinishReason::length);
  EXPECT_EQ(r.usage.prompt_tokens, 3);
  EXPECT_THROW(from_wire(nlohmann::json::object()), TransportError);
}

class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TEST(HttpBackend, RetriesAfter429) {
  std::atomic<int> hits{0};
  std::string auth;
  nlohmann::json seen_body;
  LocalServer srv;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits.fetch_add(1) == 0) {
      res.status = 429;
      res.set_content("slow down", "text/plain");
      return;
    }
    auth = req.get_header_value("Authorization");
    seen_body = nlohmann::json::parse(req.body);
    res.set_content(R"({"choices":[{"message":{"content":"from server"},"finish_reason":"stop"}]})",
                    "application/json");
  });
  ::setenv("ROAD_TEST_KEY", "secret", 1);
  HttpBackendConfig cfg;
  cfg.base_url = srv.url();
  cfg.api_key_env = "ROAD_TEST_KEY";
  std::vector<std::chrono::milliseconds> slept;
  cfg.sleep = [&](std::chrono::milliseconds d) { slept.push_back(d); };
  HttpBackend b(cfg);
  const auto r = b.complete(request("hi"));
  EXPECT_EQ(r.content, "from server");
  EXPECT_EQ(hits.load(), 2);
  EXPECT_EQ(b.attempts(), 2u);
  ASSERT_EQ(slept.size(), 1u);
  EXPECT_EQ(slept[0], std::chrono::seconds(1));
  EXPECT_EQ(auth, "Bearer secret");
  EXPECT_EQ(seen_body.at("messages")[1].at("content"), "hi");
}

TEST(HttpBackend, GivesUpAfterConfiguredAttempts) {
  std::atomic<int> hits{0};
  LocalServer srv;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  HttpBackendConfig cfg;
  cfg.base_url = srv.url();
  std::vector<std::chrono::milliseconds> slept;
  cfg.sleep = [&](std::chrono::milliseconds d) { slept.push_back(d); };
  HttpBackend b(cfg);
  EXPECT_THROW(b.complete(request("hi")), TransportError);
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(slept, (std::vector<std::chrono::milliseconds>{std::chrono::seconds(1), std::chrono::seconds(2)}));
}

TEST(HttpBackend, ClientErrorIsNotRetried) {
  std::atomic<int> hits{0};
  LocalServer srv;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 400;
  });
  HttpBackendConfig cfg;
  cfg.base_url = srv.url();
  cfg.sleep = [](std::chrono::milliseconds) {};
  HttpBackend b(cfg);
  EXPECT_THROW(b.complete(request("hi")), TransportError);
  EXPECT_EQ(hits.load(), 1);
}

TEST(StructuredOutput, FencedReport) {
  ChatResponse r;
  r.content = "Here you go:\n```json\n{\"diagnosis\": \"d\", \"prescription\": \"p\"}\n```\nthanks";
  const auto j = parse_structured(r, Schema::analysis_report);
  EXPECT_EQ(j.at("diagnosis"), "d");
}

TEST(StructuredOutput, ProseIsMalformed) {
  ChatResponse r;
  r.content = "I think the agent forgot the context.";
  try {
    parse_structured(r, Schema::analysis_report);
    FAIL();
  } catch (const MalformedOutput& e) {
    EXPECT_EQ(e.raw(), r.content);
    EXPECT_NE(std::string(e.what()).find("malformed agent output"), std::string::npos);
  }
}

TEST(StructuredOutput, MissingFieldNamed) {
  ChatResponse r;
  r.content = R"({"diagnosis": "d"})";
  try {
    parse_structured(r, Schema::analysis_report);
    FAIL();
  } catch (const SchemaViolation& e) {
    EXPECT_EQ(e.field(), "prescription");
  }
  r.content = R"([{"pattern_id":"p","category":"scope","description":"d","prescribed_actions":[],"evidence_task_ids":[]}])";
  try {
    parse_structured(r, Schema::pattern_list);
    FAIL();
  } catch (const SchemaViolation& e) {
    EXPECT_EQ(e.field(), "patterns[0].evidence_task_ids");
  }
}

TEST(StructuredOutput, RenderExtractRoundTrip) {
  const std::vector<std::pair<nlohmann::json, Schema>> values{
      {{{"task_id", "t"}, {"diagnosis", "a {b}"}, {"prescription", "```"}, {"category_hint", "scope"}},
       Schema::analysis_report},
      {nlohmann::json::array({{{"pattern_id", "p"},
                               {"category", "sequencing"},
                               {"description", "d"},
                               {"prescribed_actions", {"a", "b"}},
                               {"evidence_task_ids", {"t"}}}}),
       Schema::pattern_list},
      {{{"prompt", "line\n```json\n{}\n```"}}, Schema::evolved_prompt},
  };
  for (const auto& [v, s] : values) {
    ChatResponse r;
    r.content = render_structured(v);
    EXPECT_EQ(parse_structured(r, s), v) << to_string(s);
  }
}

TEST(TruncateLog, KeepsHeadAndTail) {
  const std::string log = std::string(100, 'h') + std::string(100, 't');
  const auto t = truncate_log(log, 64);
  EXPECT_TRUE(t.truncated);
  EXPECT_EQ(t.original_chars, 200u);
  EXPECT_EQ(t.text.rfind(std::string(32, 'h'), 0), 0u);
  EXPECT_EQ(t.text.substr(t.text.size() - 32), std::string(32, 't'));
  EXPECT_NE(t.text.find("characters omitted"), std::string::npos);
  EXPECT_FALSE(truncate_log("short", 64).truncated);
}

}  // namespace
}  // namespace road
