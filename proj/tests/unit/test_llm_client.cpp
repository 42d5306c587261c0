#include <atomic>
#include <thread>

// Eigen goes first: httplib pulls in <resolv.h>, whose _res macro clashes
// with Eigen parameter names.
#include "ragg/error.hpp"
#include "ragg/llm_client.hpp"

#include "doctest.h"
#include "httplib.h"

using namespace ragg;

namespace {

// Replays a fixed sequence of replies.
class ScriptedClient : public LlmClient {
 public:
  explicit ScriptedClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const std::string&, const std::string& user) override {
    last_user = user;
    return replies_.at(std::min(calls++, replies_.size() - 1));
  }
  std::size_t calls = 0;
  std::string last_user;

 private:
  std::vector<std::string> replies_;
};

// Local chat-completion endpoint on an ephemeral port.
class FakeServer {
 public:
  explicit FakeServer(int status) {
    server_.Post("/v1/chat/completions", [this, status](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      body = req.body;
      auth = req.get_header_value("Authorization");
      res.status = status;
      res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"[('ball', 'iconic')]"}}]})",
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

  std::atomic<int> hits{0};
  std::string body;
  std::string auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_SUITE("llm_client") {
  TEST_CASE("reply parsing") {
    const auto r = parse_gesture_reply("Sure: [('ball', 'iconic'), (\"here\", 'deictic')]");
    REQUIRE(r.size() == 2);
    CHECK(r[0] == std::pair<std::string, std::string>{"ball", "iconic"});
    CHECK(r[1].second == "deictic");
    CHECK(parse_gesture_reply("[]").empty());
    CHECK(parse_gesture_reply("[('a', 'beat',),]").size() == 1);
    for (const char* bad : {"no list here", "[('a')]", "[('a', 'b'", "[(a, b)]"}) {
      try {
        parse_gesture_reply(bad);
        FAIL("expected a parse error for " << bad);
      } catch (const Error& e) {
        CHECK(std::string(e.what()) == "malformed gesture-type reply");
        CHECK(e.kind() == ErrorKind::kLlmFailure);
      }
    }
  }

  TEST_CASE("prompts") {
    CHECK(gesture_system_prompt().find("deictic, iconic, metaphoric") != std::string::npos);
    const std::string u = gesture_user_prompt("throw the ball", 2);
    CHECK(u.find("at most 2") != std::string::npos);
    CHECK(u.substr(u.size() - 16) == "\"throw the ball\"");
  }

  TEST_CASE("stub client returns lexicon keywords with their types") {
    StubLlmClient stub({{"ball", GestureType::kIconic}, {"idea", GestureType::kMetaphoric},
                        {"here", GestureType::kDeictic}});
    const auto hits = llm_gesture_types("put the ball here with the idea", 2, stub);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0] == GestureTypeHit{"ball", GestureType::kIconic});
    CHECK(hits[1] == GestureTypeHit{"here", GestureType::kDeictic});
    CHECK(llm_gesture_types("put the ball here with the idea", 1, stub).size() == 1);
    CHECK(llm_gesture_types("nothing special", 2, stub).empty());
  }

  TEST_CASE("validation drops unknown words and types, retries malformed replies") {
    ScriptedClient c({"[('apple', 'iconic'), ('ball', 'wiggly'), ('Ball', 'iconic'), ('here', 'deictic'), "
                      "('there', 'deictic')]"});
    const auto hits = llm_gesture_types("the ball is here and there", 2, c);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].word == "ball");
    CHECK(hits[1].word == "here");
    CHECK(c.last_user.find("at most 2") != std::string::npos);

    ScriptedClient flaky({"garbage", "[('ball', 'iconic')]"});
    CHECK(llm_gesture_types("a ball", 2, flaky).size() == 1);
    CHECK(flaky.calls == 2);

    ScriptedClient broken({"garbage"});
    CHECK_THROWS_AS(llm_gesture_types("a ball", 2, broken, 3), Error);
    CHECK(broken.calls == 3);
  }

  TEST_CASE("http client sends a chat-completion request") {
    FakeServer server(200);
    HttpLlmConfig cfg;
    cfg.endpoint = server.endpoint();
    cfg.model = "test-model";
    cfg.api_key = "k123";
    HttpLlmClient client(cfg);
    const auto hits = llm_gesture_types("kick the ball", 2, client);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].type == GestureType::kIconic);
    const Json body = Json::parse(server.body);
    CHECK(body.at("model") == "test-model");
    CHECK(body.at("messages").size() == 2);
    CHECK(body.at("messages")[0].at("role") == "system");
    CHECK(body.at("messages")[1].at("content") == gesture_user_prompt("kick the ball", 2));
    CHECK(server.auth == "Bearer k123");
  }

  TEST_CASE("http failures surface as llm errors after retries") {
    FakeServer server(503);
    HttpLlmConfig cfg;
    cfg.endpoint = server.endpoint();
    cfg.model = "m";
    cfg.attempts = 2;
    cfg.initial_backoff = std::chrono::milliseconds(1);
    HttpLlmClient client(cfg);
    try {
      client.complete("s", "u");
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kLlmFailure);
    }
    CHECK(server.hits == 2);

    cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    cfg.timeout = std::chrono::seconds(2);
    HttpLlmClient dead(cfg);
    CHECK_THROWS_AS(dead.complete("s", "u"), Error);
    cfg.endpoint = "no-scheme";
    HttpLlmClient bad(cfg);
    CHECK_THROWS_AS(bad.complete("s", "u"), Error);
  }
}
