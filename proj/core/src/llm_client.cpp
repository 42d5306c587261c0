#include "ragg/llm_client.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "ragg/error.hpp"
#include "ragg/text.hpp"

namespace ragg {

HttpLlmConfig HttpLlmConfig::from_env() {
  auto get = [](const char* k) {
    const char* v = std::getenv(k);
    return v == nullptr ? std::string() : std::string(v);
  };
  HttpLlmConfig c;
  c.endpoint = get("RAGG_LLM_ENDPOINT");
  c.model = get("RAGG_LLM_MODEL");
  c.api_key = get("RAGG_LLM_KEY");
  if (c.endpoint.empty()) fail(ErrorKind::kLlmFailure, "RAGG_LLM_ENDPOINT is not set");
  if (c.model.empty()) fail(ErrorKind::kLlmFailure, "RAGG_LLM_MODEL is not set");
  return c;
}

HttpLlmClient::HttpLlmClient(HttpLlmConfig cfg) : cfg_(std::move(cfg)) {
  require(cfg_.attempts >= 1, "llm client needs at least one attempt");
}

std::string HttpLlmClient::complete(const std::string& system_prompt, const std::string& user_prompt) {
  const std::string& url = cfg_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorKind::kLlmFailure, "llm endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  const Json body = {{"model", cfg_.model},
                     {"messages",
                      {{{"role", "system"}, {"content", system_prompt}}, {{"role", "user"}, {"content", user_prompt}}}}};
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  std::string last_error;
  auto backoff = cfg_.initial_backoff;
  for (int attempt = 1; attempt <= cfg_.attempts; ++attempt) {
    httplib::Client cli(origin);
    cli.set_connection_timeout(cfg_.timeout);
    cli.set_read_timeout(cfg_.timeout);
    auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
    } else {
      try {
        const Json reply = Json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const std::exception& e) {
        last_error = std::string("unexpected response body: ") + e.what();
      }
    }
    if (attempt < cfg_.attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  fail(ErrorKind::kLlmFailure, "llm request failed after " + std::to_string(cfg_.attempts) + " attempts: " + last_error);
}

std::string StubLlmClient::complete(const std::string&, const std::string& user_prompt) {
  // The sample text is the last double-quoted span of the user prompt.
  const auto close = user_prompt.rfind('"');
  const auto open = close == std::string::npos || close == 0 ? std::string::npos : user_prompt.rfind('"', close - 1);
  const std::string text = open == std::string::npos ? user_prompt : user_prompt.substr(open + 1, close - open - 1);
  int max_words = 2;
  const auto at_most = user_prompt.find("at most ");
  if (at_most != std::string::npos) max_words = std::atoi(user_prompt.c_str() + at_most + 8);
  std::string out = "[";
  int n = 0;
  for (const auto& tok : tokenize(text)) {
    if (n >= max_words) break;
    auto it = keywords_.find(tok);
    if (it == keywords_.end()) continue;
    out += (n == 0 ? "" : ", ");
    out += "('" + tok + "', '" + std::string(gesture_type_name(it->second)) + "')";
    ++n;
  }
  return out + "]";
}

std::string gesture_system_prompt() {
  return "You are an expert in human gestures. You need to identify words that may elicit semantically meaningful "
         "gestures(deictic, iconic, metaphoric) and their types:\n"
         "(a) Metaphoric Gesture: Represents abstract ideas or concepts physically, creating a vivid mental image.\n"
         "(b) Iconic Gesture: Mimics the shape or action of the object or concept being described.\n"
         "(c) Deictic Gesture: Points to or indicates a person, object, or location.\n"
         "Format your response as a python list of python tuples of (word, type). For example: [('hello', 'beat'), "
         "('world', 'iconic')]";
}

std::string gesture_user_prompt(const std::string& text, int max_words) {
  return "Identify at most " + std::to_string(max_words) +
         " important words which are more likely to elicit semantically meaningful gestures and what are types of "
         "those gestures in following text: \"" +
         text + "\"";
}

namespace {

class ReplyParser {
 public:
  explicit ReplyParser(std::string_view s) : s_(s) {}

  std::vector<std::pair<std::string, std::string>> parse() {
    std::vector<std::pair<std::string, std::string>> out;
    expect('[');
    skip_ws();
    if (peek() == ']') {
      ++pos_;
      return out;
    }
    while (true) {
      expect('(');
      std::string a = string_literal();
      expect(',');
      std::string b = string_literal();
      skip_ws();
      if (peek() == ',') ++pos_;  // trailing comma inside a tuple
      expect(')');
      out.emplace_back(std::move(a), std::move(b));
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        skip_ws();
        if (peek() == ']') {
          ++pos_;
          break;
        }
        continue;
      }
      expect(']');
      break;
    }
    return out;
  }

 private:
  [[noreturn]] static void bad() { fail(ErrorKind::kLlmFailure, "malformed gesture-type reply"); }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) bad();
    ++pos_;
  }
  std::string string_literal() {
    skip_ws();
    const char q = peek();
    if (q != '\'' && q != '"') bad();
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != q) {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) ++pos_;
      out += s_[pos_++];
    }
    if (pos_ >= s_.size()) bad();
    ++pos_;
    return out;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_gesture_reply(const std::string& reply) {
  const auto open = reply.find('[');
  const auto close = reply.rfind(']');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    fail(ErrorKind::kLlmFailure, "malformed gesture-type reply");
  }
  return ReplyParser(std::string_view(reply).substr(open, close - open + 1)).parse();
}

std::vector<GestureTypeHit> llm_gesture_types(const std::string& text, int max_words, LlmClient& client,
                                              int attempts) {
  require(max_words >= 1, "max_words must be >= 1");
  require(attempts >= 1, "attempts must be >= 1");
  const auto tokens = tokenize(text);
  for (int attempt = 1;; ++attempt) {
    const std::string reply = client.complete(gesture_system_prompt(), gesture_user_prompt(text, max_words));
    std::vector<std::pair<std::string, std::string>> pairs;
    try {
      pairs = parse_gesture_reply(reply);
    } catch (const Error&) {
      if (attempt >= attempts) throw;
      continue;
    }
    std::vector<GestureTypeHit> hits;
    for (const auto& [w, t] : pairs) {
      if (static_cast<int>(hits.size()) >= max_words) break;
      const std::string word = to_lower(w);
      auto type = parse_gesture_type(t);
      if (!type || std::find(tokens.begin(), tokens.end(), word) == tokens.end()) continue;
      hits.push_back({word, *type});
    }
    return hits;
  }
}

}  // namespace ragg
