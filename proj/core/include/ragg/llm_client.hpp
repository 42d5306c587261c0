#pragma once

// Gesture-type prediction through a chat-completion style LLM endpoint, plus
// a deterministic stub backed by a keyword lexicon.

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "ragg/retrieval.hpp"

namespace ragg {

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  // Returns the assistant message content. Throws Error(kLlmFailure) on
  // transport failure.
  virtual std::string complete(const std::string& system_prompt, const std::string& user_prompt) = 0;
};

struct HttpLlmConfig {
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  std::string model;
  std::string api_key;
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{30};

  // Reads RAGG_LLM_ENDPOINT, RAGG_LLM_MODEL and RAGG_LLM_KEY.
  static HttpLlmConfig from_env();
};

class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(HttpLlmConfig cfg);
  std::string complete(const std::string& system_prompt, const std::string& user_prompt) override;

 private:
  HttpLlmConfig cfg_;
};

// Answers with the first lexicon keywords found in the quoted sample text.
class StubLlmClient : public LlmClient {
 public:
  explicit StubLlmClient(std::map<std::string, GestureType> keywords) : keywords_(std::move(keywords)) {}
  std::string complete(const std::string& system_prompt, const std::string& user_prompt) override;

 private:
  std::map<std::string, GestureType> keywords_;
};

struct GestureTypeHit {
  std::string word;
  GestureType type = GestureType::kNone;
  friend bool operator==(const GestureTypeHit&, const GestureTypeHit&) = default;
};

std::string gesture_system_prompt();
std::string gesture_user_prompt(const std::string& text, int max_words);

// Parses "[('word', 'type'), ...]". Throws "malformed gesture-type reply".
std::vector<std::pair<std::string, std::string>> parse_gesture_reply(const std::string& reply);

// Queries the client, retrying malformed replies up to `attempts` times.
// Entries whose word is not in the text or whose type is unknown are dropped;
// at most max_words entries are returned.
std::vector<GestureTypeHit> llm_gesture_types(const std::string& text, int max_words, LlmClient& client,
                                              int attempts = 3);

}  // namespace ragg
