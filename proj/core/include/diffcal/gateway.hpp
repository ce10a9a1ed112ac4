#pragma once

// Chat-completion access with top-k log-probabilities: an OpenAI-protocol
// client, an append-only response cache, a sliding-window rate limiter and a
// seeded mock judge for offline runs.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffcal/tokens.hpp"

namespace diffcal::llm {

struct BackendProfile {
  std::string name;   // identifier used in cells and cache keys
  std::string model;  // upstream model id
  std::string base_url;
  std::string auth_env_var;
  int top_k_limit = 10;
  bool supports_logprobs = true;
  double price_per_1k_prompt_tokens = 0;
  double price_per_1k_completion_tokens = 0;

  void validate() const;
};

BackendProfile gpt4o_profile();
BackendProfile deepseek_chat_profile();
BackendProfile qwen_profile();

struct TokenPosition {
  std::string token;
  double logprob = 0;
  std::vector<tokens::TokenCandidate> top;

  bool operator==(const TokenPosition&) const = default;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  Usage& operator+=(const Usage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  bool operator==(const Usage&) const = default;
};

struct CompletionResponse {
  std::string text;
  std::vector<TokenPosition> positions;
  Usage usage;
  double latency_ms = 0;

  bool operator==(const CompletionResponse&) const = default;
};

std::string serialize(const CompletionResponse& r);
CompletionResponse deserialize_response(std::string_view json_text);

struct ChatParams {
  double temperature = 1.0;
  int top_logprobs = 0;  // 0 disables log-probability capture
};

struct ChatRequest {
  std::string profile;
  std::string system_message;
  std::string user_message;
  ChatParams params;
  int ordinal = 0;  // distinguishes deliberate repeats of an identical request
};

// SHA-256 over (profile, system, user, temperature, top_logprobs, ordinal).
std::string request_key(const ChatRequest& request);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual CompletionResponse complete(const ChatRequest& request) = 0;
  virtual const BackendProfile& profile() const = 0;
};

// ---------------------------------------------------------------- errors

class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class AuthError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};
class MalformedResponseError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};
class RetryExhaustedError : public GatewayError {
 public:
  RetryExhaustedError(const std::string& what, int attempts) : GatewayError(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};
// Non-transient HTTP failure other than authentication.
class BackendRequestError : public GatewayError {
 public:
  BackendRequestError(const std::string& what, int status) : GatewayError(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};
class CacheCorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- HTTP client

struct HttpResponse {
  int status = 0;  // 0: transport failure (timeout, connection refused)
  std::string body;
  std::string error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& base_url, const std::string& path,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            const std::string& body) = 0;
};

std::shared_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout = std::chrono::seconds(60));

struct RetryPolicy {
  int max_tries = 5;
  std::chrono::milliseconds base_delay{1000};
  double factor = 2.0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

struct ChatOutcome {
  CompletionResponse response;
  int attempts = 0;
  int effective_top_logprobs = 0;
};

// Request body for POST {base_url}/chat/completions.
std::string build_chat_request_body(const BackendProfile& profile, const ChatRequest& request,
                                    int top_logprobs);
CompletionResponse parse_chat_response(std::string_view body, int top_k_limit);

// Returns the number of top log-probabilities actually requested: values
// above the profile limit are clamped (with a warning).
int clamp_top_logprobs(const BackendProfile& profile, int requested);

class OpenAICompatibleClient final : public ChatBackend {
 public:
  OpenAICompatibleClient(BackendProfile profile, std::shared_ptr<HttpTransport> transport,
                         RetryPolicy retry = {}, Sleeper sleeper = {}, EnvLookup env = {});

  CompletionResponse complete(const ChatRequest& request) override;
  const BackendProfile& profile() const override { return profile_; }

  // Single chat request with retry on timeouts, 429 and 5xx.
  ChatOutcome chat_complete(const ChatRequest& request);

 private:
  BackendProfile profile_;
  std::shared_ptr<HttpTransport> transport_;
  RetryPolicy retry_;
  Sleeper sleeper_;
  EnvLookup env_;
};

// ---------------------------------------------------------------- cache

// Append-only keyed store: one JSON object per line, {"key":..,"response":..}.
// An empty path keeps entries in memory only.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path path = {});

  std::optional<CompletionResponse> get(const std::string& key) const;
  void put(const std::string& key, const CompletionResponse& response);
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> entries_;  // key -> serialized response
  std::ofstream out_;
};

class CachedBackend final : public ChatBackend {
 public:
  CachedBackend(ChatBackend& inner, ResponseCache& cache) : inner_(inner), cache_(cache) {}

  CompletionResponse complete(const ChatRequest& request) override;
  const BackendProfile& profile() const override { return inner_.profile(); }

  std::size_t hits() const;
  std::size_t misses() const;

 private:
  ChatBackend& inner_;
  ResponseCache& cache_;
  mutable std::mutex mu_;
  std::size_t hits_ = 0, misses_ = 0;
};

// ---------------------------------------------------------------- rate limit

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_until(time_point t) = 0;
};

class SteadyClock final : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_until(time_point t) override;
};

// Time advances only through sleep_until.
class VirtualClock final : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point t) override;
  void advance(std::chrono::nanoseconds d);

 private:
  std::mutex mu_;
  time_point now_{};
};

// At most `per_second` dispatches in any one-second window. Waiters are
// granted in arrival (FIFO) order.
class RateLimiter {
 public:
  RateLimiter(int per_second, Clock& clock);

  // Blocks until a dispatch is permitted; returns the dispatch time.
  Clock::time_point acquire();

 private:
  int per_second_;
  Clock& clock_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t serving_ = 0;
  std::deque<Clock::time_point> recent_;
};

class RateLimitedBackend final : public ChatBackend {
 public:
  RateLimitedBackend(ChatBackend& inner, RateLimiter& limiter) : inner_(inner), limiter_(limiter) {}
  CompletionResponse complete(const ChatRequest& request) override {
    limiter_.acquire();
    return inner_.complete(request);
  }
  const BackendProfile& profile() const override { return inner_.profile(); }

 private:
  ChatBackend& inner_;
  RateLimiter& limiter_;
};

// ---------------------------------------------------------------- mock judge

struct MockNoise {
  // Pairwise: P("[[1]]") = logistic((b_first - b_second) / tau); tau = 0 is
  // the noiseless sign rule.
  double tau = 0.0;
  // Absolute: the judged logit is b + N(0, absolute_logit_sd) before the
  // conversion to a proportion correct.
  double absolute_logit_sd = 0.0;
  // Width of the discretized distribution over 0.0..1.0 the answer is drawn
  // from (and that the emitted log-probabilities describe).
  double digit_spread = 0.05;
  double ability_sd = 1.0;
};

// Answers the fixed prompt formats from known item difficulties, keyed by
// item text. All randomness derives from (seed, request key), so responses do
// not depend on call order.
class MockJudgeBackend final : public ChatBackend {
 public:
  MockJudgeBackend(BackendProfile profile, std::map<std::string, double> difficulty_by_text,
                   MockNoise noise, std::uint64_t seed);

  CompletionResponse complete(const ChatRequest& request) override;
  const BackendProfile& profile() const override { return profile_; }

  std::size_t calls() const;

 private:
  BackendProfile profile_;
  std::map<std::string, double> truth_;
  MockNoise noise_;
  std::uint64_t seed_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

// Replays a fixed script of responses or failures, one per call.
class ScriptedBackend final : public ChatBackend {
 public:
  using Step = std::function<CompletionResponse(const ChatRequest&)>;

  ScriptedBackend(BackendProfile profile, std::vector<Step> steps);

  CompletionResponse complete(const ChatRequest& request) override;
  const BackendProfile& profile() const override { return profile_; }
  std::size_t calls() const;
  std::vector<ChatRequest> requests() const;

 private:
  BackendProfile profile_;
  std::vector<Step> steps_;
  mutable std::mutex mu_;
  std::vector<ChatRequest> seen_;
};

// Builds a response whose token stream is the given tokens, each position
// carrying `top` candidates (position i uses tops[i] when present).
CompletionResponse make_response(const std::vector<std::string>& tokens,
                                 const std::vector<std::vector<tokens::TokenCandidate>>& tops = {},
                                 Usage usage = {10, 3});

BackendProfile mock_profile(std::string name = "mock", int top_k_limit = 10);

}  // namespace diffcal::llm
