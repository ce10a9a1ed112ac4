#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <nlohmann/json.hpp>
#include <thread>

#include "diffcal/gateway.hpp"

namespace diffcal::llm {
namespace {

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

  HttpResponse post(const std::string& base_url, const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body) override {
    // Split "scheme://host[:port]/prefix" into the client origin and a path prefix.
    const auto scheme_end = base_url.find("://");
    const auto host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto slash = base_url.find('/', host_begin);
    const std::string origin = slash == std::string::npos ? base_url : base_url.substr(0, slash);
    std::string prefix = slash == std::string::npos ? "" : base_url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

    httplib::Client client(origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(prefix + path, h, body, "application/json");
    if (!res) return {0, {}, httplib::to_string(res.error())};
    return {res->status, res->body, {}};
  }

 private:
  std::chrono::seconds timeout_;
};

std::optional<std::string> getenv_lookup(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout) {
  return std::make_shared<HttplibTransport>(timeout);
}

int clamp_top_logprobs(const BackendProfile& profile, int requested) {
  if (!profile.supports_logprobs || requested <= 0) return 0;
  if (requested > profile.top_k_limit) {
    spdlog::warn("top_logprobs={} exceeds the limit of backend '{}'; clamped to {}", requested,
                 profile.name, profile.top_k_limit);
    return profile.top_k_limit;
  }
  return requested;
}

std::string build_chat_request_body(const BackendProfile& profile, const ChatRequest& request,
                                    int top_logprobs) {
  nlohmann::ordered_json j;
  j["model"] = profile.model;
  j["messages"] = nlohmann::ordered_json::array(
      {{{"role", "system"}, {"content", request.system_message}},
       {{"role", "user"}, {"content", request.user_message}}});
  j["temperature"] = request.params.temperature;
  if (top_logprobs > 0) {
    j["logprobs"] = true;
    j["top_logprobs"] = top_logprobs;
  }
  return j.dump();
}

CompletionResponse parse_chat_response(std::string_view body, int top_k_limit) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
  }
  try {
    CompletionResponse r;
    const auto& choice = j.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    r.text = content.is_null() ? std::string() : content.get<std::string>();
    if (choice.contains("logprobs") && !choice["logprobs"].is_null() &&
        choice["logprobs"].contains("content") && !choice["logprobs"]["content"].is_null()) {
      for (const auto& p : choice["logprobs"]["content"]) {
        TokenPosition pos;
        pos.token = p.at("token").get<std::string>();
        pos.logprob = p.at("logprob").get<double>();
        if (p.contains("top_logprobs") && p["top_logprobs"].is_array()) {
          for (const auto& c : p["top_logprobs"]) {
            if (static_cast<int>(pos.top.size()) >= top_k_limit) break;
            pos.top.push_back({c.at("token").get<std::string>(), c.at("logprob").get<double>()});
          }
        }
        r.positions.push_back(std::move(pos));
      }
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      r.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
      r.usage.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
    }
    if (r.usage.prompt_tokens < 0 || r.usage.completion_tokens < 0)
      throw MalformedResponseError("negative token usage");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponseError(std::string("unexpected response shape: ") + e.what());
  }
}

OpenAICompatibleClient::OpenAICompatibleClient(BackendProfile profile,
                                               std::shared_ptr<HttpTransport> transport,
                                               RetryPolicy retry, Sleeper sleeper, EnvLookup env)
    : profile_(std::move(profile)),
      transport_(std::move(transport)),
      retry_(retry),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](auto d) { std::this_thread::sleep_for(d); })),
      env_(env ? std::move(env) : EnvLookup(getenv_lookup)) {
  profile_.validate();
  if (!transport_) throw std::invalid_argument("OpenAICompatibleClient needs a transport");
}

CompletionResponse OpenAICompatibleClient::complete(const ChatRequest& request) {
  return chat_complete(request).response;
}

ChatOutcome OpenAICompatibleClient::chat_complete(const ChatRequest& request) {
  std::vector<std::pair<std::string, std::string>> headers;
  if (!profile_.auth_env_var.empty()) {
    const auto key = env_(profile_.auth_env_var);
    if (!key || key->empty())
      throw AuthError("environment variable " + profile_.auth_env_var + " is not set for backend '" +
                      profile_.name + "'");
    headers.emplace_back("Authorization", "Bearer " + *key);
  }
  ChatOutcome out;
  out.effective_top_logprobs = clamp_top_logprobs(profile_, request.params.top_logprobs);
  const std::string body = build_chat_request_body(profile_, request, out.effective_top_logprobs);

  std::string last_error;
  for (int attempt = 1; attempt <= retry_.max_tries; ++attempt) {
    out.attempts = attempt;
    const auto t0 = std::chrono::steady_clock::now();
    const HttpResponse res = transport_->post(profile_.base_url, "/chat/completions", headers, body);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (res.status == 200) {
      out.response = parse_chat_response(res.body, profile_.top_k_limit);
      out.response.latency_ms = ms;
      return out;
    }
    if (res.status == 401 || res.status == 403)
      throw AuthError("backend '" + profile_.name + "' rejected credentials (HTTP " +
                      std::to_string(res.status) + ")");
    const bool transient = res.status == 0 || res.status == 429 || res.status >= 500;
    if (!transient)
      throw BackendRequestError("backend '" + profile_.name + "' returned HTTP " + std::to_string(res.status) +
                                    ": " + res.body.substr(0, 200),
                                res.status);
    last_error = res.status == 0 ? res.error : "HTTP " + std::to_string(res.status);
    if (attempt == retry_.max_tries) break;
    const auto delay = std::chrono::milliseconds(static_cast<std::int64_t>(
        static_cast<double>(retry_.base_delay.count()) * std::pow(retry_.factor, attempt - 1)));
    spdlog::warn("backend '{}' transient failure ({}); retrying in {} ms", profile_.name, last_error,
                 delay.count());
    sleeper_(delay);
  }
  throw RetryExhaustedError("backend '" + profile_.name + "' failed after " +
                                std::to_string(retry_.max_tries) + " tries: " + last_error,
                            retry_.max_tries);
}

}  // namespace diffcal::llm
