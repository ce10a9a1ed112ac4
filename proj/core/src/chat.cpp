#include <nlohmann/json.hpp>

#include "diffcal/digest.hpp"
#include "diffcal/gateway.hpp"

namespace diffcal::llm {

using nlohmann::ordered_json;

void BackendProfile::validate() const {
  if (name.empty()) throw std::invalid_argument("backend profile needs a name");
  if (supports_logprobs && top_k_limit < 1)
    throw std::invalid_argument("backend '" + name + "': top_k_limit must be >= 1 with log-probabilities");
  if (price_per_1k_prompt_tokens < 0 || price_per_1k_completion_tokens < 0)
    throw std::invalid_argument("backend '" + name + "': prices must be non-negative");
}

BackendProfile gpt4o_profile() {
  return {"gpt-4o", "gpt-4o-2024-08-06", "https://api.openai.com/v1", "OPENAI_API_KEY", 10, true,
          0.0025, 0.01};
}

BackendProfile deepseek_chat_profile() {
  return {"deepseek-chat", "deepseek-chat", "https://api.deepseek.com/v1", "DEEPSEEK_API_KEY", 20, true,
          0.0, 0.0};
}

BackendProfile qwen_profile() {
  return {"qwen", "qwen3-235b-a22b-instruct-2507", "https://dashscope-intl.aliyuncs.com/compatible-mode/v1",
          "DASHSCOPE_API_KEY", 5, true, 0.0, 0.0};
}

BackendProfile mock_profile(std::string name, int top_k_limit) {
  return {std::move(name), "mock-judge", "", "", top_k_limit, true, 0.0025, 0.01};
}

namespace {

ordered_json candidates_json(const std::vector<tokens::TokenCandidate>& top) {
  ordered_json arr = ordered_json::array();
  for (const auto& c : top) arr.push_back(ordered_json{{"token", c.token}, {"logprob", c.logprob}});
  return arr;
}

}  // namespace

std::string serialize(const CompletionResponse& r) {
  ordered_json j;
  j["text"] = r.text;
  j["positions"] = ordered_json::array();
  for (const auto& p : r.positions) {
    j["positions"].push_back(
        ordered_json{{"token", p.token}, {"logprob", p.logprob}, {"top", candidates_json(p.top)}});
  }
  j["usage"] = ordered_json{{"prompt_tokens", r.usage.prompt_tokens},
                            {"completion_tokens", r.usage.completion_tokens}};
  j["latency_ms"] = r.latency_ms;
  return j.dump();
}

CompletionResponse deserialize_response(std::string_view json_text) {
  const auto j = nlohmann::json::parse(json_text);
  CompletionResponse r;
  r.text = j.at("text").get<std::string>();
  for (const auto& p : j.at("positions")) {
    TokenPosition pos;
    pos.token = p.at("token").get<std::string>();
    pos.logprob = p.at("logprob").get<double>();
    for (const auto& c : p.at("top"))
      pos.top.push_back({c.at("token").get<std::string>(), c.at("logprob").get<double>()});
    r.positions.push_back(std::move(pos));
  }
  r.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<std::int64_t>();
  r.usage.completion_tokens = j.at("usage").at("completion_tokens").get<std::int64_t>();
  r.latency_ms = j.at("latency_ms").get<double>();
  return r;
}

std::string request_key(const ChatRequest& request) {
  ordered_json j;
  j["profile"] = request.profile;
  j["system"] = request.system_message;
  j["user"] = request.user_message;
  j["temperature"] = request.params.temperature;
  j["top_logprobs"] = request.params.top_logprobs;
  j["ordinal"] = request.ordinal;
  return sha256_hex(j.dump());
}

CompletionResponse make_response(const std::vector<std::string>& toks,
                                 const std::vector<std::vector<tokens::TokenCandidate>>& tops,
                                 Usage usage) {
  CompletionResponse r;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    TokenPosition p;
    p.token = toks[i];
    if (i < tops.size()) p.top = tops[i];
    for (const auto& c : p.top)
      if (c.token == p.token) p.logprob = c.logprob;
    r.text += toks[i];
    r.positions.push_back(std::move(p));
  }
  r.usage = usage;
  return r;
}

ScriptedBackend::ScriptedBackend(BackendProfile profile, std::vector<Step> steps)
    : profile_(std::move(profile)), steps_(std::move(steps)) {}

CompletionResponse ScriptedBackend::complete(const ChatRequest& request) {
  Step step;
  {
    std::lock_guard lock(mu_);
    const auto idx = seen_.size();
    seen_.push_back(request);
    if (steps_.empty()) throw GatewayError("scripted backend has no steps");
    step = steps_[std::min(idx, steps_.size() - 1)];
  }
  return step(request);
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return seen_.size();
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mu_);
  return seen_;
}

}  // namespace diffcal::llm
