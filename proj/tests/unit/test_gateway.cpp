#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <thread>

#include "diffcal/elicitation.hpp"
#include "diffcal/gateway.hpp"
#include "test_util.hpp"

using namespace diffcal;
using namespace diffcal::llm;
using namespace std::chrono_literals;

namespace {

struct FakeTransport : HttpTransport {
  std::vector<HttpResponse> script;
  std::vector<nlohmann::json> bodies;
  std::vector<std::vector<std::pair<std::string, std::string>>> headers;
  std::string url, path;
  HttpResponse post(const std::string& base_url, const std::string& p,
                    const std::vector<std::pair<std::string, std::string>>& h, const std::string& body) override {
    url = base_url;
    path = p;
    headers.push_back(h);
    bodies.push_back(nlohmann::json::parse(body));
    const auto i = bodies.size() - 1;
    return i < script.size() ? script[i] : script.back();
  }
};

std::string ok_body(const std::string& text = "[[1]]", int top = 3) {
  nlohmann::json pos = nlohmann::json::array();
  for (const std::string t : {"[[", "1", "]]"}) {
    nlohmann::json tops = nlohmann::json::array();
    for (int k = 0; k < top; ++k) tops.push_back({{"token", k == 0 ? t : t + std::to_string(k)}, {"logprob", -0.1 * k}});
    pos.push_back({{"token", t}, {"logprob", -0.01}, {"top_logprobs", tops}});
  }
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}, {"logprobs", {{"content", pos}}}}}},
                        {"usage", {{"prompt_tokens", 120}, {"completion_tokens", 5}}}}
      .dump();
}

BackendProfile test_profile(int limit = 5) {
  return {"remote", "model-x", "https://example.invalid/v1", "DIFFCAL_TEST_KEY", limit, true, 0.001, 0.002};
}

EnvLookup env_with_key() {
  return [](const std::string& k) -> std::optional<std::string> {
    if (k == "DIFFCAL_TEST_KEY") return "sk-test";
    return std::nullopt;
  };
}

struct Harness {
  std::shared_ptr<FakeTransport> transport = std::make_shared<FakeTransport>();
  std::vector<std::chrono::milliseconds> sleeps;
  OpenAICompatibleClient client;
  explicit Harness(std::vector<HttpResponse> script, EnvLookup env = env_with_key(), int limit = 5)
      : client(test_profile(limit), transport, RetryPolicy{}, [this](auto d) { sleeps.push_back(d); }, env) {
    transport->script = std::move(script);
  }
};

ChatRequest request(int top = 5, int ordinal = 0) { return {"remote", "sys", "user", {1.0, top}, ordinal}; }

}  // namespace

TEST(RequestKey, ComposedFromEveryField) {
  const auto base = request_key(request());
  EXPECT_EQ(base, request_key(request()));
  EXPECT_EQ(base.size(), 64u);
  auto r = request();
  r.ordinal = 2;
  const auto k2 = request_key(r);
  r.ordinal = 1;
  EXPECT_NE(k2, request_key(r));
  EXPECT_NE(base, request_key(r));
  r = request();
  r.params.temperature = 0.7;
  EXPECT_NE(base, request_key(r));
  r = request();
  r.params.top_logprobs = 4;
  EXPECT_NE(base, request_key(r));
  r = request();
  r.user_message += " ";
  EXPECT_NE(base, request_key(r));
  r = request();
  r.profile = "other";
  EXPECT_NE(base, request_key(r));
}

TEST(Serialization, RoundTripIsByteIdentical) {
  const auto resp = make_response({"[[", "0", ".", "7", "]]"}, {{}, {{"0", -0.2}, {"1", -1.7}}, {}, {{"7", -0.5}, {"6", -1.0}}},
                                  {321, 6});
  const auto text = serialize(resp);
  const auto back = deserialize_response(text);
  EXPECT_EQ(back, resp);
  EXPECT_EQ(serialize(back), text);
}

TEST(Client, RequestBodyCarriesLogprobSettings) {
  Harness h({{200, ok_body(), ""}});
  const auto out = h.client.chat_complete(request(5));
  ASSERT_EQ(h.transport->bodies.size(), 1u);
  const auto& b = h.transport->bodies[0];
  EXPECT_EQ(b["model"], "model-x");
  EXPECT_EQ(b["messages"][0]["role"], "system");
  EXPECT_EQ(b["messages"][0]["content"], "sys");
  EXPECT_EQ(b["messages"][1]["role"], "user");
  EXPECT_EQ(b["temperature"], 1.0);
  EXPECT_EQ(b["logprobs"], true);
  EXPECT_EQ(b["top_logprobs"], 5);
  EXPECT_EQ(h.transport->path, "/chat/completions");
  EXPECT_EQ(h.transport->url, "https://example.invalid/v1");
  bool auth = false;
  for (const auto& [k, v] : h.transport->headers[0])
    if (k == "Authorization") auth = v == "Bearer sk-test";
  EXPECT_TRUE(auth);
  EXPECT_EQ(out.attempts, 1);
  EXPECT_EQ(out.response.text, "[[1]]");
  EXPECT_EQ(out.response.usage, (Usage{120, 5}));
  ASSERT_EQ(out.response.positions.size(), 3u);
  EXPECT_EQ(out.response.positions[1].token, "1");
  EXPECT_EQ(out.response.positions[1].top.size(), 3u);
}

TEST(Client, TopLogprobsClampedToProfileLimit) {
  Harness h({{200, ok_body(), ""}}, env_with_key(), 5);
  const auto out = h.client.chat_complete(request(20));
  EXPECT_EQ(out.effective_top_logprobs, 5);
  EXPECT_EQ(h.transport->bodies[0]["top_logprobs"], 5);
  auto p = test_profile(5);
  EXPECT_EQ(clamp_top_logprobs(p, 3), 3);
  EXPECT_EQ(clamp_top_logprobs(p, 0), 0);
  p.supports_logprobs = false;
  EXPECT_EQ(clamp_top_logprobs(p, 3), 0);
  const auto body = nlohmann::json::parse(build_chat_request_body(p, request(0), 0));
  EXPECT_FALSE(body.contains("logprobs"));
  EXPECT_FALSE(body.contains("top_logprobs"));
}

TEST(Client, ResponseTopListsTruncatedToLimit) {
  const auto r = parse_chat_response(ok_body("[[1]]", 8), 4);
  for (const auto& p : r.positions) EXPECT_LE(p.top.size(), 4u);
}

TEST(Client, RateLimitThenSuccessTakesTwoAttempts) {
  Harness h({{429, "slow down", ""}, {200, ok_body(), ""}});
  const auto out = h.client.chat_complete(request());
  EXPECT_EQ(out.attempts, 2);
  ASSERT_EQ(h.sleeps.size(), 1u);
  EXPECT_EQ(h.sleeps[0], 1000ms);
}

TEST(Client, TransientFailuresBackOffExponentiallyThenExhaust) {
  Harness h({{503, "", ""}, {0, "", "timeout"}, {500, "", ""}, {502, "", ""}, {504, "", ""}});
  try {
    h.client.chat_complete(request());
    FAIL();
  } catch (const RetryExhaustedError& e) {
    EXPECT_EQ(e.attempts(), 5);
  }
  EXPECT_EQ(h.transport->bodies.size(), 5u);
  EXPECT_EQ(h.sleeps, (std::vector<std::chrono::milliseconds>{1000ms, 2000ms, 4000ms, 8000ms}));
}

TEST(Client, DistinctErrorKinds) {
  {
    Harness h({{401, "no", ""}});
    EXPECT_THROW(h.client.chat_complete(request()), AuthError);
    EXPECT_TRUE(h.sleeps.empty());
  }
  {
    Harness h({{400, "bad request", ""}});
    try {
      h.client.chat_complete(request());
      FAIL();
    } catch (const BackendRequestError& e) {
      EXPECT_EQ(e.status(), 400);
    }
  }
  {
    Harness h({{200, "{\"choices\": []}", ""}});
    EXPECT_THROW(h.client.chat_complete(request()), MalformedResponseError);
  }
  {
    Harness h({{200, "not json", ""}});
    EXPECT_THROW(h.client.chat_complete(request()), MalformedResponseError);
  }
}

TEST(Client, MissingCredentialFailsBeforeAnyRequest) {
  Harness h({{200, ok_body(), ""}}, [](const std::string&) { return std::optional<std::string>{}; });
  EXPECT_THROW(h.client.chat_complete(request()), AuthError);
  EXPECT_TRUE(h.transport->bodies.empty());
}

TEST(Cache, SecondIdenticalRequestIsServedFromCache) {
  test::TempDir dir;
  ScriptedBackend inner(mock_profile("remote"), {[](const ChatRequest&) { return make_response({"[[", "1", "]]"}); }});
  ResponseCache cache(dir / "c.jsonl");
  CachedBackend cached(inner, cache);
  const auto a = cached.complete(request());
  const auto b = cached.complete(request());
  EXPECT_EQ(inner.calls(), 1u);
  EXPECT_EQ(cached.hits(), 1u);
  EXPECT_EQ(cached.misses(), 1u);
  EXPECT_EQ(serialize(a), serialize(b));
  cached.complete(request(5, 1));
  EXPECT_EQ(inner.calls(), 2u);
}

TEST(Cache, PersistsAcrossReopen) {
  test::TempDir dir;
  const auto resp = make_response({"[[", "0", ".", "4", "]]"}, {{}, {{"0", -0.1}}}, {77, 5});
  {
    ResponseCache cache(dir / "c.jsonl");
    cache.put("k1", resp);
    cache.put("k1", make_response({"x"}));  // first write wins
  }
  ResponseCache again(dir / "c.jsonl");
  EXPECT_EQ(again.size(), 1u);
  ASSERT_TRUE(again.get("k1"));
  EXPECT_EQ(serialize(*again.get("k1")), serialize(resp));
  EXPECT_FALSE(again.get("k2"));
}

TEST(Cache, TornTailDroppedCorruptLineFatal) {
  test::TempDir dir;
  {
    ResponseCache cache(dir / "c.jsonl");
    cache.put("a", make_response({"1"}));
    cache.put("b", make_response({"0"}));
  }
  const auto good = test::slurp(dir / "c.jsonl");
  test::spit(dir / "c.jsonl", good + "{\"key\":\"c\",\"resp");
  {
    ResponseCache cache(dir / "c.jsonl");
    EXPECT_EQ(cache.size(), 2u);
    cache.put("c", make_response({"1"}));
  }
  EXPECT_EQ(ResponseCache(dir / "c.jsonl").size(), 3u);
  test::spit(dir / "c.jsonl", "{\"key\":\"a\"}\n" + good);
  EXPECT_THROW(ResponseCache(dir / "c.jsonl"), CacheCorruptionError);
}

TEST(RateLimiter, NoWindowExceedsTheLimit) {
  VirtualClock clock;
  RateLimiter limiter(3, clock);
  std::vector<Clock::time_point> times;
  for (int i = 0; i < 20; ++i) {
    times.push_back(limiter.acquire());
    if (i % 7 == 3) clock.advance(300ms);
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    int in_window = 0;
    for (auto t : times)
      if (t >= times[i] && t < times[i] + 1s) ++in_window;
    EXPECT_LE(in_window, 3);
  }
  EXPECT_EQ(times[3] - times[0], 1s);
}

TEST(RateLimiter, ConcurrentCallersStayWithinLimit) {
  VirtualClock clock;
  RateLimiter limiter(4, clock);
  std::mutex mu;
  std::vector<Clock::time_point> times;
  std::vector<std::thread> pool;
  for (int t = 0; t < 6; ++t)
    pool.emplace_back([&] {
      for (int i = 0; i < 10; ++i) {
        const auto at = limiter.acquire();
        std::lock_guard lock(mu);
        times.push_back(at);
      }
    });
  for (auto& th : pool) th.join();
  ASSERT_EQ(times.size(), 60u);
  std::sort(times.begin(), times.end());
  for (std::size_t i = 0; i + 4 < times.size(); ++i) EXPECT_GE(times[i + 4] - times[i], 1s);
}

namespace {

ChatRequest mock_pairwise(const std::string& a, const std::string& b, int ordinal = 0) {
  const std::array<elicit::PromptItem, 2> items{{{a, 20}, {b, 20}}};
  const auto p = elicit::build_prompt(elicit::TemplateId::C, items, 3, Domain::addition);
  return {"mock", p.system_message, p.user_message, {1.0, 10}, ordinal};
}

ChatRequest mock_absolute(const std::string& a, int ordinal = 0) {
  const std::array<elicit::PromptItem, 1> items{{{a, 20}}};
  const auto p = elicit::build_prompt(elicit::TemplateId::A, items, 3, Domain::addition);
  return {"mock", p.system_message, p.user_message, {1.0, 10}, ordinal};
}

}  // namespace

TEST(MockJudge, NoiselessPairwiseFollowsTheSign) {
  MockJudgeBackend mock(mock_profile(), {{"easy", -1.0}, {"mid", 0.2}, {"hard", 1.5}}, {}, 3);
  for (int ord = 0; ord < 5; ++ord) {
    EXPECT_EQ(mock.complete(mock_pairwise("hard", "easy", ord)).text, "[[1]]");
    EXPECT_EQ(mock.complete(mock_pairwise("easy", "mid", ord)).text, "[[0]]");
  }
}

TEST(MockJudge, CandidateMassesMatchTheLogistic) {
  MockNoise noise;
  noise.tau = 1.0;
  MockJudgeBackend mock(mock_profile(), {{"a", 0.5}, {"b", -0.5}}, noise, 3);
  const auto r = mock.complete(mock_pairwise("a", "b"));
  const auto pos = elicit::locate_decision(r, elicit::Format::pairwise);
  ASSERT_TRUE(pos && pos->leading);
  double one = 0, zero = 0;
  for (const auto& c : r.positions[*pos->leading].top) {
    if (c.token == "1") one = std::exp(c.logprob);
    if (c.token == "0") zero = std::exp(c.logprob);
  }
  EXPECT_NEAR(one + zero, 1.0, 1e-12);
  EXPECT_NEAR(one, 1 / (1 + std::exp(-1.0)), 1e-12);
}

TEST(MockJudge, DeterministicPerRequest) {
  MockNoise noise;
  noise.tau = 1.0;
  noise.absolute_logit_sd = 0.5;
  MockJudgeBackend a(mock_profile(), {{"x", 0.1}, {"y", 0.4}}, noise, 8);
  MockJudgeBackend b(mock_profile(), {{"x", 0.1}, {"y", 0.4}}, noise, 8);
  b.complete(mock_absolute("y"));  // call order does not matter
  for (int ord = 0; ord < 10; ++ord) {
    EXPECT_EQ(a.complete(mock_absolute("x", ord)), b.complete(mock_absolute("x", ord)));
    EXPECT_EQ(a.complete(mock_pairwise("x", "y", ord)), b.complete(mock_pairwise("x", "y", ord)));
  }
}

TEST(MockJudge, AbsoluteAnswersParseAndCarryDigitMass) {
  MockNoise noise;
  noise.digit_spread = 0.1;
  MockJudgeBackend mock(mock_profile(), {{"x", 0.3}}, noise, 1);
  for (int ord = 0; ord < 30; ++ord) {
    const auto r = mock.complete(mock_absolute("x", ord));
    const auto v = elicit::parse_bracket_output(r.text, elicit::Format::absolute);
    ASSERT_TRUE(v) << r.text;
    const auto pos = elicit::locate_decision(r, elicit::Format::absolute);
    ASSERT_TRUE(pos);
    if (*v < 1) {
      ASSERT_TRUE(pos->digit);
      EXPECT_FALSE(r.positions[*pos->digit].top.empty());
    }
    EXPECT_GT(r.usage.prompt_tokens, 0);
  }
}

TEST(MockJudge, UnknownItemIsAnError) {
  MockJudgeBackend mock(mock_profile(), {{"x", 0.3}}, {}, 1);
  EXPECT_THROW(mock.complete(mock_absolute("nope")), std::exception);
}
