#include <doctest.h>

#include <atomic>
#include <nlohmann/json.hpp>
#include <thread>

#include "aicollab/error.hpp"
#include "aicollab/llm.hpp"

using namespace aicollab;
using namespace std::chrono_literals;

namespace {

CompletionRequest request(std::string text = "hello there") {
  CompletionRequest r;
  r.messages = {{Role::system, "be nice", {}}, {Role::user, std::move(text), "Ana"}};
  return r;
}

// Fails with the given kinds in order, then succeeds.
class FlakyBackend final : public ChatBackend {
 public:
  explicit FlakyBackend(std::vector<RemoteError> failures) : failures_(std::move(failures)) {}
  std::string name() const override { return "flaky"; }
  CompletionResult complete_once(const CompletionRequest&) override {
    const auto n = calls++;
    if (n < failures_.size()) throw failures_[n];
    CompletionResult r;
    r.content = "ok";
    r.usage = {10, 2};
    return r;
  }
  std::size_t calls = 0;

 private:
  std::vector<RemoteError> failures_;
};

struct RecordingSleeper {
  std::shared_ptr<std::vector<std::chrono::milliseconds>> slept = std::make_shared<std::vector<std::chrono::milliseconds>>();
  Sleeper fn() {
    auto s = slept;
    return [s](std::chrono::milliseconds d) { s->push_back(d); };
  }
};

}  // namespace

TEST_SUITE("llm") {
  TEST_CASE("request validation collects every problem") {
    CompletionRequest r;
    r.temperature = 3;
    r.max_output_tokens = 0;
    try {
      r.validate();
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.findings().size() >= 3);
    }
    auto two_systems = request();
    two_systems.messages.push_back({Role::system, "again", {}});
    CHECK_THROWS_AS(two_systems.validate(), ValidationError);
    auto empty = request("");
    CHECK_THROWS_AS(empty.validate(), ValidationError);
    CHECK_NOTHROW(request().validate());
  }

  TEST_CASE("token estimate") {
    CHECK(count_tokens_estimate("one two three") == 4);  // ceil(3 * 1.3)
    CHECK(count_tokens_estimate("") == 0);
    CHECK(count_tokens_estimate("a b", 2.0) == 4);
  }

  TEST_CASE("echo and scripted backends") {
    EchoBackend echo;
    CHECK(echo.complete_once(request("repeat me")).content == "repeat me");
    ScriptedBackend scripted(std::vector<ScriptRule>{{"budget", "Let's cap it at 500."}, {"venue", "The hall is free."}});
    CHECK(scripted.complete_once(request("What about the BUDGET?")).content == "Let's cap it at 500.");
    CHECK(scripted.complete_once(request("venue and budget")).content == "Let's cap it at 500.");
    CHECK(scripted.complete_once(request("unrelated")).content == "Noted.");
    CHECK_THROWS_AS(ScriptedBackend(std::vector<ScriptRule>{{"", "x"}}), ParameterError);
    CHECK_THROWS_AS(ScriptedBackend(std::vector<ScriptRule>{}, ""), ParameterError);
  }

  TEST_CASE("backoff schedule") {
    RetryPolicy p;
    p.jitter = 0;
    CHECK(p.backoff(0, 0.5) == 500ms);
    CHECK(p.backoff(1, 0.5) == 1000ms);
    CHECK(p.backoff(2, 0.5) == 2000ms);
    CHECK(p.backoff(10, 0.5) == 8000ms);  // capped
    p.jitter = 0.25;
    CHECK(p.backoff(0, 0.0) == 500ms);
    CHECK(p.backoff(0, 1.0) == 375ms);
  }

  TEST_CASE("retries transient failures and reports attempts") {
    RecordingSleeper sleeper;
    auto backend = std::make_shared<FlakyBackend>(std::vector<RemoteError>{
        RemoteError(RemoteErrorKind::server, "503"), RemoteError(RemoteErrorKind::rate_limit, "429", 1500ms)});
    Gateway gw(backend, {}, sleeper.fn(), 1);
    const auto r = gw.complete(request());
    CHECK(r.content == "ok");
    CHECK(r.attempts == 3);
    REQUIRE(sleeper.slept->size() == 2);
    CHECK((*sleeper.slept)[0] <= 500ms);
    CHECK((*sleeper.slept)[0] >= 375ms);
    CHECK((*sleeper.slept)[1] == 1500ms);  // server advice wins
    CHECK(gw.tokens_used() == 12);
  }

  TEST_CASE("non-retryable errors surface immediately") {
    RecordingSleeper sleeper;
    auto backend = std::make_shared<FlakyBackend>(std::vector<RemoteError>{RemoteError(RemoteErrorKind::auth, "401")});
    Gateway gw(backend, {}, sleeper.fn());
    try {
      gw.complete(request());
      FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
      CHECK(e.kind() == RemoteErrorKind::auth);
      CHECK(e.attempts() == 1);
    }
    CHECK(sleeper.slept->empty());
  }

  TEST_CASE("gives up after max attempts") {
    RecordingSleeper sleeper;
    std::vector<RemoteError> fails(10, RemoteError(RemoteErrorKind::network, "down"));
    auto backend = std::make_shared<FlakyBackend>(fails);
    Gateway gw(backend, {}, sleeper.fn());
    try {
      gw.complete(request());
      FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
      CHECK(e.kind() == RemoteErrorKind::network);
      CHECK(e.attempts() == 4);
    }
    CHECK(backend->calls == 4);
  }

  TEST_CASE("deadline converts to a timeout") {
    RecordingSleeper sleeper;
    GatewayConfig cfg;
    cfg.retry.deadline = 1000ms;
    std::vector<RemoteError> fails(10, RemoteError(RemoteErrorKind::rate_limit, "slow down", 5000ms));
    Gateway gw(std::make_shared<FlakyBackend>(fails), cfg, sleeper.fn());
    try {
      gw.complete(request());
      FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
      CHECK(e.kind() == RemoteErrorKind::timeout);
    }
  }

  TEST_CASE("token budget") {
    GatewayConfig cfg;
    cfg.token_budget = 50;
    Gateway gw(std::make_shared<EchoBackend>(), cfg);
    auto r = request("hi");
    r.max_output_tokens = 10;
    CHECK_NOTHROW(gw.complete(r));
    r.max_output_tokens = 1000;
    try {
      gw.complete(r);
      FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
      CHECK(e.kind() == RemoteErrorKind::budget_exceeded);
    }
  }

  TEST_CASE("in-flight cap holds under concurrency") {
    class SlowBackend final : public ChatBackend {
     public:
      std::string name() const override { return "slow"; }
      CompletionResult complete_once(const CompletionRequest&) override {
        const int now = ++active;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(5ms);
        --active;
        return CompletionResult{"x", FinishReason::stop, {1, 1}, {}, 1};
      }
      std::atomic<int> active{0}, peak{0};
    };
    auto backend = std::make_shared<SlowBackend>();
    GatewayConfig cfg;
    cfg.max_in_flight = 2;
    Gateway gw(backend, cfg);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&] { gw.complete(request()); });
    for (auto& t : threads) t.join();
    CHECK(backend->peak.load() <= 2);
    CHECK(backend->peak.load() >= 1);
  }

  TEST_CASE("chat-completions wire format") {
    auto r = request();
    r.messages[1].speaker_name = "Ana María";
    const auto body = to_chat_completions_body(r);
    CHECK(body["model"] == "gpt-4");
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][1]["name"] == "Ana_Mar__a");
    CHECK(body["max_tokens"] == 400);

    const auto ok = parse_chat_completions_response(nlohmann::json::parse(
        R"({"choices":[{"message":{"content":"hi"},"finish_reason":"length"}],"usage":{"prompt_tokens":5,"completion_tokens":1}})"));
    CHECK(ok.content == "hi");
    CHECK(ok.finish_reason == FinishReason::length);
    CHECK(ok.usage.prompt_tokens == 5);
    CHECK_THROWS_AS(parse_chat_completions_response(nlohmann::json::parse(R"({"choices":[]})")), RemoteError);
    try {
      parse_chat_completions_response(
          nlohmann::json::parse(R"({"choices":[{"message":{"content":null},"finish_reason":"content_filter"}]})"));
      FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
      CHECK(e.kind() == RemoteErrorKind::content_policy);
    }
  }
}
