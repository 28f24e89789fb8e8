#include "aicollab/llm.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "aicollab/error.hpp"
#include "aicollab/text.hpp"

namespace aicollab {

using nlohmann::json;

const char* to_string(Role r) noexcept {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

const char* to_string(FinishReason r) noexcept {
  switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::content_filter: return "content_filter";
  }
  return "?";
}

void CompletionRequest::validate() const {
  std::vector<std::string> findings;
  if (messages.empty()) findings.emplace_back("messages: must not be empty");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (messages[i].content.empty()) findings.push_back("messages[" + std::to_string(i) + "]: empty content");
    if (messages[i].role == Role::system && i != 0) {
      findings.push_back("messages[" + std::to_string(i) + "]: system message only allowed first");
    }
  }
  if (!(temperature >= 0.0 && temperature <= 2.0)) findings.emplace_back("temperature: must be in [0, 2]");
  if (max_output_tokens < 1) findings.emplace_back("max_output_tokens: must be positive");
  if (model_id.empty()) findings.emplace_back("model_id: must not be empty");
  if (!findings.empty()) throw ValidationError("invalid completion request", std::move(findings));
}

std::int64_t count_tokens_estimate(std::string_view s, double factor) {
  const auto chunks = static_cast<double>(text::word_count(s));
  // epsilon absorbs representation error, e.g. 10 * 1.1 = 11.000000000000002
  return static_cast<std::int64_t>(std::ceil(chunks * factor - 1e-9));
}

std::int64_t count_tokens_estimate(const std::vector<ChatMessage>& messages, double factor) {
  std::int64_t total = 0;
  for (const auto& m : messages) total += count_tokens_estimate(m.content, factor);
  return total;
}

namespace {

CompletionResult make_local_result(const CompletionRequest& request, std::string content) {
  CompletionResult r;
  r.usage.prompt_tokens = count_tokens_estimate(request.messages);
  r.usage.completion_tokens = count_tokens_estimate(content);
  r.content = std::move(content);
  return r;
}

}  // namespace

CompletionResult EchoBackend::complete_once(const CompletionRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == Role::user) return make_local_result(request, it->content);
  }
  throw RemoteError(RemoteErrorKind::invalid_request, "echo backend needs a user message");
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptRule> rules, std::string fallback)
    : rules_(std::move(rules)), fallback_(std::move(fallback)) {
  if (fallback_.empty()) throw ParameterError("scripted backend fallback reply must not be empty");
  for (const auto& r : rules_) {
    if (r.match.empty() || r.reply.empty()) throw ParameterError("scripted rule needs non-empty match and reply");
  }
}

CompletionResult ScriptedBackend::complete_once(const CompletionRequest& request) {
  const auto& last = request.messages.back().content;
  for (const auto& rule : rules_) {
    if (text::contains_ci(last, rule.match)) return make_local_result(request, rule.reply);
  }
  return make_local_result(request, fallback_);
}

Gateway::Gateway(std::shared_ptr<ChatBackend> backend, GatewayConfig config, Sleeper sleeper, std::uint64_t seed)
    : backend_(std::move(backend)), config_(config), retrier_(config.retry, std::move(sleeper), seed) {
  if (!backend_) throw ParameterError("gateway needs a backend");
  if (config_.max_in_flight == 0) throw ParameterError("gateway max_in_flight must be positive");
}

void Gateway::reserve_budget(std::int64_t estimate) {
  if (!config_.token_budget) return;
  std::lock_guard lock(budget_mutex_);
  if (tokens_used_.load() + reserved_ + estimate > *config_.token_budget) {
    throw RemoteError(RemoteErrorKind::budget_exceeded,
                      "token budget of " + std::to_string(*config_.token_budget) + " would be exceeded");
  }
  reserved_ += estimate;
}

void Gateway::settle_budget(std::int64_t reserved, std::int64_t actual) {
  std::lock_guard lock(budget_mutex_);
  if (config_.token_budget) reserved_ -= reserved;
  tokens_used_ += actual;
}

CompletionResult Gateway::complete(const CompletionRequest& request) {
  request.validate();
  const auto estimate = count_tokens_estimate(request.messages, config_.token_factor) + request.max_output_tokens;
  reserve_budget(estimate);

  {
    std::unique_lock lock(flight_mutex_);
    flight_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
  }
  struct FlightRelease {
    Gateway* self;
    ~FlightRelease() {
      {
        std::lock_guard lock(self->flight_mutex_);
        --self->in_flight_;
      }
      self->flight_cv_.notify_one();
    }
  } release{this};

  const auto started = std::chrono::steady_clock::now();
  try {
    int attempts = 0;
    auto result = retrier_.run([&](int attempt) {
      attempts = attempt;
      return backend_->complete_once(request);
    });
    result.attempts = attempts;
    result.latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
    std::int64_t actual = result.usage.prompt_tokens + result.usage.completion_tokens;
    if (actual == 0) actual = count_tokens_estimate(request.messages, config_.token_factor) +
                              count_tokens_estimate(result.content, config_.token_factor);
    settle_budget(estimate, actual);
    return result;
  } catch (...) {
    settle_budget(estimate, 0);
    throw;
  }
}

json to_chat_completions_body(const CompletionRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json msg = {{"role", to_string(m.role)}, {"content", m.content}};
    if (m.speaker_name) {
      // the wire format restricts names to [A-Za-z0-9_-]{1,64}
      std::string name;
      for (char c : *m.speaker_name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
        name.push_back(ok ? c : '_');
        if (name.size() == 64) break;
      }
      if (!name.empty()) msg["name"] = name;
    }
    messages.push_back(std::move(msg));
  }
  return {{"model", request.model_id},
          {"messages", messages},
          {"temperature", request.temperature},
          {"max_tokens", request.max_output_tokens}};
}

CompletionResult parse_chat_completions_response(const json& body) {
  try {
    const auto& choice = body.at("choices").at(0);
    CompletionResult r;
    const auto& content = choice.at("message").at("content");
    r.content = content.is_null() ? std::string() : content.get<std::string>();
    const auto reason = choice.value("finish_reason", std::string("stop"));
    if (reason == "length") r.finish_reason = FinishReason::length;
    else if (reason == "content_filter") r.finish_reason = FinishReason::content_filter;
    else r.finish_reason = FinishReason::stop;
    if (body.contains("usage") && body["usage"].is_object()) {
      r.usage.prompt_tokens = body["usage"].value("prompt_tokens", 0);
      r.usage.completion_tokens = body["usage"].value("completion_tokens", 0);
    }
    if (r.finish_reason == FinishReason::content_filter) {
      throw RemoteError(RemoteErrorKind::content_policy, "completion withheld by content filter");
    }
    return r;
  } catch (const json::exception& e) {
    throw RemoteError(RemoteErrorKind::server, std::string("malformed completion response: ") + e.what());
  }
}

}  // namespace aicollab
