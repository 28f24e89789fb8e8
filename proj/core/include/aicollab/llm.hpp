#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "aicollab/retry.hpp"

namespace aicollab {

enum class Role { system, user, assistant };

const char* to_string(Role r) noexcept;

struct ChatMessage {
  Role role = Role::user;
  std::string content;
  std::optional<std::string> speaker_name;  // multi-party attribution

  bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
  std::string model_id = "gpt-4";
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_output_tokens = 400;
  std::string request_id;

  // Non-empty messages, non-empty contents, at most one system message and
  // only in first position, temperature in [0, 2], positive token cap.
  void validate() const;
};

enum class FinishReason { stop, length, content_filter };

const char* to_string(FinishReason r) noexcept;

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct CompletionResult {
  std::string content;
  FinishReason finish_reason = FinishReason::stop;
  TokenUsage usage;
  std::chrono::milliseconds latency{0};
  int attempts = 1;
};

inline constexpr double kDefaultTokenFactor = 1.3;

// ceil(whitespace chunks * factor).
std::int64_t count_tokens_estimate(std::string_view text, double factor = kDefaultTokenFactor);
std::int64_t count_tokens_estimate(const std::vector<ChatMessage>& messages, double factor = kDefaultTokenFactor);

// One backend round trip, no retries. Throws RemoteError on failure.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string name() const = 0;
  virtual CompletionResult complete_once(const CompletionRequest& request) = 0;
};

// Replies with the content of the last user message.
class EchoBackend final : public ChatBackend {
 public:
  std::string name() const override { return "echo"; }
  CompletionResult complete_once(const CompletionRequest& request) override;
};

struct ScriptRule {
  std::string match;  // case-insensitive substring of the last message
  std::string reply;
};

// First rule whose `match` occurs in the last message wins; otherwise the
// fallback reply is used. Stateless, so identical request sequences give
// identical result sequences.
class ScriptedBackend final : public ChatBackend {
 public:
  static constexpr std::string_view kDefaultFallback = "Noted.";

  explicit ScriptedBackend(std::vector<ScriptRule> rules, std::string fallback = std::string(kDefaultFallback));

  std::string name() const override { return "scripted"; }
  CompletionResult complete_once(const CompletionRequest& request) override;

  const std::vector<ScriptRule>& rules() const noexcept { return rules_; }

 private:
  std::vector<ScriptRule> rules_;
  std::string fallback_;
};

struct GatewayConfig {
  RetryPolicy retry;
  // Total token budget across all calls through this gateway; unset = unlimited.
  std::optional<std::int64_t> token_budget;
  std::size_t max_in_flight = 8;
  double token_factor = kDefaultTokenFactor;
};

// Uniform completion entry point: validation, in-flight cap, token budget,
// retries with backoff.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<ChatBackend> backend, GatewayConfig config = {}, Sleeper sleeper = {},
                   std::uint64_t seed = 0x5eed);

  CompletionResult complete(const CompletionRequest& request);

  std::int64_t tokens_used() const noexcept { return tokens_used_.load(); }
  std::string backend_name() const { return backend_->name(); }
  const GatewayConfig& config() const noexcept { return config_; }

 private:
  void reserve_budget(std::int64_t estimate);
  void settle_budget(std::int64_t reserved, std::int64_t actual);

  std::shared_ptr<ChatBackend> backend_;
  GatewayConfig config_;
  Retrier retrier_;
  std::atomic<std::int64_t> tokens_used_{0};
  std::mutex budget_mutex_;
  std::int64_t reserved_{0};
  std::mutex flight_mutex_;
  std::condition_variable flight_cv_;
  std::size_t in_flight_ = 0;
};

// Chat-completions wire format.
nlohmann::json to_chat_completions_body(const CompletionRequest& request);
CompletionResult parse_chat_completions_response(const nlohmann::json& body);

}  // namespace aicollab
