#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "aicollab/retry.hpp"

namespace aicollab {

enum class EnvelopeType { verification_challenge, message_event, unsupported };

const char* to_string(EnvelopeType t) noexcept;

struct PlatformEvent {
  EnvelopeType envelope_type = EnvelopeType::unsupported;
  std::string channel;
  std::string user;
  std::string text;
  std::string ts;         // platform timestamp, e.g. "1531420618.000200"
  std::string challenge;  // verification_challenge only
  nlohmann::json raw;

  // Platform timestamp as epoch seconds (0 when absent).
  double timestamp() const;
  // Dedup key: the platform's message id, or the ts when none is given.
  std::string message_id() const;
};

inline constexpr std::string_view kSignatureVersion = "v0";
inline constexpr double kSignatureMaxAgeSeconds = 300.0;

// "v0=" + hex(HMAC-SHA256(secret, "v0:" + timestamp + ":" + body)).
std::string compute_signature(std::string_view timestamp, std::string_view body, std::string_view secret);

// Constant-time check of the signature header. Requests whose timestamp is
// more than five minutes away from `now` are rejected even when the
// signature is valid; malformed headers yield false.
bool verify_signature(std::string_view timestamp_header, std::string_view signature_header, std::string_view body,
                      std::string_view secret, double now);

// Maps a callback payload onto a PlatformEvent. Returns nullopt for echoes of
// the bot's own messages. Throws ParameterError on a malformed payload.
std::optional<PlatformEvent> parse_event(std::string_view payload, std::string_view bot_user_id);

// Remembers the most recent `capacity` message ids per channel.
class DedupWindow {
 public:
  static constexpr std::size_t kDefaultCapacity = 1000;

  explicit DedupWindow(std::size_t capacity = kDefaultCapacity);

  // True the first time (channel, id) is offered while it is in the window.
  bool first_delivery(const std::string& channel, const std::string& message_id);

 private:
  struct Window {
    std::deque<std::string> order;
    std::unordered_set<std::string> ids;
  };

  std::size_t capacity_;
  std::mutex mutex_;
  std::map<std::string, Window> windows_;
};

inline constexpr std::size_t kDefaultPlatformMessageCap = 4000;

// Outbound side of a chat platform. Text longer than the platform cap is sent
// as sequential chunks; one message id per chunk is returned.
class ChatPlatform {
 public:
  virtual ~ChatPlatform() = default;
  virtual std::string name() const = 0;
  virtual std::vector<std::string> send_message(const std::string& channel, const std::string& text) = 0;
};

struct LoopbackMessage {
  std::string message_id;
  std::string channel;
  std::string text;
};

// In-process platform used by tests and the portal's embedded chat.
class LoopbackAdapter final : public ChatPlatform {
 public:
  using Sink = std::function<void(const LoopbackMessage&)>;

  explicit LoopbackAdapter(std::size_t max_chars = kDefaultPlatformMessageCap);

  std::string name() const override { return "loopback"; }
  std::vector<std::string> send_message(const std::string& channel, const std::string& text) override;

  void add_channel(const std::string& channel);
  bool has_channel(const std::string& channel) const;
  void set_sink(Sink sink);

  // Everything sent to the channel so far, in send order.
  std::vector<LoopbackMessage> sent(const std::string& channel) const;

 private:
  std::size_t max_chars_;
  mutable std::mutex mutex_;
  std::set<std::string> channels_;
  std::map<std::string, std::vector<LoopbackMessage>> sent_;
  std::map<std::string, std::uint64_t> counters_;
  Sink sink_;
};

struct SlackConfig {
  std::string base_url = "https://slack.com/api";
  std::string bot_token;
  RetryPolicy retry;
  std::size_t max_chars = kDefaultPlatformMessageCap;
  std::chrono::milliseconds timeout{10000};
};

// chat.postMessage over HTTPS with the gateway's retry policy.
class SlackAdapter final : public ChatPlatform {
 public:
  explicit SlackAdapter(SlackConfig config, Sleeper sleeper = {});

  std::string name() const override { return "slack"; }
  std::vector<std::string> send_message(const std::string& channel, const std::string& text) override;

 private:
  std::string post_once(const std::string& channel, const std::string& text);

  SlackConfig config_;
  Retrier retrier_;
};

// Runs submitted work per key in submission order. Work for distinct keys
// may run concurrently; the submitting thread drains its key's queue when no
// other thread is doing so.
class OrderedDispatcher {
 public:
  using Task = std::function<void()>;
  using ErrorHandler = std::function<void(const std::string& key, const std::exception&)>;

  explicit OrderedDispatcher(ErrorHandler on_error = {});

  void submit(const std::string& key, Task task);

 private:
  struct Lane {
    std::deque<Task> queue;
    bool draining = false;
  };

  ErrorHandler on_error_;
  std::mutex mutex_;
  std::map<std::string, Lane> lanes_;
};

}  // namespace aicollab
