#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aicollab/embedding.hpp"
#include "aicollab/event_store.hpp"
#include "aicollab/llm.hpp"
#include "aicollab/memory.hpp"

namespace aicollab {

struct Participant {
  std::string participant_id;
  std::string display_name;
  bool is_bot = false;

  bool operator==(const Participant&) const = default;
};

struct LogicFilterConfig {
  bool respond_when_mentioned = true;
  double proactivity_threshold = 0.8;  // in [0, 1]
  int min_seconds_between_bot_messages = 30;
  int max_reply_tokens = 400;
  bool scope_guard_enabled = true;

  void validate() const;
  bool operator==(const LogicFilterConfig&) const = default;
};

enum class SessionStatus { pending, live, ended };
enum class EndReason { deadline, manual };

const char* to_string(SessionStatus s) noexcept;
const char* to_string(EndReason r) noexcept;

struct TranscriptLine {
  std::string speaker_id;
  std::string display_name;
  std::string text;
  double timestamp = 0.0;
  bool from_bot = false;
};

struct SessionState {
  std::string session_id;
  std::string channel_id;
  std::string experiment_id;
  std::vector<Participant> participants;  // exactly one has is_bot
  std::string task_title;
  std::string task_instructions;
  std::vector<std::string> context_document_ids;
  double started_at = 0.0;
  double deadline = 0.0;
  std::deque<TranscriptLine> transcript_window;
  std::optional<double> bot_last_spoke_at;
  std::uint64_t message_counter = 0;
  SessionStatus status = SessionStatus::pending;

  const Participant& bot() const;
  const Participant* find_participant(std::string_view participant_id) const;
  void validate() const;
};

struct IncomingMessage {
  std::string channel_id;
  std::string speaker_id;
  std::string display_name;
  std::string content;
  double timestamp = 0.0;
  std::string platform_message_id;
};

enum class DecisionReason { mentioned, proactive, cooldown, below_threshold };

const char* to_string(DecisionReason r) noexcept;

struct Decision {
  bool respond = false;
  DecisionReason reason = DecisionReason::below_threshold;

  bool operator==(const Decision&) const = default;
};

// Case-insensitive whole-word mention of the bot's display name (optionally
// prefixed with '@'), or a platform mention token "<@bot_id>".
bool mentions_bot(const SessionState& session, std::string_view content);

// respond iff (mentioned and respond_when_mentioned, or relevance >= threshold)
// and the cooldown since the bot last spoke has elapsed.
Decision decide_respond(const SessionState& session, const IncomingMessage& msg, const LogicFilterConfig& config,
                        double relevance);

struct PromptBudget {
  std::int64_t max_tokens = 3000;
  double token_factor = kDefaultTokenFactor;
};

// System message (persona, "[memory]" digest in score order, scope guard),
// then the transcript window with "<display_name>: " prefixes. Over budget,
// the oldest transcript lines go first, then the lowest-scored memories. The
// newest transcript line is never dropped; if it still does not fit a
// ConfigError is thrown.
std::vector<ChatMessage> build_prompt(const SessionState& session, std::string_view persona_prompt,
                                      std::span<const ScoredMemory> retrieved, const LogicFilterConfig& filter,
                                      const PromptBudget& budget);

struct RetrievalSettings {
  RetrievalWeights weights;
  double lambda = kDefaultDecayLambda;
  std::size_t k = kDefaultTopK;

  bool operator==(const RetrievalSettings&) const = default;
};

struct GatewaySettings {
  std::string model_id = "gpt-4";
  double temperature = 0.7;
  int max_output_tokens = 400;
  std::string backend = "scripted";  // scripted | echo | remote

  bool operator==(const GatewaySettings&) const = default;
};

struct ReflectionSettings {
  std::size_t every_messages = 20;
  double importance_threshold = 10.0;

  bool operator==(const ReflectionSettings&) const = default;
};

struct SessionConfig {
  LogicFilterConfig logic_filter;
  RetrievalSettings retrieval;
  GatewaySettings gateway;
  ReflectionSettings reflection;
  std::size_t transcript_window = 20;
  PromptBudget prompt_budget;
  bool memorize_bot_replies = true;
};

struct SessionServices {
  std::shared_ptr<EventStore> events;
  std::shared_ptr<MemoryStore> memory;
  std::shared_ptr<const Embedder> embedder;
  std::shared_ptr<Gateway> gateway;
  Summarizer summarizer;
};

// Summarizes a window of memories with one completion call.
Summarizer make_gateway_summarizer(std::shared_ptr<Gateway> gateway, GatewaySettings settings);

struct OutboundReply {
  std::string session_id;
  std::string channel_id;
  std::string text;
  double timestamp = 0.0;
  std::string request_id;
  std::uint64_t event_seq = 0;
  DecisionReason reason = DecisionReason::mentioned;
};

// One conversation with one bot. Messages of a session are processed one at
// a time, in call order; distinct sessions may run concurrently.
class Session {
 public:
  using RetrievalObserver = std::function<void(const IncomingMessage&, const std::vector<ScoredMemory>&)>;
  using EndObserver = std::function<void(const std::string& session_id)>;

  Session(SessionState state, SessionConfig config, std::string persona_prompt, SessionServices services);

  // Persists session_start and, when the task has instructions, posts them as
  // the first channel message from the bot.
  void start();

  // Persist, memorize, decide, and possibly reply. Throws StateError after the
  // session ended and ParameterError for unattributable messages; a storage
  // failure propagates before any reply is produced.
  std::optional<OutboundReply> handle_incoming(const IncomingMessage& msg);

  // Reflects over the messages since the last reflection when either the
  // message count or the accumulated importance reaches its trigger.
  std::shared_ptr<const MemoryRecord> maybe_reflect(double now);

  // Idempotent. Returns the final session record.
  nlohmann::json end(EndReason reason, double now);

  SessionState state() const;
  const std::string& id() const noexcept { return id_; }
  const std::string& persona_prompt() const noexcept { return persona_prompt_; }
  const SessionConfig& config() const noexcept { return config_; }
  std::shared_ptr<MemoryStore> memory() const { return services_.memory; }

  void set_retrieval_observer(RetrievalObserver observer);
  void set_end_observer(EndObserver observer);

 private:
  void push_transcript(TranscriptLine line);
  std::shared_ptr<const MemoryRecord> maybe_reflect_locked(double now);
  nlohmann::json final_record_locked() const;

  const std::string id_;
  SessionState state_;
  SessionConfig config_;
  std::string persona_prompt_;
  SessionServices services_;
  RetrievalObserver retrieval_observer_;
  EndObserver end_observer_;

  mutable std::mutex mutex_;
  std::set<std::string> seen_platform_ids_;
  std::optional<MemoryId> reflection_window_first_;
  MemoryId last_memory_id_ = 0;
  std::size_t messages_since_reflection_ = 0;
  double importance_since_reflection_ = 0.0;
  std::optional<EndReason> end_reason_;
  double ended_at_ = 0.0;
};

}  // namespace aicollab
