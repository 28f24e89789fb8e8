#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "aicollab/analytics.hpp"
#include "aicollab/config.hpp"
#include "aicollab/embedding.hpp"
#include "aicollab/event_store.hpp"
#include "aicollab/orchestrator.hpp"
#include "aicollab/persona.hpp"
#include "aicollab/platform.hpp"
#include "aicollab/simulation.hpp"

namespace aicollab {

using Clock = std::function<double()>;

// Seconds since the Unix epoch from the system clock.
double wall_clock_seconds();

using BackendFactory = std::function<std::shared_ptr<ChatBackend>(const ExperimentConfig&)>;

// Scripted and echo backends; "remote" throws ConfigError.
std::shared_ptr<ChatBackend> make_local_backend(const ExperimentConfig& config);

struct ContextDocument {
  std::string id;
  std::string experiment_id;
  std::string name;
  std::string digest;  // sha256 hex
  std::size_t size = 0;
  std::string content;

  nlohmann::json summary_json() const;  // everything but the content
};

inline constexpr std::size_t kDefaultDocumentCap = 1u << 20;

struct ServiceOptions {
  std::shared_ptr<EventStore> events;            // default: in-memory
  std::shared_ptr<const DescriptorTable> descriptors;  // required
  std::shared_ptr<const Embedder> embedder;      // default: local hashing embedder
  BackendFactory backend_factory;                // default: make_local_backend
  std::shared_ptr<LoopbackAdapter> loopback;     // default: a fresh adapter
  std::shared_ptr<ChatPlatform> slack;           // optional
  std::string slack_bot_user_id;
  Clock clock;                                   // default: wall clock
  std::size_t max_document_bytes = kDefaultDocumentCap;
  std::optional<std::filesystem::path> memory_dir;  // memory logs written at session end
  GatewayConfig gateway;
  Sleeper sleeper;
};

struct SessionInfo {
  std::string session_id;
  std::string experiment_id;
  std::string channel_id;
  std::string platform;  // loopback | slack
  SessionStatus status = SessionStatus::pending;
  double started_at = 0.0;
  double deadline = 0.0;
  std::vector<Participant> participants;

  nlohmann::json to_json() const;
};

// Pull-based view of a session's events starting after a given seq. Ends after
// the session_end record once the log is caught up.
class EventCursor {
 public:
  EventCursor(std::shared_ptr<EventStore> store, std::string session_id, std::uint64_t after_seq);
  ~EventCursor();
  EventCursor(const EventCursor&) = delete;
  EventCursor& operator=(const EventCursor&) = delete;

  // The next record, or nullopt on timeout or end of stream.
  std::optional<EventRecord> next(std::chrono::milliseconds timeout);
  bool finished() const;
  std::uint64_t position() const noexcept { return position_; }

 private:
  std::shared_ptr<EventStore> store_;
  std::string session_id_;
  std::uint64_t position_;
  std::uint64_t token_ = 0;
  bool saw_end_ = false;
  struct Signal {
    std::mutex mutex;
    std::condition_variable cv;
    std::uint64_t latest = 0;
  };
  std::shared_ptr<Signal> signal_;
};

// A recomputed snapshot after every persisted event, monotone in seq.
class AnalyticsStream {
 public:
  AnalyticsStream(std::shared_ptr<EventStore> store, std::string session_id, std::uint64_t after_seq,
                  TagLexicon lexicon);

  std::optional<AnalyticsSnapshot> next(std::chrono::milliseconds timeout);
  bool finished() const { return cursor_.finished(); }

 private:
  std::shared_ptr<EventStore> store_;
  std::string session_id_;
  TagLexicon lexicon_;
  EventCursor cursor_;
};

// Researcher-facing service: experiments, documents, pool and matching,
// sessions with deadlines, analytics, descriptors, sweeps.
class ExperimentService {
 public:
  explicit ExperimentService(ServiceOptions options);
  ~ExperimentService();
  ExperimentService(const ExperimentService&) = delete;
  ExperimentService& operator=(const ExperimentService&) = delete;

  // Experiments. create/update throw ValidationError listing every finding.
  ExperimentConfig create_experiment(const nlohmann::json& body);
  ExperimentConfig update_experiment(const std::string& experiment_id, const nlohmann::json& body);  // draft only
  ExperimentConfig experiment(const std::string& experiment_id) const;
  std::vector<ExperimentConfig> experiments() const;
  ExperimentConfig open_experiment(const std::string& experiment_id);
  // Ends the experiment's live sessions.
  ExperimentConfig close_experiment(const std::string& experiment_id);

  ContextDocument upload_document(const std::string& experiment_id, const std::string& name, const std::string& bytes);
  std::vector<ContextDocument> documents(const std::string& experiment_id) const;

  // Waiting pool.
  void join_pool(const std::string& experiment_id, ParticipantProfile profile);
  bool leave_pool(const std::string& experiment_id, const std::string& participant_id);
  std::vector<PoolEntry> pool(const std::string& experiment_id) const;
  // Atomically matches the pool; formed teams leave the pool.
  std::vector<std::vector<PoolEntry>> match_pool(const std::string& experiment_id);

  // Sessions. The team must exactly satisfy the composition constraints. A
  // channel id routes to the Slack adapter; without one a loopback channel is
  // created.
  std::string start_session(const std::string& experiment_id, const std::vector<ParticipantProfile>& team,
                            std::optional<std::string> slack_channel = std::nullopt);
  nlohmann::json stop_session(const std::string& session_id);
  SessionInfo session_info(const std::string& session_id) const;
  std::vector<SessionInfo> sessions(const std::optional<std::string>& experiment_id = std::nullopt) const;

  // Loopback chat entry point. The reply, if any, is also delivered to the
  // session's platform channel.
  std::optional<OutboundReply> post_message(const std::string& session_id, const std::string& speaker_id,
                                            const std::string& text, const std::string& platform_message_id = {});

  // Verified platform events. Duplicates are dropped; events for one channel
  // are processed in receipt order. Returns whether the event was relayed.
  bool handle_platform_event(const PlatformEvent& event);

  // Ends every live session whose deadline has passed; returns how many.
  std::size_t tick();
  std::size_t tick(double now);
  // Background ticking at 1 s granularity.
  void start_timer(std::chrono::milliseconds period = std::chrono::milliseconds(1000));
  void stop_timer();

  AnalyticsSnapshot analytics(const std::string& session_id, std::optional<std::uint64_t> up_to_seq = std::nullopt) const;
  std::string export_session(const std::string& session_id, ExportFormat format) const;
  std::unique_ptr<AnalyticsStream> stream_analytics(const std::string& session_id, std::uint64_t after_seq = 0) const;
  std::unique_ptr<EventCursor> stream_events(const std::string& session_id, std::uint64_t after_seq = 0) const;
  EventRecord record_feedback(const std::string& session_id, const nlohmann::json& body);

  // Descriptor table. put throws StateError when expected_version is stale.
  std::shared_ptr<const DescriptorTable> descriptor_table() const;
  std::shared_ptr<const DescriptorTable> put_descriptor_table(const std::string& document,
                                                              const std::optional<std::string>& expected_version);
  std::string compile_preview(const PersonaSpec& spec) const;

  // Replays the fixture for every grid cell using the experiment's config
  // (or defaults) with scripted backends only.
  std::vector<SweepCell> run_sweep(const std::vector<SweepAxis>& grid, const SimulationScript& fixture,
                                   const std::optional<std::string>& experiment_id) const;

  std::shared_ptr<EventStore> events() const { return options_.events; }
  std::shared_ptr<LoopbackAdapter> loopback() const { return options_.loopback; }
  const std::string& slack_bot_user_id() const noexcept { return options_.slack_bot_user_id; }
  double now() const { return options_.clock(); }

 private:
  struct ExperimentEntry {
    ExperimentConfig config;
    std::vector<ContextDocument> documents;
    std::vector<PoolEntry> pool;
    std::uint64_t session_counter = 0;
    std::uint64_t document_counter = 0;
  };
  struct SessionEntry {
    std::shared_ptr<Session> session;
    std::string experiment_id;
    std::string platform;
    TagLexicon lexicon;
  };

  ExperimentEntry& entry_locked(const std::string& experiment_id);
  const ExperimentEntry& entry_locked(const std::string& experiment_id) const;
  SessionEntry session_entry(const std::string& session_id) const;
  ExperimentConfig parse_config(const nlohmann::json& body) const;
  ChatPlatform& platform_for(const SessionEntry& entry) const;
  void persist_memory(const Session& session) const;
  void deliver(const SessionEntry& entry, const OutboundReply& reply);

  ServiceOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, ExperimentEntry> experiments_;
  std::uint64_t experiment_counter_ = 0;
  std::map<std::string, SessionEntry> sessions_;
  std::map<std::string, std::string> session_by_channel_;

  DedupWindow dedup_;
  OrderedDispatcher dispatcher_;

  std::mutex timer_mutex_;
  std::condition_variable timer_cv_;
  bool timer_stop_ = false;
  std::thread timer_;
};

}  // namespace aicollab
