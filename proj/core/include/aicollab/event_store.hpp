#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace aicollab {

enum class EventKind { message, bot_reply, suppression, reflection, session_start, session_end, prompt_audit, feedback };

const char* to_string(EventKind kind) noexcept;
EventKind event_kind_from_string(std::string_view s);

inline constexpr std::string_view kEventLogSchema = "aicollab.events";
inline constexpr int kEventLogSchemaVersion = 1;
inline const std::string kGenesisHash(64, '0');

// One immutable line of a session's log. `hash` chains to the predecessor:
// sha256(prev_hash + "\n" + <record serialized without its hash field>).
struct EventRecord {
  std::uint64_t seq = 0;
  std::string session_id;
  EventKind kind = EventKind::message;
  double timestamp = 0.0;
  std::optional<std::string> speaker_id;
  nlohmann::json payload = nlohmann::json::object();
  std::string prev_hash;
  std::string hash;

  // The verbatim line as written.
  std::string line() const;
  static EventRecord parse_line(std::string_view line);
  std::string compute_hash() const;
};

// Where committed lines go. The default file sink keeps one line-delimited
// file per session plus an index; swap in another sink for a database.
class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void create_session(const std::string& session_id, const std::string& header_line) = 0;
  // Must be durable before returning; throws StorageError otherwise.
  virtual void write(const std::string& session_id, const std::string& line) = 0;
};

class FileEventSink final : public EventSink {
 public:
  explicit FileEventSink(std::filesystem::path directory, bool fsync = false);

  void create_session(const std::string& session_id, const std::string& header_line) override;
  void write(const std::string& session_id, const std::string& line) override;

  const std::filesystem::path& directory() const noexcept { return directory_; }
  std::filesystem::path session_path(const std::string& session_id) const;

 private:
  void append_line(const std::filesystem::path& path, const std::string& line);

  std::filesystem::path directory_;
  bool fsync_;
  std::mutex index_mutex_;
};

using EventListener = std::function<void(const EventRecord&)>;

// Append-only, hash-chained event log keyed by session. Sequence numbers are
// gap-free per session and start at 1 with a session_start record. Once a
// session_end is written only feedback records are accepted.
class EventStore {
 public:
  // In-memory only.
  EventStore();
  explicit EventStore(std::shared_ptr<EventSink> sink);
  // File-backed; existing logs in the directory are loaded and chain-verified.
  static std::unique_ptr<EventStore> open_directory(const std::filesystem::path& directory, bool fsync = false);

  EventRecord append(const std::string& session_id, EventKind kind, double timestamp,
                     std::optional<std::string> speaker_id, nlohmann::json payload);

  bool has_session(const std::string& session_id) const;
  bool is_ended(const std::string& session_id) const;
  std::vector<std::string> session_ids() const;
  std::uint64_t last_seq(const std::string& session_id) const;

  // Events with seq <= up_to_seq (all when unset). Throws NotFoundError.
  std::vector<EventRecord> events(const std::string& session_id,
                                  std::optional<std::uint64_t> up_to_seq = std::nullopt) const;

  // Header line plus every record line, newline-terminated.
  std::string export_events(const std::string& session_id) const;
  // Loads an exported document as a new session; returns its id.
  std::string import_events(std::string_view document);

  bool verify_chain(const std::string& session_id) const;

  // Listeners run on the appending thread, after the record is durable and
  // in seq order. They must not append to the same session.
  std::uint64_t subscribe(const std::string& session_id, EventListener listener);
  void unsubscribe(std::uint64_t token);

  static std::string header_line(const std::string& session_id);

 private:
  struct SessionLog {
    mutable std::mutex mutex;
    std::vector<EventRecord> records;
    bool ended = false;
  };

  SessionLog& log_for(const std::string& session_id) const;
  void load_session(const std::string& session_id, std::vector<EventRecord> records);

  std::shared_ptr<EventSink> sink_;
  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::unique_ptr<SessionLog>> logs_;

  std::mutex listeners_mutex_;
  std::uint64_t next_token_ = 1;
  std::map<std::uint64_t, std::pair<std::string, EventListener>> listeners_;
};

// Parses "header + records" text and verifies seq continuity and the hash chain.
std::vector<EventRecord> parse_event_document(std::string_view document);

}  // namespace aicollab
