#include "aicollab/event_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "aicollab/crypto.hpp"
#include "aicollab/error.hpp"

namespace aicollab {

using nlohmann::json;

namespace {

constexpr std::string_view kIndexFile = "index.jsonl";

json body_without_hash(const EventRecord& r) {
  return json{{"seq", r.seq},
              {"session", r.session_id},
              {"kind", to_string(r.kind)},
              {"ts", r.timestamp},
              {"speaker", r.speaker_id ? json(*r.speaker_id) : json(nullptr)},
              {"payload", r.payload},
              {"prev", r.prev_hash}};
}

std::string sanitize_file_stem(const std::string& id) {
  std::string out;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  // keep distinct ids distinct after sanitizing
  return out + "-" + crypto::sha256_hex(id).substr(0, 8);
}

std::vector<std::string> split_lines(std::string_view doc) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < doc.size()) {
    auto nl = doc.find('\n', pos);
    if (nl == std::string_view::npos) nl = doc.size();
    if (nl > pos) lines.emplace_back(doc.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace

const char* to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::message: return "message";
    case EventKind::bot_reply: return "bot_reply";
    case EventKind::suppression: return "suppression";
    case EventKind::reflection: return "reflection";
    case EventKind::session_start: return "session_start";
    case EventKind::session_end: return "session_end";
    case EventKind::prompt_audit: return "prompt_audit";
    case EventKind::feedback: return "feedback";
  }
  return "?";
}

EventKind event_kind_from_string(std::string_view s) {
  for (auto k : {EventKind::message, EventKind::bot_reply, EventKind::suppression, EventKind::reflection,
                 EventKind::session_start, EventKind::session_end, EventKind::prompt_audit, EventKind::feedback}) {
    if (s == to_string(k)) return k;
  }
  throw ParameterError("unknown event kind: " + std::string(s));
}

std::string EventRecord::compute_hash() const {
  return crypto::sha256_hex(prev_hash + "\n" + body_without_hash(*this).dump());
}

std::string EventRecord::line() const {
  auto j = body_without_hash(*this);
  j["hash"] = hash;
  return j.dump();
}

EventRecord EventRecord::parse_line(std::string_view line) {
  try {
    const auto j = json::parse(line);
    EventRecord r;
    r.seq = j.at("seq").get<std::uint64_t>();
    r.session_id = j.at("session").get<std::string>();
    r.kind = event_kind_from_string(j.at("kind").get<std::string>());
    r.timestamp = j.at("ts").get<double>();
    if (!j.at("speaker").is_null()) r.speaker_id = j.at("speaker").get<std::string>();
    r.payload = j.at("payload");
    r.prev_hash = j.at("prev").get<std::string>();
    r.hash = j.at("hash").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw ParameterError(std::string("malformed event record: ") + e.what());
  }
}

FileEventSink::FileEventSink(std::filesystem::path directory, bool fsync)
    : directory_(std::move(directory)), fsync_(fsync) {
  std::error_code ec;
  std::filesystem::create_directories(directory_, ec);
  if (ec) throw StorageError("cannot create event directory " + directory_.string() + ": " + ec.message());
}

std::filesystem::path FileEventSink::session_path(const std::string& session_id) const {
  return directory_ / (sanitize_file_stem(session_id) + ".events.jsonl");
}

void FileEventSink::append_line(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw StorageError("cannot open " + path.string());
  std::string data = line + "\n";
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const auto n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw StorageError("write failed: " + path.string());
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (fsync_ && ::fsync(fd) != 0) {
    ::close(fd);
    throw StorageError("fsync failed: " + path.string());
  }
  ::close(fd);
}

void FileEventSink::create_session(const std::string& session_id, const std::string& header_line) {
  const auto path = session_path(session_id);
  if (std::filesystem::exists(path)) throw StorageError("event file already exists: " + path.string());
  append_line(path, header_line);
  std::lock_guard lock(index_mutex_);
  append_line(directory_ / kIndexFile,
              json{{"session_id", session_id}, {"file", path.filename().string()}}.dump());
}

void FileEventSink::write(const std::string& session_id, const std::string& line) {
  append_line(session_path(session_id), line);
}

EventStore::EventStore() = default;

EventStore::EventStore(std::shared_ptr<EventSink> sink) : sink_(std::move(sink)) {}

std::string EventStore::header_line(const std::string& session_id) {
  return json{{"schema", kEventLogSchema}, {"schema_version", kEventLogSchemaVersion}, {"session_id", session_id}}
      .dump();
}

std::vector<EventRecord> parse_event_document(std::string_view document) {
  const auto lines = split_lines(document);
  if (lines.empty()) throw ParameterError("event document is empty");
  json header;
  try {
    header = json::parse(lines.front());
  } catch (const json::exception& e) {
    throw ParameterError(std::string("event document header: ") + e.what());
  }
  if (header.value("schema", "") != kEventLogSchema) throw ParameterError("event document lacks schema header");
  if (header.value("schema_version", 0) != kEventLogSchemaVersion) {
    throw ParameterError("unsupported event schema version");
  }
  const auto session_id = header.value("session_id", "");
  std::vector<EventRecord> records;
  std::string prev = kGenesisHash;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto rec = EventRecord::parse_line(lines[i]);
    const auto where = "event line " + std::to_string(i + 1);
    if (rec.session_id != session_id) throw ParameterError(where + ": session id mismatch");
    if (rec.seq != i) throw ParameterError(where + ": seq " + std::to_string(rec.seq) + " breaks continuity");
    if (rec.prev_hash != prev || rec.compute_hash() != rec.hash) throw ParameterError(where + ": hash chain broken");
    if (rec.line() != lines[i]) throw ParameterError(where + ": non-canonical encoding");
    prev = rec.hash;
    records.push_back(std::move(rec));
  }
  if (!records.empty() && records.front().kind != EventKind::session_start) {
    throw ParameterError("first event must be session_start");
  }
  return records;
}

std::unique_ptr<EventStore> EventStore::open_directory(const std::filesystem::path& directory, bool fsync) {
  auto sink = std::make_shared<FileEventSink>(directory, fsync);
  auto store = std::make_unique<EventStore>(sink);
  const auto index = directory / kIndexFile;
  std::ifstream in(index);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto entry = json::parse(line);
    const auto path = directory / entry.at("file").get<std::string>();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw StorageError("indexed event file missing: " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    try {
      store->load_session(entry.at("session_id").get<std::string>(), parse_event_document(buf.str()));
    } catch (const ParameterError& e) {
      throw StorageError(path.string() + ": " + e.what());
    }
  }
  return store;
}

void EventStore::load_session(const std::string& session_id, std::vector<EventRecord> records) {
  auto log = std::make_unique<SessionLog>();
  for (const auto& r : records) {
    if (r.kind == EventKind::session_end) log->ended = true;
  }
  log->records = std::move(records);
  std::unique_lock lock(map_mutex_);
  if (!logs_.emplace(session_id, std::move(log)).second) throw StateError("session already exists: " + session_id);
}

EventStore::SessionLog& EventStore::log_for(const std::string& session_id) const {
  std::shared_lock lock(map_mutex_);
  auto it = logs_.find(session_id);
  if (it == logs_.end()) throw NotFoundError("unknown session: " + session_id);
  return *it->second;
}

EventRecord EventStore::append(const std::string& session_id, EventKind kind, double timestamp,
                               std::optional<std::string> speaker_id, json payload) {
  if (session_id.empty()) throw ParameterError("append_event: empty session id");
  if (!std::isfinite(timestamp)) throw ParameterError("append_event: timestamp must be finite");
  if (kind == EventKind::session_start) {
    std::unique_lock lock(map_mutex_);
    if (logs_.count(session_id)) throw StateError("session already started: " + session_id);
    if (sink_) sink_->create_session(session_id, header_line(session_id));
    logs_.emplace(session_id, std::make_unique<SessionLog>());
  } else if (!has_session(session_id)) {
    throw StateError("session " + session_id + " has no session_start");
  }
  auto& log = log_for(session_id);
  std::lock_guard lock(log.mutex);
  if (log.ended && kind != EventKind::feedback) {
    throw StateError(std::string("session ") + session_id + " has ended; " + to_string(kind) + " rejected");
  }
  if (log.records.empty() && kind != EventKind::session_start) {
    throw StateError("session " + session_id + " has no session_start");
  }
  EventRecord rec;
  rec.seq = log.records.size() + 1;
  rec.session_id = session_id;
  rec.kind = kind;
  rec.timestamp = timestamp;
  rec.speaker_id = std::move(speaker_id);
  rec.payload = payload.is_null() ? json::object() : std::move(payload);
  rec.prev_hash = log.records.empty() ? kGenesisHash : log.records.back().hash;
  rec.hash = rec.compute_hash();
  if (sink_) sink_->write(session_id, rec.line());
  log.records.push_back(rec);
  if (kind == EventKind::session_end) log.ended = true;

  std::vector<EventListener> to_call;
  {
    std::lock_guard lk(listeners_mutex_);
    for (const auto& [token, entry] : listeners_) {
      if (entry.first == session_id) to_call.push_back(entry.second);
    }
  }
  for (const auto& l : to_call) l(rec);
  return rec;
}

bool EventStore::has_session(const std::string& session_id) const {
  std::shared_lock lock(map_mutex_);
  return logs_.count(session_id) > 0;
}

bool EventStore::is_ended(const std::string& session_id) const {
  auto& log = log_for(session_id);
  std::lock_guard lock(log.mutex);
  return log.ended;
}

std::vector<std::string> EventStore::session_ids() const {
  std::shared_lock lock(map_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : logs_) out.push_back(id);
  return out;
}

std::uint64_t EventStore::last_seq(const std::string& session_id) const {
  auto& log = log_for(session_id);
  std::lock_guard lock(log.mutex);
  return log.records.size();
}

std::vector<EventRecord> EventStore::events(const std::string& session_id,
                                            std::optional<std::uint64_t> up_to_seq) const {
  auto& log = log_for(session_id);
  std::lock_guard lock(log.mutex);
  const std::size_t n = up_to_seq ? std::min<std::size_t>(*up_to_seq, log.records.size()) : log.records.size();
  return {log.records.begin(), log.records.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::string EventStore::export_events(const std::string& session_id) const {
  auto& log = log_for(session_id);
  std::lock_guard lock(log.mutex);
  std::string out = header_line(session_id) + "\n";
  for (const auto& r : log.records) out += r.line() + "\n";
  return out;
}

std::string EventStore::import_events(std::string_view document) {
  auto records = parse_event_document(document);
  const auto header = json::parse(split_lines(document).front());
  const auto session_id = header.at("session_id").get<std::string>();
  if (has_session(session_id)) throw StateError("session already exists: " + session_id);
  if (sink_) {
    sink_->create_session(session_id, header_line(session_id));
    for (const auto& r : records) sink_->write(session_id, r.line());
  }
  load_session(session_id, std::move(records));
  return session_id;
}

bool EventStore::verify_chain(const std::string& session_id) const {
  auto& log = log_for(session_id);
  std::lock_guard lock(log.mutex);
  std::string prev = kGenesisHash;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    if (r.seq != i + 1 || r.prev_hash != prev || r.compute_hash() != r.hash) return false;
    prev = r.hash;
  }
  return true;
}

std::uint64_t EventStore::subscribe(const std::string& session_id, EventListener listener) {
  std::lock_guard lock(listeners_mutex_);
  const auto token = next_token_++;
  listeners_.emplace(token, std::make_pair(session_id, std::move(listener)));
  return token;
}

void EventStore::unsubscribe(std::uint64_t token) {
  std::lock_guard lock(listeners_mutex_);
  listeners_.erase(token);
}

}  // namespace aicollab
