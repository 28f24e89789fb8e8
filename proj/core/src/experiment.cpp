#include "aicollab/experiment.hpp"

#include <algorithm>
#include <iostream>
#include <regex>

#include "aicollab/crypto.hpp"
#include "aicollab/error.hpp"
#include "aicollab/memory_log.hpp"
#include "aicollab/text.hpp"

namespace aicollab {

using nlohmann::json;

double wall_clock_seconds() {
  using namespace std::chrono;
  return duration_cast<duration<double>>(system_clock::now().time_since_epoch()).count();
}

std::shared_ptr<ChatBackend> make_local_backend(const ExperimentConfig& config) {
  if (config.gateway.backend == "echo") return std::make_shared<EchoBackend>();
  if (config.gateway.backend == "scripted") {
    return std::make_shared<ScriptedBackend>(config.gateway_script, config.fallback_reply);
  }
  throw ConfigError("gateway backend '" + config.gateway.backend + "' is not available in this service");
}

json ContextDocument::summary_json() const {
  return {{"document_id", id}, {"experiment_id", experiment_id}, {"name", name}, {"digest", digest}, {"size", size}};
}

json SessionInfo::to_json() const {
  json ps = json::array();
  for (const auto& p : participants) {
    ps.push_back({{"participant_id", p.participant_id}, {"display_name", p.display_name}, {"is_bot", p.is_bot}});
  }
  return {{"session_id", session_id}, {"experiment_id", experiment_id}, {"channel_id", channel_id},
          {"platform", platform},     {"status", to_string(status)},     {"started_at", started_at},
          {"deadline", deadline},     {"participants", ps}};
}

// ---------------------------------------------------------------------------

EventCursor::EventCursor(std::shared_ptr<EventStore> store, std::string session_id, std::uint64_t after_seq)
    : store_(std::move(store)),
      session_id_(std::move(session_id)),
      position_(after_seq),
      signal_(std::make_shared<Signal>()) {
  if (!store_->has_session(session_id_)) throw NotFoundError("unknown session " + session_id_);
  // The store calls listeners while holding the session's lock, so the
  // listener only records the newest seq and never calls back into the store.
  token_ = store_->subscribe(session_id_, [signal = signal_](const EventRecord& rec) {
    {
      std::lock_guard lock(signal->mutex);
      signal->latest = std::max(signal->latest, rec.seq);
    }
    signal->cv.notify_all();
  });
  if (after_seq > 0) {
    const auto upto = store_->events(session_id_, after_seq);
    saw_end_ = std::any_of(upto.begin(), upto.end(), [](const EventRecord& e) { return e.kind == EventKind::session_end; });
  }
}

EventCursor::~EventCursor() { store_->unsubscribe(token_); }

bool EventCursor::finished() const { return saw_end_ && position_ >= store_->last_seq(session_id_); }

std::optional<EventRecord> EventCursor::next(std::chrono::milliseconds timeout) {
  for (int pass = 0; pass < 2; ++pass) {
    if (position_ < store_->last_seq(session_id_)) {
      auto rec = store_->events(session_id_, position_ + 1).back();
      position_ = rec.seq;
      if (rec.kind == EventKind::session_end) saw_end_ = true;
      return rec;
    }
    if (finished() || pass == 1) return std::nullopt;
    std::unique_lock lock(signal_->mutex);
    signal_->cv.wait_for(lock, timeout, [&] { return signal_->latest > position_; });
  }
  return std::nullopt;
}

AnalyticsStream::AnalyticsStream(std::shared_ptr<EventStore> store, std::string session_id, std::uint64_t after_seq,
                                 TagLexicon lexicon)
    : store_(store), session_id_(session_id), lexicon_(std::move(lexicon)), cursor_(store, session_id, after_seq) {}

std::optional<AnalyticsSnapshot> AnalyticsStream::next(std::chrono::milliseconds timeout) {
  const auto rec = cursor_.next(timeout);
  if (!rec) return std::nullopt;
  const auto events = store_->events(session_id_, rec->seq);
  return compute_analytics(events, lexicon_);
}

// ---------------------------------------------------------------------------

namespace {

bool valid_id(const std::string& id) {
  static const std::regex re("[A-Za-z0-9_-]{1,64}");
  return std::regex_match(id, re);
}

// UTF-8 without NUL or control characters other than tab, newline, CR and form feed.
bool is_plain_text(std::string_view bytes) {
  std::size_t i = 0;
  while (i < bytes.size()) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    if (c < 0x80) {
      if (c < 0x20 && c != '\t' && c != '\n' && c != '\r' && c != '\f') return false;
      if (c == 0x7f) return false;
      ++i;
      continue;
    }
    std::size_t len = (c & 0xE0) == 0xC0 ? 2 : (c & 0xF0) == 0xE0 ? 3 : (c & 0xF8) == 0xF0 ? 4 : 0;
    if (len == 0 || c == 0xC0 || c == 0xC1 || c > 0xF4 || i + len > bytes.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(bytes[i + k]) & 0xC0) != 0x80) return false;
    }
    i += len;
  }
  return true;
}

void log_line(const std::string& what) { std::cerr << "aicollab: " << text::redact_credentials(what) << '\n'; }

}  // namespace

ExperimentService::ExperimentService(ServiceOptions options)
    : options_(std::move(options)),
      dispatcher_([](const std::string& channel, const std::exception& e) {
        log_line("dropped platform event on " + channel + ": " + e.what());
      }) {
  if (!options_.descriptors) throw ConfigError("experiment service needs a descriptor table");
  if (!options_.events) options_.events = std::make_shared<EventStore>();
  if (!options_.embedder) options_.embedder = std::make_shared<LocalHashEmbedder>();
  if (!options_.backend_factory) options_.backend_factory = make_local_backend;
  if (!options_.loopback) options_.loopback = std::make_shared<LoopbackAdapter>();
  if (!options_.clock) options_.clock = wall_clock_seconds;
  if (options_.max_document_bytes == 0) throw ConfigError("document size cap must be positive");
}

ExperimentService::~ExperimentService() { stop_timer(); }

ExperimentService::ExperimentEntry& ExperimentService::entry_locked(const std::string& experiment_id) {
  const auto it = experiments_.find(experiment_id);
  if (it == experiments_.end()) throw NotFoundError("unknown experiment " + experiment_id);
  return it->second;
}

const ExperimentService::ExperimentEntry& ExperimentService::entry_locked(const std::string& experiment_id) const {
  const auto it = experiments_.find(experiment_id);
  if (it == experiments_.end()) throw NotFoundError("unknown experiment " + experiment_id);
  return it->second;
}

ExperimentConfig ExperimentService::parse_config(const json& body) const {
  std::shared_ptr<const DescriptorTable> table;
  {
    std::shared_lock lock(mutex_);
    table = options_.descriptors;
  }
  auto config = load_experiment_config(body, *table);
  if (config.gateway.backend != "remote") return config;
  try {
    options_.backend_factory(config);
  } catch (const ConfigError& e) {
    throw ValidationError("invalid experiment config", {std::string("gateway.backend: ") + e.what()});
  }
  return config;
}

ExperimentConfig ExperimentService::create_experiment(const json& body) {
  auto config = parse_config(body);
  std::unique_lock lock(mutex_);
  if (config.experiment_id.empty()) {
    do {
      config.experiment_id = "exp-" + std::to_string(++experiment_counter_);
    } while (experiments_.count(config.experiment_id));
  } else if (!valid_id(config.experiment_id)) {
    throw ValidationError("invalid experiment config", {"experiment_id: use 1-64 of [A-Za-z0-9_-]"});
  } else if (experiments_.count(config.experiment_id)) {
    throw StateError("experiment " + config.experiment_id + " already exists");
  }
  config.status = ExperimentStatus::draft;
  experiments_[config.experiment_id].config = config;
  return config;
}

ExperimentConfig ExperimentService::update_experiment(const std::string& experiment_id, const json& body) {
  auto config = parse_config(body);
  std::unique_lock lock(mutex_);
  auto& entry = entry_locked(experiment_id);
  if (entry.config.status != ExperimentStatus::draft) {
    throw StateError("experiment " + experiment_id + " is " + to_string(entry.config.status) + "; only drafts change");
  }
  config.experiment_id = experiment_id;
  config.status = ExperimentStatus::draft;
  entry.config = config;
  return config;
}

ExperimentConfig ExperimentService::experiment(const std::string& experiment_id) const {
  std::shared_lock lock(mutex_);
  return entry_locked(experiment_id).config;
}

std::vector<ExperimentConfig> ExperimentService::experiments() const {
  std::shared_lock lock(mutex_);
  std::vector<ExperimentConfig> out;
  for (const auto& [id, e] : experiments_) out.push_back(e.config);
  return out;
}

ExperimentConfig ExperimentService::open_experiment(const std::string& experiment_id) {
  std::unique_lock lock(mutex_);
  auto& entry = entry_locked(experiment_id);
  if (entry.config.status != ExperimentStatus::draft) {
    throw StateError("experiment " + experiment_id + " is " + to_string(entry.config.status) + "; cannot open");
  }
  std::vector<std::string> findings;
  for (const auto& id : entry.config.task.context_document_ids) {
    const bool known = std::any_of(entry.documents.begin(), entry.documents.end(),
                                   [&](const ContextDocument& d) { return d.id == id; });
    if (!known) findings.push_back("task.context_document_ids: unknown document " + id);
  }
  for (const auto& f : validate_experiment(entry.config, *options_.descriptors)) findings.push_back(f);
  if (!findings.empty()) throw ValidationError("experiment cannot open", std::move(findings));
  entry.config.status = ExperimentStatus::open;
  return entry.config;
}

ExperimentConfig ExperimentService::close_experiment(const std::string& experiment_id) {
  std::vector<std::shared_ptr<Session>> live;
  ExperimentConfig result;
  {
    std::unique_lock lock(mutex_);
    auto& entry = entry_locked(experiment_id);
    const auto status = entry.config.status;
    if (status != ExperimentStatus::open && status != ExperimentStatus::running) {
      throw StateError("experiment " + experiment_id + " is " + to_string(status) + "; cannot close");
    }
    entry.config.status = ExperimentStatus::closed;
    entry.pool.clear();
    for (const auto& [sid, s] : sessions_) {
      if (s.experiment_id == experiment_id) live.push_back(s.session);
    }
    result = entry.config;
  }
  const double now = options_.clock();
  for (const auto& s : live) s->end(EndReason::manual, now);
  return result;
}

ContextDocument ExperimentService::upload_document(const std::string& experiment_id, const std::string& name,
                                                   const std::string& bytes) {
  if (text::is_blank(name)) throw ParameterError("document name must not be empty");
  if (bytes.size() > options_.max_document_bytes) {
    throw ParameterError("document is " + std::to_string(bytes.size()) + " bytes; the cap is " +
                         std::to_string(options_.max_document_bytes));
  }
  if (!is_plain_text(bytes)) throw ParameterError("document is not plain UTF-8 text");
  std::unique_lock lock(mutex_);
  auto& entry = entry_locked(experiment_id);
  const auto status = entry.config.status;
  if (status != ExperimentStatus::draft && status != ExperimentStatus::open) {
    throw StateError("experiment " + experiment_id + " is " + to_string(status) + "; uploads are closed");
  }
  ContextDocument doc{"doc-" + std::to_string(++entry.document_counter), experiment_id, name,
                      crypto::sha256_hex(bytes), bytes.size(), bytes};
  entry.documents.push_back(doc);
  return doc;
}

std::vector<ContextDocument> ExperimentService::documents(const std::string& experiment_id) const {
  std::shared_lock lock(mutex_);
  return entry_locked(experiment_id).documents;
}

void ExperimentService::join_pool(const std::string& experiment_id, ParticipantProfile profile) {
  profile.validate();
  std::unique_lock lock(mutex_);
  auto& entry = entry_locked(experiment_id);
  const auto status = entry.config.status;
  if (status != ExperimentStatus::open && status != ExperimentStatus::running) {
    throw StateError("experiment " + experiment_id + " is " + to_string(status) + "; the pool is closed");
  }
  for (const auto& e : entry.pool) {
    if (e.participant_id() == profile.participant_id) {
      throw StateError("participant " + profile.participant_id + " is already waiting");
    }
  }
  entry.pool.push_back({std::move(profile), options_.clock()});
}

bool ExperimentService::leave_pool(const std::string& experiment_id, const std::string& participant_id) {
  std::unique_lock lock(mutex_);
  auto& pool = entry_locked(experiment_id).pool;
  const auto it = std::find_if(pool.begin(), pool.end(), [&](const PoolEntry& e) { return e.participant_id() == participant_id; });
  if (it == pool.end()) return false;
  pool.erase(it);
  return true;
}

std::vector<PoolEntry> ExperimentService::pool(const std::string& experiment_id) const {
  std::shared_lock lock(mutex_);
  return entry_locked(experiment_id).pool;
}

std::vector<std::vector<PoolEntry>> ExperimentService::match_pool(const std::string& experiment_id) {
  std::unique_lock lock(mutex_);
  auto& entry = entry_locked(experiment_id);
  auto result = match_teams(entry.pool, entry.config.composition);
  entry.pool = std::move(result.residual);
  return std::move(result.teams);
}

std::string ExperimentService::start_session(const std::string& experiment_id,
                                             const std::vector<ParticipantProfile>& team,
                                             std::optional<std::string> slack_channel) {
  std::shared_ptr<Session> session;
  std::string session_id;
  {
    std::unique_lock lock(mutex_);
    auto& entry = entry_locked(experiment_id);
    const auto& config = entry.config;
    if (config.status != ExperimentStatus::open && config.status != ExperimentStatus::running) {
      throw StateError("experiment " + experiment_id + " is " + to_string(config.status) + "; sessions need it open");
    }
    for (const auto& p : team) p.validate();
    if (!satisfies_constraints(team, config.composition)) {
      throw ParameterError("team of " + std::to_string(team.size()) + " does not satisfy the composition constraints");
    }
    if (slack_channel && !options_.slack) throw ConfigError("no chat platform is configured for channel " + *slack_channel);

    session_id = experiment_id + "-s" + std::to_string(entry.session_counter + 1);
    const auto channel = slack_channel ? *slack_channel : "loopback-" + session_id;
    if (session_by_channel_.count(channel)) throw StateError("channel " + channel + " already hosts a live session");

    PersonaSpec persona = config.persona;
    const auto& wanted = config.task.context_document_ids;
    for (const auto& d : entry.documents) {
      if (wanted.empty() || std::find(wanted.begin(), wanted.end(), d.id) != wanted.end()) {
        persona.context_documents.push_back({d.id, d.name, d.digest});
      }
    }
    const auto prompt = compile_system_prompt(persona, *options_.descriptors);

    const double now = options_.clock();
    SessionState state;
    state.session_id = session_id;
    state.channel_id = channel;
    state.experiment_id = experiment_id;
    for (const auto& p : team) state.participants.push_back({p.participant_id, p.display_name, false});
    const auto bot_id = (slack_channel && !options_.slack_bot_user_id.empty()) ? options_.slack_bot_user_id : "bot";
    state.participants.push_back({bot_id, config.persona.name, true});
    state.task_title = config.task.title;
    state.task_instructions = config.task.instructions;
    for (const auto& d : persona.context_documents) state.context_document_ids.push_back(d.id);
    state.started_at = now;
    state.deadline = now + config.duration_seconds;

    auto backend = options_.backend_factory(config);
    auto gateway = std::make_shared<Gateway>(backend, options_.gateway, options_.sleeper);
    auto memory = std::make_shared<MemoryStore>(MemoryStoreConfig{
        options_.embedder->dimension(), config.memory.importance_window, options_.embedder->version()});
    SessionServices services{options_.events, memory, options_.embedder, gateway,
                             make_gateway_summarizer(gateway, config.gateway)};
    session = std::make_shared<Session>(state, config.session_config(), prompt, services);
    session->start();

    ++entry.session_counter;
    entry.config.status = ExperimentStatus::running;
    auto& pool = entry.pool;
    pool.erase(std::remove_if(pool.begin(), pool.end(),
                              [&](const PoolEntry& e) {
                                return std::any_of(team.begin(), team.end(), [&](const ParticipantProfile& p) {
                                  return p.participant_id == e.participant_id();
                                });
                              }),
               pool.end());
    sessions_[session_id] = {session, experiment_id, slack_channel ? "slack" : "loopback", config.tag_lexicon};
    session_by_channel_[channel] = session_id;
    if (!slack_channel) options_.loopback->add_channel(channel);
  }
  session->set_end_observer([this, channel = session->state().channel_id, weak = std::weak_ptr<Session>(session)](
                                const std::string&) {
    {
      std::unique_lock lock(mutex_);
      session_by_channel_.erase(channel);
    }
    if (auto s = weak.lock()) persist_memory(*s);
  });
  return session_id;
}

void ExperimentService::persist_memory(const Session& session) const {
  if (!options_.memory_dir) return;
  try {
    std::filesystem::create_directories(*options_.memory_dir);
    write_memory_log(*session.memory(), *options_.memory_dir / (session.id() + ".memory.jsonl"));
  } catch (const std::exception& e) {
    log_line("could not persist memory of " + session.id() + ": " + e.what());
  }
}

ExperimentService::SessionEntry ExperimentService::session_entry(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  return it->second;
}

json ExperimentService::stop_session(const std::string& session_id) {
  return session_entry(session_id).session->end(EndReason::manual, options_.clock());
}

SessionInfo ExperimentService::session_info(const std::string& session_id) const {
  const auto entry = session_entry(session_id);
  const auto st = entry.session->state();
  return {st.session_id, st.experiment_id, st.channel_id, entry.platform, st.status, st.started_at, st.deadline,
          st.participants};
}

std::vector<SessionInfo> ExperimentService::sessions(const std::optional<std::string>& experiment_id) const {
  std::vector<std::string> ids;
  {
    std::shared_lock lock(mutex_);
    for (const auto& [id, e] : sessions_) {
      if (!experiment_id || e.experiment_id == *experiment_id) ids.push_back(id);
    }
  }
  std::vector<SessionInfo> out;
  for (const auto& id : ids) out.push_back(session_info(id));
  return out;
}

ChatPlatform& ExperimentService::platform_for(const SessionEntry& entry) const {
  if (entry.platform == "slack" && options_.slack) return *options_.slack;
  return *options_.loopback;
}

void ExperimentService::deliver(const SessionEntry& entry, const OutboundReply& reply) {
  try {
    platform_for(entry).send_message(reply.channel_id, reply.text);
  } catch (const Error& e) {
    log_line("delivery to " + reply.channel_id + " failed: " + e.what());
  }
}

std::optional<OutboundReply> ExperimentService::post_message(const std::string& session_id, const std::string& speaker_id,
                                                             const std::string& text,
                                                             const std::string& platform_message_id) {
  const auto entry = session_entry(session_id);
  const auto st = entry.session->state();
  const auto* speaker = st.find_participant(speaker_id);
  IncomingMessage msg{st.channel_id, speaker_id, speaker ? speaker->display_name : speaker_id, text, options_.clock(),
                      platform_message_id};
  auto reply = entry.session->handle_incoming(msg);
  if (reply) deliver(entry, *reply);
  return reply;
}

bool ExperimentService::handle_platform_event(const PlatformEvent& event) {
  if (event.envelope_type != EnvelopeType::message_event) return false;
  std::string session_id;
  {
    std::shared_lock lock(mutex_);
    const auto it = session_by_channel_.find(event.channel);
    if (it == session_by_channel_.end()) return false;
    session_id = it->second;
  }
  if (!dedup_.first_delivery(event.channel, event.message_id())) return false;
  dispatcher_.submit(event.channel, [this, session_id, event] {
    post_message(session_id, event.user, event.text, event.message_id());
  });
  return true;
}

std::size_t ExperimentService::tick() { return tick(options_.clock()); }

std::size_t ExperimentService::tick(double now) {
  std::vector<std::shared_ptr<Session>> expired;
  {
    std::shared_lock lock(mutex_);
    for (const auto& [id, e] : sessions_) {
      const auto st = e.session->state();
      if (st.status == SessionStatus::live && st.deadline <= now) expired.push_back(e.session);
    }
  }
  std::size_t ended = 0;
  for (const auto& s : expired) {
    try {
      s->end(EndReason::deadline, now);
      ++ended;
    } catch (const Error& e) {
      log_line("could not end " + s->id() + ": " + e.what());
    }
  }
  return ended;
}

void ExperimentService::start_timer(std::chrono::milliseconds period) {
  std::lock_guard lock(timer_mutex_);
  if (timer_.joinable()) return;
  timer_stop_ = false;
  timer_ = std::thread([this, period] {
    std::unique_lock lk(timer_mutex_);
    while (!timer_cv_.wait_for(lk, period, [this] { return timer_stop_; })) {
      lk.unlock();
      tick();
      lk.lock();
    }
  });
}

void ExperimentService::stop_timer() {
  {
    std::lock_guard lock(timer_mutex_);
    timer_stop_ = true;
  }
  timer_cv_.notify_all();
  if (timer_.joinable()) timer_.join();
}

AnalyticsSnapshot ExperimentService::analytics(const std::string& session_id, std::optional<std::uint64_t> up_to_seq) const {
  const auto entry = session_entry(session_id);
  const auto events = options_.events->events(session_id, up_to_seq);
  return compute_analytics(events, entry.lexicon);
}

std::string ExperimentService::export_session(const std::string& session_id, ExportFormat format) const {
  session_entry(session_id);
  return aicollab::export_session(*options_.events, session_id, format);
}

std::unique_ptr<AnalyticsStream> ExperimentService::stream_analytics(const std::string& session_id,
                                                                     std::uint64_t after_seq) const {
  const auto entry = session_entry(session_id);
  return std::make_unique<AnalyticsStream>(options_.events, session_id, after_seq, entry.lexicon);
}

std::unique_ptr<EventCursor> ExperimentService::stream_events(const std::string& session_id, std::uint64_t after_seq) const {
  session_entry(session_id);
  return std::make_unique<EventCursor>(options_.events, session_id, after_seq);
}

EventRecord ExperimentService::record_feedback(const std::string& session_id, const json& body) {
  const auto entry = session_entry(session_id);
  if (!body.is_object()) throw ParameterError("feedback must be an object");
  std::optional<std::string> speaker;
  if (body.contains("participant_id")) {
    if (!body["participant_id"].is_string()) throw ParameterError("feedback participant_id must be a string");
    speaker = body["participant_id"].get<std::string>();
    if (!entry.session->state().find_participant(*speaker)) {
      throw ParameterError("participant " + *speaker + " is not in session " + session_id);
    }
  }
  return options_.events->append(session_id, EventKind::feedback, options_.clock(), speaker, body);
}

std::shared_ptr<const DescriptorTable> ExperimentService::descriptor_table() const {
  std::shared_lock lock(mutex_);
  return options_.descriptors;
}

std::shared_ptr<const DescriptorTable> ExperimentService::put_descriptor_table(
    const std::string& document, const std::optional<std::string>& expected_version) {
  auto table = std::make_shared<DescriptorTable>(load_descriptor_table(document));
  std::unique_lock lock(mutex_);
  const auto& current = *options_.descriptors;
  if (expected_version && *expected_version != current.version()) {
    throw StateError("descriptor table is at version " + current.version() + ", not " + *expected_version);
  }
  if (table->version() == current.version() && !(*table == current)) {
    throw StateError("a changed descriptor table needs a new version (still " + current.version() + ")");
  }
  options_.descriptors = table;
  return table;
}

std::string ExperimentService::compile_preview(const PersonaSpec& spec) const {
  return compile_system_prompt(spec, *descriptor_table());
}

std::vector<SweepCell> ExperimentService::run_sweep(const std::vector<SweepAxis>& grid, const SimulationScript& fixture,
                                                    const std::optional<std::string>& experiment_id) const {
  ExperimentConfig base;
  if (experiment_id) {
    base = experiment(*experiment_id);
  } else {
    base.persona.name = "Assistant";
  }
  base.gateway.backend = "scripted";
  return sweep_parameters(grid, fixture, base, *descriptor_table());
}

}  // namespace aicollab
