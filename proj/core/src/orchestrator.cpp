#include "aicollab/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "aicollab/error.hpp"
#include "aicollab/text.hpp"

namespace aicollab {

using nlohmann::json;

namespace {

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
         static_cast<unsigned char>(c) >= 0x80;
}

bool contains_word_ci(std::string_view haystack, std::string_view word) {
  if (text::is_blank(word)) return false;
  for (auto pos : text::find_all_ci(haystack, word)) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const auto end = pos + word.size();
    const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

std::string one_line(std::string_view s) {
  std::string out(text::trim(s));
  for (auto& c : out) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return out;
}

std::string scope_guard_text(const LogicFilterConfig& filter) {
  return "Contribute only information that has come up in this conversation, the task description, or the "
         "listed context documents. Do not introduce outside facts or speculate beyond the conversation's scope. "
         "Keep each reply under " +
         std::to_string(filter.max_reply_tokens) + " tokens.";
}

std::string truncate_to_tokens(std::string_view reply, int max_tokens, double factor, bool& truncated) {
  truncated = false;
  if (count_tokens_estimate(reply, factor) <= max_tokens) return std::string(reply);
  truncated = true;
  const auto words = text::split_whitespace(reply);
  auto keep = static_cast<std::size_t>(std::floor(static_cast<double>(max_tokens) / factor + 1e-9));
  keep = std::min(keep, words.size());
  std::string out;
  for (std::size_t i = 0; i < keep; ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

void LogicFilterConfig::validate() const {
  std::vector<std::string> findings;
  if (!(proactivity_threshold >= 0.0 && proactivity_threshold <= 1.0)) {
    findings.emplace_back("logic_filter.proactivity_threshold: must be in [0, 1]");
  }
  if (min_seconds_between_bot_messages < 0) findings.emplace_back("logic_filter.min_seconds_between_bot_messages: must be >= 0");
  if (max_reply_tokens < 1) findings.emplace_back("logic_filter.max_reply_tokens: must be positive");
  if (!findings.empty()) throw ValidationError("invalid logic filter", std::move(findings));
}

const char* to_string(SessionStatus s) noexcept {
  switch (s) {
    case SessionStatus::pending: return "pending";
    case SessionStatus::live: return "live";
    case SessionStatus::ended: return "ended";
  }
  return "?";
}

const char* to_string(EndReason r) noexcept { return r == EndReason::deadline ? "deadline" : "manual"; }

const char* to_string(DecisionReason r) noexcept {
  switch (r) {
    case DecisionReason::mentioned: return "mentioned";
    case DecisionReason::proactive: return "proactive";
    case DecisionReason::cooldown: return "cooldown";
    case DecisionReason::below_threshold: return "below_threshold";
  }
  return "?";
}

const Participant& SessionState::bot() const {
  for (const auto& p : participants) {
    if (p.is_bot) return p;
  }
  throw StateError("session " + session_id + " has no bot participant");
}

const Participant* SessionState::find_participant(std::string_view participant_id) const {
  for (const auto& p : participants) {
    if (p.participant_id == participant_id) return &p;
  }
  return nullptr;
}

void SessionState::validate() const {
  std::vector<std::string> findings;
  if (session_id.empty()) findings.emplace_back("session_id: must not be empty");
  if (channel_id.empty()) findings.emplace_back("channel_id: must not be empty");
  if (!(deadline > started_at)) findings.emplace_back("deadline: must be after started_at");
  std::set<std::string> ids;
  std::size_t bots = 0;
  for (const auto& p : participants) {
    if (p.participant_id.empty()) findings.emplace_back("participants: empty participant id");
    if (!ids.insert(p.participant_id).second) findings.push_back("participants: duplicate id " + p.participant_id);
    if (p.is_bot) ++bots;
  }
  if (bots != 1) findings.push_back("participants: need exactly one bot, found " + std::to_string(bots));
  if (!findings.empty()) throw ValidationError("invalid session state", std::move(findings));
}

bool mentions_bot(const SessionState& session, std::string_view content) {
  const auto& bot = session.bot();
  if (text::contains_ci(content, "<@" + bot.participant_id + ">")) return true;
  return contains_word_ci(content, bot.display_name);
}

Decision decide_respond(const SessionState& session, const IncomingMessage& msg, const LogicFilterConfig& config,
                        double relevance) {
  const bool mention_rule = config.respond_when_mentioned && mentions_bot(session, msg.content);
  const bool proactive_rule = relevance >= config.proactivity_threshold;
  if (!mention_rule && !proactive_rule) return {false, DecisionReason::below_threshold};
  if (session.bot_last_spoke_at &&
      msg.timestamp - *session.bot_last_spoke_at < static_cast<double>(config.min_seconds_between_bot_messages)) {
    return {false, DecisionReason::cooldown};
  }
  return {true, mention_rule ? DecisionReason::mentioned : DecisionReason::proactive};
}

std::vector<ChatMessage> build_prompt(const SessionState& session, std::string_view persona_prompt,
                                      std::span<const ScoredMemory> retrieved, const LogicFilterConfig& filter,
                                      const PromptBudget& budget) {
  if (session.transcript_window.empty()) throw ParameterError("build_prompt: transcript window is empty");

  std::vector<std::string> memory_lines;
  for (const auto& m : retrieved) memory_lines.push_back("[memory] " + one_line(m.record->content));

  std::vector<ChatMessage> transcript;
  for (const auto& line : session.transcript_window) {
    transcript.push_back({line.from_bot ? Role::assistant : Role::user, line.display_name + ": " + line.text,
                          line.display_name});
  }

  auto system_text = [&](std::size_t memories) {
    std::string s(persona_prompt);
    if (memories > 0) {
      s += "\n\n## Memories\n";
      for (std::size_t i = 0; i < memories; ++i) s += (i ? "\n" : "") + memory_lines[i];
    }
    if (filter.scope_guard_enabled) s += "\n\n## Scope\n" + scope_guard_text(filter);
    return s;
  };

  std::size_t first_line = 0;
  std::size_t memories = memory_lines.size();
  auto total = [&] {
    std::int64_t t = count_tokens_estimate(system_text(memories), budget.token_factor);
    for (std::size_t i = first_line; i < transcript.size(); ++i) {
      t += count_tokens_estimate(transcript[i].content, budget.token_factor);
    }
    return t;
  };
  while (total() > budget.max_tokens) {
    if (first_line + 1 < transcript.size()) {
      ++first_line;
    } else if (memories > 0) {
      --memories;
    } else {
      throw ConfigError("prompt budget of " + std::to_string(budget.max_tokens) +
                        " tokens cannot hold the system prompt and the current message");
    }
  }

  std::vector<ChatMessage> out;
  out.push_back({Role::system, system_text(memories), std::nullopt});
  for (std::size_t i = first_line; i < transcript.size(); ++i) out.push_back(std::move(transcript[i]));
  return out;
}

Summarizer make_gateway_summarizer(std::shared_ptr<Gateway> gateway, GatewaySettings settings) {
  return [gateway = std::move(gateway), settings](const std::vector<std::shared_ptr<const MemoryRecord>>& window) {
    std::string excerpt;
    for (const auto& rec : window) excerpt += rec->speaker_id + ": " + one_line(rec->content) + "\n";
    CompletionRequest req;
    req.model_id = settings.model_id;
    req.temperature = settings.temperature;
    req.max_output_tokens = settings.max_output_tokens;
    req.request_id = "reflection:" + std::to_string(window.front()->id) + "-" + std::to_string(window.back()->id);
    req.messages = {{Role::system,
                     "Summarize this team conversation excerpt as a short reflection: the decisions made, open "
                     "questions, and where each participant stands.",
                     std::nullopt},
                    {Role::user, excerpt, std::nullopt}};
    return gateway->complete(req).content;
  };
}

Session::Session(SessionState state, SessionConfig config, std::string persona_prompt, SessionServices services)
    : id_(state.session_id),
      state_(std::move(state)),
      config_(std::move(config)),
      persona_prompt_(std::move(persona_prompt)),
      services_(std::move(services)) {
  state_.validate();
  config_.logic_filter.validate();
  if (!services_.events || !services_.memory || !services_.embedder || !services_.gateway) {
    throw ParameterError("session " + id_ + " is missing a service");
  }
  if (services_.embedder->dimension() != services_.memory->config().dimension) {
    throw ConfigError("embedder dimension does not match the memory store");
  }
  if (config_.transcript_window == 0) throw ConfigError("transcript window must hold at least one line");
}

void Session::set_retrieval_observer(RetrievalObserver observer) {
  std::lock_guard lock(mutex_);
  retrieval_observer_ = std::move(observer);
}

void Session::set_end_observer(EndObserver observer) {
  std::lock_guard lock(mutex_);
  end_observer_ = std::move(observer);
}

SessionState Session::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

void Session::push_transcript(TranscriptLine line) {
  state_.transcript_window.push_back(std::move(line));
  while (state_.transcript_window.size() > config_.transcript_window) state_.transcript_window.pop_front();
}

void Session::start() {
  std::lock_guard lock(mutex_);
  if (state_.status != SessionStatus::pending) throw StateError("session " + id_ + " already started");
  json participants = json::array();
  for (const auto& p : state_.participants) {
    participants.push_back({{"participant_id", p.participant_id}, {"display_name", p.display_name}, {"is_bot", p.is_bot}});
  }
  services_.events->append(id_, EventKind::session_start, state_.started_at, std::nullopt,
                           {{"experiment_id", state_.experiment_id},
                            {"channel_id", state_.channel_id},
                            {"participants", participants},
                            {"task",
                             {{"title", state_.task_title},
                              {"instructions", state_.task_instructions},
                              {"context_document_ids", state_.context_document_ids}}},
                            {"started_at", state_.started_at},
                            {"deadline", state_.deadline}});
  state_.status = SessionStatus::live;

  if (text::is_blank(state_.task_instructions)) return;
  const auto& bot = state_.bot();
  std::string task_text = text::is_blank(state_.task_title)
                              ? std::string(text::trim(state_.task_instructions))
                              : "Task: " + std::string(text::trim(state_.task_title)) + "\n" +
                                    std::string(text::trim(state_.task_instructions));
  services_.events->append(id_, EventKind::message, state_.started_at, bot.participant_id,
                           {{"text", task_text}, {"display_name", bot.display_name}, {"role", "task"}});
  push_transcript({bot.participant_id, bot.display_name, task_text, state_.started_at, true});
  auto rec = services_.memory->append_observation(task_text, bot.participant_id, state_.channel_id, state_.started_at,
                                                  services_.embedder->embed_text(task_text));
  last_memory_id_ = rec->id;
}

std::optional<OutboundReply> Session::handle_incoming(const IncomingMessage& msg) {
  std::lock_guard lock(mutex_);
  if (state_.status != SessionStatus::live) {
    throw StateError("session " + id_ + " is " + to_string(state_.status) + "; message rejected");
  }
  if (msg.channel_id != state_.channel_id) {
    throw ParameterError("message for channel " + msg.channel_id + " delivered to session " + id_);
  }
  const auto* speaker = state_.find_participant(msg.speaker_id);
  if (speaker == nullptr || speaker->is_bot) {
    throw ParameterError("speaker " + msg.speaker_id + " is not a participant of session " + id_);
  }
  if (text::is_blank(msg.content)) throw ParameterError("message content is empty");
  if (!msg.platform_message_id.empty() && seen_platform_ids_.count(msg.platform_message_id)) return std::nullopt;

  // (1) persist
  const auto message_event = services_.events->append(
      id_, EventKind::message, msg.timestamp, speaker->participant_id,
      {{"text", msg.content}, {"display_name", speaker->display_name}, {"platform_message_id", msg.platform_message_id}});
  if (!msg.platform_message_id.empty()) seen_platform_ids_.insert(msg.platform_message_id);
  ++state_.message_counter;
  push_transcript({speaker->participant_id, speaker->display_name, msg.content, msg.timestamp, false});

  // (2) memorize
  const auto embedding = services_.embedder->embed_text(msg.content);
  const auto record = services_.memory->append_observation(msg.content, speaker->participant_id, state_.channel_id,
                                                           msg.timestamp, embedding);
  last_memory_id_ = record->id;
  if (!reflection_window_first_) reflection_window_first_ = record->id;
  ++messages_since_reflection_;
  importance_since_reflection_ += record->importance;

  // (3) decide
  RetrievalQuery query;
  query.query_text = msg.content;
  query.query_embedding = embedding;
  query.now = msg.timestamp;
  query.k = config_.retrieval.k;
  query.lambda = config_.retrieval.lambda;
  query.weights = config_.retrieval.weights;
  query.channel_id = state_.channel_id;
  query.before_id = record->id;
  const auto retrieved = services_.memory->retrieve_top_k(query);
  if (retrieval_observer_) retrieval_observer_(msg, retrieved);
  const double relevance = retrieved.empty() ? 0.5 : retrieved.front().relevance;
  const auto decision = decide_respond(state_, msg, config_.logic_filter, relevance);

  auto suppress = [&](const std::string& reason, json extra) {
    extra["reason"] = reason;
    extra["relevance"] = relevance;
    extra["in_reply_to"] = message_event.seq;
    services_.events->append(id_, EventKind::suppression, msg.timestamp, std::nullopt, std::move(extra));
    maybe_reflect_locked(msg.timestamp);
    return std::nullopt;
  };
  if (!decision.respond) return suppress(to_string(decision.reason), json::object());

  // (4) respond
  std::vector<ChatMessage> prompt;
  try {
    prompt = build_prompt(state_, persona_prompt_, retrieved, config_.logic_filter, config_.prompt_budget);
  } catch (const ConfigError& e) {
    return suppress("prompt_budget", {{"error", e.what()}});
  }
  const auto request_id =
      id_ + ":" + (msg.platform_message_id.empty() ? "seq" + std::to_string(message_event.seq) : msg.platform_message_id);
  CompletionRequest request;
  request.model_id = config_.gateway.model_id;
  request.temperature = config_.gateway.temperature;
  request.max_output_tokens = std::min(config_.gateway.max_output_tokens, config_.logic_filter.max_reply_tokens);
  request.request_id = request_id;
  request.messages = prompt;

  json memory_ids = json::array();
  json memory_channels = json::array();
  for (const auto& m : retrieved) {
    memory_ids.push_back(m.record->id);
    memory_channels.push_back(m.record->channel_id);
  }
  json audit_messages = json::array();
  for (const auto& m : prompt) audit_messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  services_.events->append(id_, EventKind::prompt_audit, msg.timestamp, std::nullopt,
                           {{"in_reply_to", message_event.seq},
                            {"request_id", request_id},
                            {"channel_id", state_.channel_id},
                            {"memory_ids", memory_ids},
                            {"memory_channels", memory_channels},
                            {"model_id", request.model_id},
                            {"temperature", request.temperature},
                            {"max_output_tokens", request.max_output_tokens},
                            {"messages", audit_messages}});

  CompletionResult result;
  try {
    result = services_.gateway->complete(request);
  } catch (const RemoteError& e) {
    return suppress("gateway_error", {{"error_kind", to_string(e.kind())}, {"attempts", e.attempts()}, {"error", e.what()}});
  }
  bool truncated = false;
  const auto reply_text = truncate_to_tokens(text::trim(result.content), config_.logic_filter.max_reply_tokens,
                                             config_.prompt_budget.token_factor, truncated);
  if (text::is_blank(reply_text)) return suppress("gateway_error", {{"error_kind", "empty_reply"}});

  const auto& bot = state_.bot();
  const auto reply_event = services_.events->append(
      id_, EventKind::bot_reply, msg.timestamp, bot.participant_id,
      {{"text", reply_text},
       {"display_name", bot.display_name},
       {"in_reply_to", message_event.seq},
       {"reason", to_string(decision.reason)},
       {"request_id", request_id},
       {"truncated", truncated},
       {"attempts", result.attempts},
       {"usage", {{"prompt_tokens", result.usage.prompt_tokens}, {"completion_tokens", result.usage.completion_tokens}}}});
  state_.bot_last_spoke_at = msg.timestamp;
  push_transcript({bot.participant_id, bot.display_name, reply_text, msg.timestamp, true});
  if (config_.memorize_bot_replies) {
    auto rec = services_.memory->append_observation(reply_text, bot.participant_id, state_.channel_id, msg.timestamp,
                                                    services_.embedder->embed_text(reply_text));
    last_memory_id_ = rec->id;
  }
  maybe_reflect_locked(msg.timestamp);

  OutboundReply reply;
  reply.session_id = id_;
  reply.channel_id = state_.channel_id;
  reply.text = reply_text;
  reply.timestamp = msg.timestamp;
  reply.request_id = request_id;
  reply.event_seq = reply_event.seq;
  reply.reason = decision.reason;
  return reply;
}

std::shared_ptr<const MemoryRecord> Session::maybe_reflect(double now) {
  std::lock_guard lock(mutex_);
  return maybe_reflect_locked(now);
}

std::shared_ptr<const MemoryRecord> Session::maybe_reflect_locked(double now) {
  if (!reflection_window_first_ || state_.status != SessionStatus::live) return nullptr;
  const bool by_count = messages_since_reflection_ >= config_.reflection.every_messages;
  const bool by_importance = importance_since_reflection_ >= config_.reflection.importance_threshold;
  if (!by_count && !by_importance) return nullptr;
  if (!services_.summarizer) return nullptr;

  std::shared_ptr<const MemoryRecord> reflection;
  try {
    reflection = services_.memory->synthesize_reflection(state_.channel_id, {*reflection_window_first_, last_memory_id_},
                                                         services_.summarizer, *services_.embedder, now);
  } catch (const RemoteError&) {
    return nullptr;  // counters stay; the next message retries
  } catch (const ParameterError&) {
    return nullptr;
  }
  services_.events->append(id_, EventKind::reflection, now, state_.bot().participant_id,
                           {{"memory_id", reflection->id},
                            {"source_ids", reflection->source_ids},
                            {"content", reflection->content},
                            {"trigger", by_count ? "count" : "importance"}});
  last_memory_id_ = reflection->id;
  reflection_window_first_.reset();
  messages_since_reflection_ = 0;
  importance_since_reflection_ = 0.0;
  return reflection;
}

json Session::final_record_locked() const {
  return {{"session_id", id_},
          {"status", to_string(state_.status)},
          {"reason", end_reason_ ? json(to_string(*end_reason_)) : json(nullptr)},
          {"ended_at", ended_at_},
          {"message_counter", state_.message_counter},
          {"last_seq", services_.events->has_session(id_) ? services_.events->last_seq(id_) : 0}};
}

json Session::end(EndReason reason, double now) {
  EndObserver observer;
  json record;
  {
    std::lock_guard lock(mutex_);
    if (state_.status == SessionStatus::ended) return final_record_locked();
    if (state_.status == SessionStatus::pending) throw StateError("session " + id_ + " was never started");
    services_.events->append(id_, EventKind::session_end, now, std::nullopt,
                             {{"reason", to_string(reason)}, {"message_counter", state_.message_counter}});
    state_.status = SessionStatus::ended;
    end_reason_ = reason;
    ended_at_ = now;
    record = final_record_locked();
    observer = end_observer_;
  }
  if (observer) observer(id_);
  return record;
}

}  // namespace aicollab
