#include "aicollab/platform.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>

#include "aicollab/crypto.hpp"
#include "aicollab/error.hpp"
#include "aicollab/text.hpp"
#include "http_client.hpp"

namespace aicollab {

using nlohmann::json;

const char* to_string(EnvelopeType t) noexcept {
  switch (t) {
    case EnvelopeType::verification_challenge: return "verification_challenge";
    case EnvelopeType::message_event: return "message_event";
    case EnvelopeType::unsupported: return "unsupported";
  }
  return "?";
}

double PlatformEvent::timestamp() const {
  if (ts.empty()) return 0.0;
  char* end = nullptr;
  const double v = std::strtod(ts.c_str(), &end);
  return (end != ts.c_str() && std::isfinite(v)) ? v : 0.0;
}

std::string PlatformEvent::message_id() const {
  if (raw.is_object()) {
    const auto ev = raw.find("event");
    if (ev != raw.end() && ev->is_object()) {
      const auto id = ev->find("client_msg_id");
      if (id != ev->end() && id->is_string() && !id->get<std::string>().empty()) return id->get<std::string>();
    }
  }
  return ts;
}

std::string compute_signature(std::string_view timestamp, std::string_view body, std::string_view secret) {
  std::string base;
  base.reserve(timestamp.size() + body.size() + 4);
  base.append(kSignatureVersion).append(":").append(timestamp).append(":").append(body);
  return std::string(kSignatureVersion) + "=" + crypto::hmac_sha256_hex(secret, base);
}

bool verify_signature(std::string_view timestamp_header, std::string_view signature_header, std::string_view body,
                      std::string_view secret, double now) {
  const auto ts_text = text::trim(timestamp_header);
  if (ts_text.empty() || secret.empty()) return false;
  long long ts = 0;
  const auto [ptr, ec] = std::from_chars(ts_text.data(), ts_text.data() + ts_text.size(), ts);
  if (ec != std::errc() || ptr != ts_text.data() + ts_text.size()) return false;
  if (std::fabs(now - static_cast<double>(ts)) > kSignatureMaxAgeSeconds) return false;

  // "v0=" followed by 64 hex digits.
  const auto sig = text::trim(signature_header);
  const std::string prefix = std::string(kSignatureVersion) + "=";
  if (sig.size() != prefix.size() + 64 || sig.substr(0, prefix.size()) != prefix) return false;
  for (char c : sig.substr(prefix.size())) {
    if (!std::isxdigit(static_cast<unsigned char>(c))) return false;
  }
  const auto expected = compute_signature(ts_text, body, secret);
  return crypto::constant_time_equal(expected, text::to_lower_ascii(sig));
}

std::optional<PlatformEvent> parse_event(std::string_view payload, std::string_view bot_user_id) {
  json j;
  try {
    j = json::parse(payload);
  } catch (const json::parse_error& e) {
    throw ParameterError(std::string("malformed platform payload: ") + e.what());
  }
  if (!j.is_object()) throw ParameterError("malformed platform payload: not an object");

  PlatformEvent ev;
  ev.raw = j;
  const auto type = j.value("type", std::string());
  if (type == "url_verification") {
    const auto it = j.find("challenge");
    if (it == j.end() || !it->is_string()) throw ParameterError("verification payload without a challenge");
    ev.envelope_type = EnvelopeType::verification_challenge;
    ev.challenge = it->get<std::string>();
    return ev;
  }
  if (type != "event_callback") return ev;  // unsupported

  const auto inner = j.find("event");
  if (inner == j.end() || !inner->is_object()) throw ParameterError("event_callback without an event object");
  const auto& e = *inner;
  if (e.value("type", std::string()) != "message") return ev;
  // Edits, deletions, joins and similar subtypes carry no new utterance.
  if (e.contains("subtype") && e.value("subtype", std::string()) != "thread_broadcast") {
    if (e.value("subtype", std::string()) == "bot_message") return std::nullopt;
    return ev;
  }
  if (e.contains("bot_id")) return std::nullopt;
  const auto user = e.value("user", std::string());
  if (!bot_user_id.empty() && user == bot_user_id) return std::nullopt;

  ev.channel = e.value("channel", std::string());
  ev.user = user;
  ev.text = e.value("text", std::string());
  ev.ts = e.value("ts", std::string());
  if (ev.channel.empty() || ev.user.empty() || text::is_blank(ev.text)) return ev;  // nothing to relay
  ev.envelope_type = EnvelopeType::message_event;
  return ev;
}

DedupWindow::DedupWindow(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ParameterError("dedup window capacity must be positive");
}

bool DedupWindow::first_delivery(const std::string& channel, const std::string& message_id) {
  std::lock_guard lock(mutex_);
  auto& w = windows_[channel];
  if (w.ids.count(message_id)) return false;
  w.ids.insert(message_id);
  w.order.push_back(message_id);
  if (w.order.size() > capacity_) {
    w.ids.erase(w.order.front());
    w.order.pop_front();
  }
  return true;
}

LoopbackAdapter::LoopbackAdapter(std::size_t max_chars) : max_chars_(max_chars) {
  if (max_chars_ < 4) throw ParameterError("platform message cap must be at least 4 bytes");
}

void LoopbackAdapter::add_channel(const std::string& channel) {
  std::lock_guard lock(mutex_);
  channels_.insert(channel);
}

bool LoopbackAdapter::has_channel(const std::string& channel) const {
  std::lock_guard lock(mutex_);
  return channels_.count(channel) > 0;
}

void LoopbackAdapter::set_sink(Sink sink) {
  std::lock_guard lock(mutex_);
  sink_ = std::move(sink);
}

std::vector<std::string> LoopbackAdapter::send_message(const std::string& channel, const std::string& text) {
  if (text.empty()) throw ParameterError("cannot send an empty message");
  std::vector<LoopbackMessage> delivered;
  Sink sink;
  {
    std::lock_guard lock(mutex_);
    if (!channels_.count(channel)) throw NotFoundError("channel not found: " + channel);
    for (auto& piece : text::chunk_utf8(text, max_chars_)) {
      LoopbackMessage m{channel + ":" + std::to_string(++counters_[channel]), channel, std::move(piece)};
      sent_[channel].push_back(m);
      delivered.push_back(std::move(m));
    }
    sink = sink_;
  }
  std::vector<std::string> ids;
  for (const auto& m : delivered) {
    if (sink) sink(m);
    ids.push_back(m.message_id);
  }
  return ids;
}

std::vector<LoopbackMessage> LoopbackAdapter::sent(const std::string& channel) const {
  std::lock_guard lock(mutex_);
  const auto it = sent_.find(channel);
  return it == sent_.end() ? std::vector<LoopbackMessage>{} : it->second;
}

SlackAdapter::SlackAdapter(SlackConfig config, Sleeper sleeper)
    : config_(std::move(config)), retrier_(config_.retry, sleeper ? std::move(sleeper) : Sleeper(sleep_real)) {
  if (config_.bot_token.empty()) throw ConfigError("slack adapter needs a bot token");
  if (config_.max_chars < 4) throw ConfigError("slack message cap must be at least 4 bytes");
}

std::string SlackAdapter::post_once(const std::string& channel, const std::string& text) {
  const json body = {{"channel", channel}, {"text", text}};
  const auto resp = detail::http_post(config_.base_url + "/chat.postMessage",
                                      {{"Authorization", "Bearer " + config_.bot_token}}, body.dump(),
                                      "application/json; charset=utf-8", config_.timeout);
  if (resp.status < 200 || resp.status >= 300) throw detail::classify_http_failure(resp);
  json r;
  try {
    r = json::parse(resp.body);
  } catch (const json::parse_error&) {
    throw RemoteError(RemoteErrorKind::server, "unparseable chat.postMessage response");
  }
  if (r.value("ok", false)) return r.value("ts", std::string());
  const auto error = r.value("error", std::string("unknown_error"));
  if (error == "channel_not_found" || error == "not_in_channel") throw NotFoundError("channel not found: " + channel);
  if (error == "ratelimited") throw RemoteError(RemoteErrorKind::rate_limit, error, detail::parse_retry_after(resp));
  if (error == "invalid_auth" || error == "not_authed" || error == "token_revoked") {
    throw RemoteError(RemoteErrorKind::auth, error);
  }
  throw RemoteError(RemoteErrorKind::invalid_request, error);
}

std::vector<std::string> SlackAdapter::send_message(const std::string& channel, const std::string& text) {
  if (text.empty()) throw ParameterError("cannot send an empty message");
  std::vector<std::string> ids;
  for (const auto& piece : text::chunk_utf8(text, config_.max_chars)) {
    ids.push_back(retrier_.run([&](int) { return post_once(channel, piece); }));
  }
  return ids;
}

OrderedDispatcher::OrderedDispatcher(ErrorHandler on_error) : on_error_(std::move(on_error)) {}

void OrderedDispatcher::submit(const std::string& key, Task task) {
  {
    std::lock_guard lock(mutex_);
    auto& lane = lanes_[key];
    lane.queue.push_back(std::move(task));
    if (lane.draining) return;
    lane.draining = true;
  }
  for (;;) {
    Task next;
    {
      std::lock_guard lock(mutex_);
      auto& lane = lanes_[key];
      if (lane.queue.empty()) {
        lane.draining = false;
        return;
      }
      next = std::move(lane.queue.front());
      lane.queue.pop_front();
    }
    try {
      next();
    } catch (const std::exception& e) {
      if (on_error_) on_error_(key, e);
    }
  }
}

}  // namespace aicollab
