#include "aicollab/http_service.hpp"

#include <sys/socket.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <iostream>
#include <list>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <httplib.h>

#include "aicollab/crypto.hpp"
#include "aicollab/text.hpp"

namespace aicollab {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                const std::vector<std::string>& findings = {}) {
  json body = {{"error", code}, {"message", message}};
  if (!findings.empty()) body["findings"] = findings;
  send_json(res, status, body);
}

json parse_body(const httplib::Request& req) {
  if (text::is_blank(req.body)) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ParameterError(std::string("request body is not valid JSON: ") + e.what());
  }
}

std::uint64_t seq_param(const httplib::Request& req, const char* name) {
  std::string v;
  if (req.has_param(name)) {
    v = req.get_param_value(name);
  } else if (req.has_header("Last-Event-ID")) {
    v = req.get_header_value("Last-Event-ID");
  } else {
    return 0;
  }
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ParameterError(std::string(name) + " must be a non-negative integer");
  }
}

std::string sse_frame(const std::string& event, const json& data, std::optional<std::uint64_t> id) {
  std::string out;
  if (id) out += "id: " + std::to_string(*id) + "\n";
  out += "event: " + event + "\ndata: " + data.dump() + "\n\n";
  return out;
}

json reply_json(const OutboundReply& r) {
  return {{"session_id", r.session_id}, {"channel_id", r.channel_id}, {"text", r.text},
          {"timestamp", r.timestamp},   {"request_id", r.request_id}, {"event_seq", r.event_seq},
          {"reason", to_string(r.reason)}};
}

json descriptor_json(const DescriptorTable& table) {
  json facets = json::array();
  for (const auto& f : table.facets()) {
    json levels = json::object();
    for (auto level : kAllLevels) levels[to_string(level)] = f.descriptors[static_cast<std::size_t>(level)];
    facets.push_back({{"trait", to_string(f.trait)}, {"facet", f.name}, {"levels", levels}});
  }
  return {{"version", table.version()}, {"facets", facets}, {"document", table.serialize()}};
}

std::vector<ParticipantProfile> profiles_from(const json& list) {
  if (!list.is_array()) throw ParameterError("participants must be an array of profiles");
  std::vector<ParticipantProfile> out;
  for (const auto& p : list) out.push_back(ParticipantProfile::from_json(p));
  return out;
}

json team_json(const std::vector<PoolEntry>& team) {
  json out = json::array();
  for (const auto& e : team) {
    auto p = e.profile.to_json();
    p["enqueued_at"] = e.enqueued_at;
    out.push_back(p);
  }
  return out;
}

// Response replay for retried mutating requests.
class IdempotencyCache {
 public:
  struct Entry {
    std::string body_digest;
    int status = 0;
    std::string content;
    std::string content_type;
  };

  explicit IdempotencyCache(std::size_t capacity) : capacity_(capacity) {}

  std::optional<Entry> find(const std::string& key) {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void store(const std::string& key, Entry entry) {
    std::lock_guard lock(mutex_);
    if (capacity_ == 0 || entries_.count(key)) return;
    entries_.emplace(key, std::move(entry));
    order_.push_back(key);
    while (order_.size() > capacity_) {
      entries_.erase(order_.front());
      order_.pop_front();
    }
  }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::unordered_map<std::string, Entry> entries_;
  std::deque<std::string> order_;
};

bool is_mutating(const std::string& method) { return method == "POST" || method == "PUT" || method == "DELETE"; }

}  // namespace

struct HttpService::Impl {
  std::shared_ptr<ExperimentService> service;
  HttpServiceOptions options;
  httplib::Server server;
  IdempotencyCache idempotency;
  std::atomic<bool> stopping{false};

  // Platform events are acknowledged immediately and relayed in receipt order.
  std::mutex inbox_mutex;
  std::condition_variable inbox_cv;
  std::deque<PlatformEvent> inbox;
  std::thread relay;

  Impl(std::shared_ptr<ExperimentService> s, HttpServiceOptions o)
      : service(std::move(s)), options(std::move(o)), idempotency(options.idempotency_cache) {
    if (!service) throw ConfigError("http service needs an experiment service");
    if (options.researcher_token.empty()) throw ConfigError("http service needs a researcher token");
    relay = std::thread([this] { relay_loop(); });
    install();
  }

  ~Impl() {
    stopping = true;
    inbox_cv.notify_all();
    if (relay.joinable()) relay.join();
  }

  void relay_loop() {
    for (;;) {
      PlatformEvent ev;
      {
        std::unique_lock lock(inbox_mutex);
        inbox_cv.wait(lock, [&] { return stopping || !inbox.empty(); });
        if (inbox.empty()) return;
        ev = std::move(inbox.front());
        inbox.pop_front();
      }
      try {
        service->handle_platform_event(ev);
      } catch (const std::exception& e) {
        std::cerr << "aicollab: platform event dropped: " << text::redact_credentials(e.what()) << '\n';
      }
    }
  }

  bool authorized(const httplib::Request& req) const {
    std::string presented;
    const auto auth = req.get_header_value("Authorization");
    if (auth.rfind("Bearer ", 0) == 0) {
      presented = auth.substr(7);
    } else if (req.has_header("X-Researcher-Token")) {
      presented = req.get_header_value("X-Researcher-Token");
    }
    return !presented.empty() && crypto::constant_time_equal(presented, options.researcher_token);
  }

  static std::string idempotency_key(const httplib::Request& req) {
    const auto key = req.get_header_value("Idempotency-Key");
    return key.empty() ? key : req.method + " " + req.path + " " + key;
  }

  // Answers a retried mutating request from the cache. The body is only read
  // once routing has matched, so this runs inside the route handler.
  bool replay(const httplib::Request& req, httplib::Response& res) {
    if (req.path.rfind("/v1/", 0) != 0 || !is_mutating(req.method)) return false;
    const auto key = idempotency_key(req);
    if (key.empty()) return false;
    const auto hit = idempotency.find(key);
    if (!hit) return false;
    if (hit->body_digest != crypto::sha256_hex(req.body)) {
      send_error(res, 422, "idempotency_key_reused", "Idempotency-Key was used with a different body");
    } else {
      res.status = hit->status;
      res.set_content(hit->content, hit->content_type);
      res.set_header("Idempotent-Replay", "true");
    }
    return true;
  }

  template <class F>
  httplib::Server::Handler guarded(F fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        if (!replay(req, res)) fn(req, res);
      } catch (const ValidationError& e) {
        send_error(res, 422, "validation_failed", e.what(), e.findings());
      } catch (const ParameterError& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const ConfigError& e) {
        send_error(res, 400, "bad_config", e.what());
      } catch (const NotFoundError& e) {
        send_error(res, 404, "not_found", e.what());
      } catch (const StateError& e) {
        send_error(res, 409, "conflict", e.what());
      } catch (const RemoteError& e) {
        send_error(res, 502, std::string("remote_") + to_string(e.kind()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void install() {
    server.set_socket_options([](int sock) {
      // Plain SO_REUSEADDR: a second server on a taken port must fail to bind.
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    server.set_payload_max_length(kDefaultDocumentCap * 4);

    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (!options.cors_origin.empty()) {
        res.set_header("Access-Control-Allow-Origin", options.cors_origin);
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type, Idempotency-Key, If-Match, Last-Event-ID");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS");
        res.set_header("Access-Control-Expose-Headers", "ETag");
        if (req.method == "OPTIONS") {
          res.status = 204;
          return httplib::Server::HandlerResponse::Handled;
        }
      }
      if (req.path.rfind("/v1/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
      if (!authorized(req)) {
        send_error(res, 401, "unauthorized", "missing or wrong researcher token");
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });
    server.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (req.path.rfind("/v1/", 0) != 0 || !is_mutating(req.method) || res.status >= 500 || res.status == 401) return;
      if (res.has_header("Idempotent-Replay")) return;
      const auto key = idempotency_key(req);
      if (key.empty()) return;
      idempotency.store(key, {crypto::sha256_hex(req.body), res.status, res.body,
                              res.get_header_value("Content-Type")});
    });

    server.Get("/readyz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    // -- experiments
    server.Get("/v1/experiments", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& c : service->experiments()) out.push_back(c.to_json());
      send_json(res, 200, {{"experiments", out}});
    }));
    server.Post("/v1/experiments", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto config = service->create_experiment(parse_body(req));
      send_json(res, 201, {{"experiment_id", config.experiment_id}, {"config", config.to_json()}, {"findings", json::array()}});
    }));
    server.Get(R"(/v1/experiments/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service->experiment(req.matches[1]).to_json());
    }));
    server.Put(R"(/v1/experiments/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service->update_experiment(req.matches[1], parse_body(req)).to_json());
    }));
    server.Post(R"(/v1/experiments/([^/]+)/open)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service->open_experiment(req.matches[1]).to_json());
    }));
    server.Post(R"(/v1/experiments/([^/]+)/close)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service->close_experiment(req.matches[1]).to_json());
    }));

    // -- context documents: raw bytes, name in the query string
    server.Post(R"(/v1/experiments/([^/]+)/documents)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  if (!req.has_param("name")) throw ParameterError("document upload needs ?name=");
                  const auto doc = service->upload_document(req.matches[1], req.get_param_value("name"), req.body);
                  send_json(res, 201, doc.summary_json());
                }));
    server.Get(R"(/v1/experiments/([^/]+)/documents)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 json out = json::array();
                 for (const auto& d : service->documents(req.matches[1])) out.push_back(d.summary_json());
                 send_json(res, 200, {{"documents", out}});
               }));

    // -- waiting pool and matching
    server.Get(R"(/v1/experiments/([^/]+)/pool)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, {{"pool", team_json(service->pool(req.matches[1]))}});
    }));
    server.Post(R"(/v1/experiments/([^/]+)/pool)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto profile = ParticipantProfile::from_json(parse_body(req));
      const auto id = profile.participant_id;
      service->join_pool(req.matches[1], std::move(profile));
      send_json(res, 201, {{"participant_id", id}, {"pool_size", service->pool(req.matches[1]).size()}});
    }));
    server.Delete(R"(/v1/experiments/([^/]+)/pool/([^/]+))",
                  guarded([this](const httplib::Request& req, httplib::Response& res) {
                    if (!service->leave_pool(req.matches[1], req.matches[2])) {
                      throw NotFoundError("participant " + std::string(req.matches[2]) + " is not waiting");
                    }
                    send_json(res, 200, {{"participant_id", std::string(req.matches[2])}, {"removed", true}});
                  }));
    server.Post(R"(/v1/experiments/([^/]+)/match)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      const std::string exp = req.matches[1];
      const auto teams = service->match_pool(exp);
      json out = json::array();
      json sessions = json::array();
      for (const auto& team : teams) {
        out.push_back(team_json(team));
        if (body.value("start_sessions", false)) {
          std::vector<ParticipantProfile> profiles;
          for (const auto& e : team) profiles.push_back(e.profile);
          sessions.push_back(service->start_session(exp, profiles));
        }
      }
      send_json(res, 200, {{"teams", out}, {"sessions", sessions}, {"residual", team_json(service->pool(exp))}});
    }));

    // -- sessions
    server.Post(R"(/v1/experiments/([^/]+)/sessions)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = parse_body(req);
                  const std::string exp = req.matches[1];
                  std::vector<ParticipantProfile> team;
                  if (body.contains("participants")) {
                    team = profiles_from(body["participants"]);
                  } else if (body.contains("participant_ids")) {
                    const auto pool = service->pool(exp);
                    for (const auto& id : body["participant_ids"].get<std::vector<std::string>>()) {
                      const auto it = std::find_if(pool.begin(), pool.end(),
                                                   [&](const PoolEntry& e) { return e.participant_id() == id; });
                      if (it == pool.end()) throw NotFoundError("participant " + id + " is not waiting");
                      team.push_back(it->profile);
                    }
                  } else {
                    throw ParameterError("session start needs participants or participant_ids");
                  }
                  std::optional<std::string> channel;
                  if (body.contains("channel_id")) channel = body["channel_id"].get<std::string>();
                  const auto sid = service->start_session(exp, team, channel);
                  send_json(res, 201, service->session_info(sid).to_json());
                }));
    server.Get("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> exp;
      if (req.has_param("experiment_id")) exp = req.get_param_value("experiment_id");
      json out = json::array();
      for (const auto& s : service->sessions(exp)) out.push_back(s.to_json());
      send_json(res, 200, {{"sessions", out}});
    }));
    server.Get(R"(/v1/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service->session_info(req.matches[1]).to_json());
    }));
    server.Post(R"(/v1/sessions/([^/]+)/stop)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service->stop_session(req.matches[1]));
    }));
    server.Post(R"(/v1/sessions/([^/]+)/messages)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      const auto reply = service->post_message(req.matches[1], body.at("participant_id").get<std::string>(),
                                               body.at("text").get<std::string>(), body.value("message_id", std::string()));
      send_json(res, 200, {{"reply", reply ? reply_json(*reply) : json(nullptr)}});
    }));
    server.Post(R"(/v1/sessions/([^/]+)/feedback)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto rec = service->record_feedback(req.matches[1], parse_body(req));
      send_json(res, 201, {{"seq", rec.seq}});
    }));
    server.Get(R"(/v1/sessions/([^/]+)/analytics)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::uint64_t> up_to;
      if (req.has_param("up_to_seq")) up_to = seq_param(req, "up_to_seq");
      send_json(res, 200, service->analytics(req.matches[1], up_to).to_json());
    }));
    server.Get(R"(/v1/sessions/([^/]+)/export)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto format = req.has_param("format") ? req.get_param_value("format") : std::string("events");
      if (format == "events") {
        res.set_content(service->export_session(req.matches[1], ExportFormat::events), "application/x-ndjson");
      } else if (format == "transcript") {
        res.set_content(service->export_session(req.matches[1], ExportFormat::transcript), "text/plain; charset=utf-8");
      } else {
        throw ParameterError("format must be events or transcript");
      }
    }));
    server.Get(R"(/v1/sessions/([^/]+)/analytics/stream)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::shared_ptr<AnalyticsStream> stream =
                     service->stream_analytics(req.matches[1], seq_param(req, "after_seq"));
                 res.set_header("Cache-Control", "no-cache");
                 res.set_chunked_content_provider(
                     "text/event-stream", [this, stream](std::size_t, httplib::DataSink& sink) {
                       if (stopping) {
                         sink.done();
                         return true;
                       }
                       std::string frame;
                       if (auto snap = stream->next(options.stream_poll)) {
                         frame = sse_frame("snapshot", snap->to_json(), snap->as_of_seq);
                       } else if (stream->finished()) {
                         frame = sse_frame("end", json::object(), std::nullopt);
                         sink.write(frame.data(), frame.size());
                         sink.done();
                         return true;
                       } else {
                         frame = ": keep-alive\n\n";
                       }
                       return sink.write(frame.data(), frame.size());
                     });
               }));
    server.Get(R"(/v1/sessions/([^/]+)/chat/stream)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::shared_ptr<EventCursor> cursor = service->stream_events(req.matches[1], seq_param(req, "after_seq"));
                 res.set_header("Cache-Control", "no-cache");
                 res.set_chunked_content_provider(
                     "text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
                       if (stopping) {
                         sink.done();
                         return true;
                       }
                       std::string frame;
                       if (auto rec = cursor->next(options.stream_poll)) {
                         if (rec->kind != EventKind::message && rec->kind != EventKind::bot_reply) return true;
                         frame = sse_frame(to_string(rec->kind),
                                           {{"seq", rec->seq},
                                            {"speaker_id", rec->speaker_id ? json(*rec->speaker_id) : json(nullptr)},
                                            {"display_name", rec->payload.value("display_name", std::string())},
                                            {"text", rec->payload.value("text", std::string())},
                                            {"timestamp", rec->timestamp}},
                                           rec->seq);
                       } else if (cursor->finished()) {
                         frame = sse_frame("end", json::object(), std::nullopt);
                         sink.write(frame.data(), frame.size());
                         sink.done();
                         return true;
                       } else {
                         frame = ": keep-alive\n\n";
                       }
                       return sink.write(frame.data(), frame.size());
                     });
               }));

    // -- persona descriptors and preview
    server.Get("/v1/descriptors", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto table = service->descriptor_table();
      res.set_header("ETag", "\"" + table->version() + "\"");
      send_json(res, 200, descriptor_json(*table));
    }));
    server.Put("/v1/descriptors", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> expected;
      if (req.has_header("If-Match")) {
        auto v = req.get_header_value("If-Match");
        if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
        expected = v;
      }
      std::string document = req.body;
      if (req.get_header_value("Content-Type").rfind("application/json", 0) == 0) {
        document = parse_body(req).at("document").get<std::string>();
      }
      const auto table = service->put_descriptor_table(document, expected);
      res.set_header("ETag", "\"" + table->version() + "\"");
      send_json(res, 200, descriptor_json(*table));
    }));
    server.Post("/v1/persona/compile", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      const auto table = service->descriptor_table();
      if (body.contains("table_version") && body["table_version"].get<std::string>() != table->version()) {
        throw StateError("descriptor table is at version " + table->version());
      }
      const auto spec = (body.contains("persona") ? body["persona"] : body).get<PersonaSpec>();
      send_json(res, 200, {{"prompt", compile_system_prompt(spec, *table)}, {"table_version", table->version()}});
    }));

    // -- parameter sweeps (scripted backends only)
    server.Post("/v1/sweeps", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      const auto grid = sweep_grid_from_json(body.at("grid"));
      const auto fixture = SimulationScript::from_json(body.at("fixture"));
      std::optional<std::string> exp;
      if (body.contains("experiment_id")) exp = body["experiment_id"].get<std::string>();
      send_json(res, 200, {{"rows", sweep_to_json(service->run_sweep(grid, fixture, exp))}});
    }));

    // -- platform callbacks, authenticated by signature instead of token
    server.Post("/slack/events", [this](const httplib::Request& req, httplib::Response& res) {
      if (options.slack_signing_secret.empty()) return send_error(res, 404, "not_found", "platform events disabled");
      if (!verify_signature(req.get_header_value("X-Slack-Request-Timestamp"), req.get_header_value("X-Slack-Signature"),
                            req.body, options.slack_signing_secret, service->now())) {
        return send_error(res, 401, "bad_signature", "signature verification failed");
      }
      std::optional<PlatformEvent> ev;
      try {
        ev = parse_event(req.body, service->slack_bot_user_id());
      } catch (const Error& e) {
        // Acknowledge anyway; the platform would keep retrying a malformed payload.
        std::cerr << "aicollab: malformed platform payload: " << text::redact_credentials(e.what()) << '\n';
        return send_json(res, 200, {{"ok", true}});
      }
      if (ev && ev->envelope_type == EnvelopeType::verification_challenge) {
        return send_json(res, 200, {{"challenge", ev->challenge}});
      }
      if (ev && ev->envelope_type == EnvelopeType::message_event) {
        {
          std::lock_guard lock(inbox_mutex);
          inbox.push_back(std::move(*ev));
        }
        inbox_cv.notify_one();
      }
      send_json(res, 200, {{"ok", true}});
    });
  }
};

HttpService::HttpService(std::shared_ptr<ExperimentService> service, HttpServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(service), std::move(options))) {}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  if (port < 0 || port > 65535) throw BindError("port out of range: " + std::to_string(port));
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) throw BindError("cannot bind " + host + " on any port");
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw BindError("cannot bind " + host + ":" + std::to_string(port) + " (address in use?)");
  }
  return port;
}

void HttpService::serve() { impl_->server.listen_after_bind(); }

void HttpService::stop() {
  if (!impl_) return;
  impl_->stopping = true;
  impl_->server.stop();
}

}  // namespace aicollab
