#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "aicollab/crypto.hpp"
#include "aicollab/http_service.hpp"
#include "unit/support.hpp"

using namespace aicollab;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

constexpr double kT0 = 1735689600.0;
constexpr const char* kToken = "test-researcher-token";
constexpr const char* kSecret = "8f742231b10e8888abcd99yyyzzz85a5";

struct Server {
  std::shared_ptr<std::atomic<double>> now = std::make_shared<std::atomic<double>>(kT0);
  std::shared_ptr<ExperimentService> service;
  std::unique_ptr<HttpService> http;
  std::thread thread;
  int port = 0;

  explicit Server(std::string cors = {}) {
    ServiceOptions o;
    o.descriptors = std::make_shared<DescriptorTable>(testsupport::default_table());
    o.clock = [now = now] { return now->load(); };
    o.sleeper = [](auto) {};
    service = std::make_shared<ExperimentService>(std::move(o));
    HttpServiceOptions h;
    h.researcher_token = kToken;
    h.slack_signing_secret = kSecret;
    h.cors_origin = std::move(cors);
    h.stream_poll = 50ms;
    http = std::make_unique<HttpService>(service, h);
    port = http->bind("127.0.0.1", 0);
    thread = std::thread([this] { http->serve(); });
  }

  ~Server() {
    http->stop();
    thread.join();
  }

  httplib::Client client(bool auth = true) const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    if (auth) c.set_bearer_token_auth(kToken);
    return c;
  }
};

json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return json::parse(r->body);
}

json experiment_body() {
  return {{"experiment_id", "e1"},
          {"persona", {{"name", "Sage"}, {"role_description", "You help a small team plan a community event."}}},
          {"task", {{"title", "Plan"}, {"instructions", "Plan a picnic."}}},
          {"composition", {{"team_size", 2}}},
          {"duration_seconds", 600},
          {"gateway", {{"script", {{{"match", "budget"}, {"reply", "Cap it at 500."}}}}}},
          {"logic_filter", {{"proactivity_threshold", 1.0}, {"min_seconds_between_bot_messages", 0}}}};
}

// Creates e1, opens it and starts a session for ana and ben; returns the session id.
std::string start(Server& s) {
  auto c = s.client();
  REQUIRE(c.Post("/v1/experiments", experiment_body().dump(), "application/json")->status == 201);
  REQUIRE(c.Post("/v1/experiments/e1/open")->status == 200);
  const json team = {{"participants",
                      {{{"participant_id", "ana"}, {"display_name", "Ana"}}, {{"participant_id", "ben"}, {"display_name", "Ben"}}}}};
  const auto r = c.Post("/v1/experiments/e1/sessions", team.dump(), "application/json");
  REQUIRE(r);
  REQUIRE(r->status == 201);
  return json::parse(r->body)["session_id"];
}

// Reads an SSE response until `stop` matches or the server ends the stream.
std::string read_stream(httplib::Client& c, const std::string& path, const std::string& stop) {
  std::string got;
  c.Get(path, [&](const char* data, std::size_t n) {
    got.append(data, n);
    return got.find(stop) == std::string::npos;
  });
  return got;
}

std::vector<json> frames(const std::string& stream, const std::string& event) {
  std::vector<json> out;
  const std::string marker = "event: " + event + "\ndata: ";
  for (auto pos = stream.find(marker); pos != std::string::npos; pos = stream.find(marker, pos + 1)) {
    const auto start = pos + marker.size();
    out.push_back(json::parse(stream.substr(start, stream.find('\n', start) - start)));
  }
  return out;
}

httplib::Headers signed_headers(const std::string& body, double ts) {
  const auto t = std::to_string(static_cast<long long>(ts));
  return {{"X-Slack-Request-Timestamp", t},
          {"X-Slack-Signature", "v0=" + crypto::hmac_sha256_hex(kSecret, "v0:" + t + ":" + body)}};
}

}  // namespace

TEST_SUITE("http_service") {
  TEST_CASE("readiness needs no token, everything under /v1 does") {
    Server s;
    auto anon = s.client(false);
    const auto ready = anon.Get("/readyz");
    REQUIRE(ready);
    CHECK(ready->status == 200);
    CHECK(body_of(ready)["status"] == "ok");

    const auto denied = anon.Get("/v1/experiments");
    REQUIRE(denied);
    CHECK(denied->status == 401);
    CHECK(body_of(denied)["error"] == "unauthorized");

    httplib::Client wrong("127.0.0.1", s.port);
    wrong.set_bearer_token_auth("nope");
    CHECK(wrong.Get("/v1/experiments")->status == 401);

    httplib::Client header("127.0.0.1", s.port);
    CHECK(header.Get("/v1/experiments", {{"X-Researcher-Token", kToken}})->status == 200);
  }

  TEST_CASE("experiment CRUD and validation reports") {
    Server s;
    auto c = s.client();
    const auto created = c.Post("/v1/experiments", experiment_body().dump(), "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    CHECK(body_of(created)["config"]["status"] == "draft");

    CHECK(body_of(c.Get("/v1/experiments/e1"))["experiment_id"] == "e1");
    CHECK(body_of(c.Get("/v1/experiments"))["experiments"].size() == 1);
    CHECK(c.Get("/v1/experiments/missing")->status == 404);
    CHECK(c.Post("/v1/experiments", experiment_body().dump(), "application/json")->status == 409);

    auto updated = experiment_body();
    updated["duration_seconds"] = 900;
    CHECK(body_of(c.Put("/v1/experiments/e1", updated.dump(), "application/json"))["duration_seconds"] == 900);

    auto bad = experiment_body();
    bad["experiment_id"] = "e2";
    bad["gateway"]["temperature"] = 3.0;
    bad["composition"]["gender_targets"] = {{"F", 1}};
    const auto rejected = c.Post("/v1/experiments", bad.dump(), "application/json");
    REQUIRE(rejected);
    CHECK(rejected->status == 422);
    const auto report = body_of(rejected);
    CHECK(report["error"] == "validation_failed");
    CHECK(report["findings"] == json::array({"gateway.temperature: must be in [0, 2]",
                                             "composition.gender_targets: counts sum to 1, team_size is 2"}));

    CHECK(c.Post("/v1/experiments", "{not json", "application/json")->status == 400);
    CHECK(c.Post("/v1/experiments/e1/open")->status == 200);
    CHECK(c.Post("/v1/experiments/e1/open")->status == 409);
    CHECK(c.Put("/v1/experiments/e1", updated.dump(), "application/json")->status == 409);
  }

  TEST_CASE("idempotency keys replay responses and reject reuse") {
    Server s;
    auto c = s.client();
    const httplib::Headers key = {{"Idempotency-Key", "k-1"}};
    const auto first = c.Post("/v1/experiments", key, experiment_body().dump(), "application/json");
    const auto again = c.Post("/v1/experiments", key, experiment_body().dump(), "application/json");
    REQUIRE(first);
    REQUIRE(again);
    CHECK(first->status == 201);
    CHECK(again->status == 201);
    CHECK(again->body == first->body);
    CHECK(again->get_header_value("Idempotent-Replay") == "true");
    CHECK(body_of(c.Get("/v1/experiments"))["experiments"].size() == 1);

    auto other = experiment_body();
    other["experiment_id"] = "e2";
    const auto reused = c.Post("/v1/experiments", key, other.dump(), "application/json");
    REQUIRE(reused);
    CHECK(reused->status == 422);
    CHECK(body_of(reused)["error"] == "idempotency_key_reused");
  }

  TEST_CASE("documents, pool and matching") {
    Server s;
    auto c = s.client();
    auto body = experiment_body();
    body["composition"]["gender_targets"] = {{"F", 1}, {"M", 1}};
    c.Post("/v1/experiments", body.dump(), "application/json");

    const auto doc = c.Post("/v1/experiments/e1/documents?name=brief.txt", "Budget is 500 dollars.", "text/plain");
    REQUIRE(doc);
    CHECK(doc->status == 201);
    CHECK(body_of(doc)["digest"] == crypto::sha256_hex("Budget is 500 dollars."));
    CHECK(c.Post("/v1/experiments/e1/documents", "x", "text/plain")->status == 400);
    CHECK(c.Post("/v1/experiments/e1/documents?name=b.bin", std::string("\x00\x01", 2), "application/octet-stream")->status ==
          400);
    CHECK(body_of(c.Get("/v1/experiments/e1/documents"))["documents"].size() == 1);

    c.Post("/v1/experiments/e1/open");
    for (const auto& [id, g] : std::vector<std::pair<std::string, std::string>>{{"f1", "F"}, {"f2", "F"}, {"m1", "M"}}) {
      const json p = {{"participant_id", id}, {"gender", g}};
      CHECK(c.Post("/v1/experiments/e1/pool", p.dump(), "application/json")->status == 201);
    }
    CHECK(c.Post("/v1/experiments/e1/pool", json{{"participant_id", "f1"}}.dump(), "application/json")->status == 409);
    const auto matched = body_of(c.Post("/v1/experiments/e1/match", json{{"start_sessions", true}}.dump(), "application/json"));
    REQUIRE(matched["teams"].size() == 1);
    CHECK(matched["teams"][0][0]["participant_id"] == "f1");
    CHECK(matched["teams"][0][1]["participant_id"] == "m1");
    CHECK(matched["sessions"].size() == 1);
    CHECK(matched["residual"][0]["participant_id"] == "f2");
    CHECK(c.Delete("/v1/experiments/e1/pool/f2")->status == 200);
    CHECK(c.Delete("/v1/experiments/e1/pool/f2")->status == 404);
  }

  TEST_CASE("messages, export, feedback and sessions") {
    Server s;
    const auto sid = start(s);
    auto c = s.client();
    const auto quiet = body_of(c.Post("/v1/sessions/" + sid + "/messages",
                                      json{{"participant_id", "ana"}, {"text", "hello"}}.dump(), "application/json"));
    CHECK(quiet["reply"].is_null());
    const auto answered = body_of(c.Post("/v1/sessions/" + sid + "/messages",
                                         json{{"participant_id", "ben"}, {"text", "Sage, budget?"}}.dump(), "application/json"));
    CHECK(answered["reply"]["text"] == "Cap it at 500.");
    CHECK(answered["reply"]["reason"] == "mentioned");

    const auto events = c.Get("/v1/sessions/" + sid + "/export?format=events");
    REQUIRE(events);
    CHECK(events->get_header_value("Content-Type") == "application/x-ndjson");
    CHECK(events->body == s.service->export_session(sid, ExportFormat::events));
    const auto transcript = c.Get("/v1/sessions/" + sid + "/export?format=transcript");
    CHECK(transcript->body.find("Ben: Sage, budget?") != std::string::npos);
    CHECK(c.Get("/v1/sessions/" + sid + "/export?format=pdf")->status == 400);

    CHECK(c.Post("/v1/sessions/" + sid + "/feedback", json{{"participant_id", "ana"}, {"rating", 5}}.dump(),
                 "application/json")
              ->status == 201);
    const auto analytics = body_of(c.Get("/v1/sessions/" + sid + "/analytics"));
    CHECK(analytics == s.service->analytics(sid).to_json());
    CHECK(body_of(c.Get("/v1/sessions/" + sid + "/analytics?up_to_seq=2"))["as_of_seq"] == 2);
    CHECK(c.Get("/v1/sessions/" + sid + "/analytics?up_to_seq=x")->status == 400);

    CHECK(body_of(c.Get("/v1/sessions?experiment_id=e1"))["sessions"].size() == 1);
    CHECK(body_of(c.Get("/v1/sessions/" + sid))["status"] == "live");
    CHECK(body_of(c.Post("/v1/sessions/" + sid + "/stop"))["reason"] == "manual");
    CHECK(c.Get("/v1/sessions/nope")->status == 404);
  }

  TEST_CASE("analytics stream pushes one snapshot per event and ends with the session") {
    Server s;
    const auto sid = start(s);
    auto c = s.client();
    c.Post("/v1/sessions/" + sid + "/messages", json{{"participant_id", "ana"}, {"text", "hello"}}.dump(), "application/json");
    c.Post("/v1/sessions/" + sid + "/stop");
    const auto last = s.service->events()->last_seq(sid);

    const auto all = read_stream(c, "/v1/sessions/" + sid + "/analytics/stream", "event: end");
    const auto snaps = frames(all, "snapshot");
    REQUIRE(snaps.size() == last);
    for (std::size_t i = 0; i < snaps.size(); ++i) {
      CHECK(snaps[i]["as_of_seq"] == i + 1);
      CHECK(snaps[i] == s.service->analytics(sid, i + 1).to_json());
    }
    CHECK(all.find("id: 1\n") != std::string::npos);
    CHECK(frames(all, "end").size() == 1);

    const auto resumed = read_stream(c, "/v1/sessions/" + sid + "/analytics/stream?after_seq=2", "event: end");
    const auto tail = frames(resumed, "snapshot");
    REQUIRE(tail.size() == last - 2);
    CHECK(tail.front()["as_of_seq"] == 3);

    const auto by_header = c.Get("/v1/sessions/" + sid + "/analytics/stream", {{"Last-Event-ID", std::to_string(last - 1)}});
    REQUIRE(by_header);
    CHECK(frames(by_header->body, "snapshot").size() == 1);
    CHECK(c.Get("/v1/sessions/nope/analytics/stream")->status == 404);
  }

  TEST_CASE("chat stream delivers live messages") {
    Server s;
    const auto sid = start(s);
    std::thread writer([&] {
      std::this_thread::sleep_for(100ms);
      auto c = s.client();
      c.Post("/v1/sessions/" + sid + "/messages", json{{"participant_id", "ben"}, {"text", "Sage, budget?"}}.dump(),
             "application/json");
    });
    auto c = s.client();
    const auto got = read_stream(c, "/v1/sessions/" + sid + "/chat/stream?after_seq=2", "event: bot_reply");
    writer.join();
    const auto humans = frames(got, "message");
    REQUIRE(humans.size() == 1);
    CHECK(humans[0]["speaker_id"] == "ben");
    CHECK(humans[0]["text"] == "Sage, budget?");
    CHECK(got.find("event: bot_reply\ndata: ") != std::string::npos);
  }

  TEST_CASE("descriptor table get and put with version preconditions") {
    Server s;
    auto c = s.client();
    const auto got = c.Get("/v1/descriptors");
    REQUIRE(got);
    const auto version = testsupport::default_table().version();
    CHECK(got->get_header_value("ETag") == "\"" + version + "\"");
    const auto table = body_of(got);
    CHECK(table["facets"].size() == 10);
    CHECK(table["facets"][0]["levels"].size() == 3);

    auto doc = table["document"].get<std::string>();
    doc.replace(doc.find("version = " + version), ("version = " + version).size(), "version = lab-2");
    const auto stale = c.Put("/v1/descriptors", {{"If-Match", "\"old\""}}, doc, "text/plain");
    REQUIRE(stale);
    CHECK(stale->status == 409);
    const auto ok = c.Put("/v1/descriptors", {{"If-Match", "\"" + version + "\""}}, doc, "text/plain");
    REQUIRE(ok);
    CHECK(ok->status == 200);
    CHECK(ok->get_header_value("ETag") == "\"lab-2\"");
    CHECK(c.Put("/v1/descriptors", json{{"document", "garbage"}}.dump(), "application/json")->status == 422);
  }

  TEST_CASE("compile preview") {
    Server s;
    auto c = s.client();
    const json spec = {{"persona",
                        {{"name", "Sage"},
                         {"facets", {{{"trait", "extraversion"}, {"facet", "dominance"}, {"level", "high"}}}}}}};
    const auto r = body_of(c.Post("/v1/persona/compile", spec.dump(), "application/json"));
    CHECK(r["prompt"].get<std::string>().find("You take charge of the conversation") != std::string::npos);
    CHECK(r["table_version"] == testsupport::default_table().version());
    auto pinned = spec;
    pinned["table_version"] = "old";
    CHECK(c.Post("/v1/persona/compile", pinned.dump(), "application/json")->status == 409);
    const json bad = {{"name", "Sage"}, {"facets", {{{"trait", "openness"}, {"facet", "whimsy"}, {"level", "high"}}}}};
    CHECK(c.Post("/v1/persona/compile", bad.dump(), "application/json")->status == 422);
  }

  TEST_CASE("sweeps over HTTP") {
    Server s;
    auto c = s.client();
    const json body = {{"grid", {{"k", {1, 2}}}},
                       {"fixture",
                        {{"participants", {{{"participant_id", "ana"}}}},
                         {"lines", {{{"speaker", "ana"}, {"text", "budget"}, {"at", 0}}, {{"speaker", "ana"}, {"text", "venue"}, {"at", 5}}}}}}};
    const auto rows = body_of(c.Post("/v1/sweeps", body.dump(), "application/json"))["rows"];
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["reference"] == true);
    CHECK(c.Post("/v1/sweeps", json{{"grid", json::object()}, {"fixture", body["fixture"]}}.dump(), "application/json")
              ->status == 400);
  }

  TEST_CASE("platform callbacks are signature-checked") {
    Server s;
    const auto sid = start(s);
    const auto channel = s.service->session_info(sid).channel_id;
    httplib::Client c("127.0.0.1", s.port);

    const std::string challenge = R"({"type":"url_verification","challenge":"abc123"})";
    const auto ok = c.Post("/slack/events", signed_headers(challenge, kT0), challenge, "application/json");
    REQUIRE(ok);
    CHECK(ok->status == 200);
    CHECK(body_of(ok)["challenge"] == "abc123");

    auto tampered = signed_headers(challenge, kT0);
    CHECK(c.Post("/slack/events", tampered, challenge + " ", "application/json")->status == 401);
    CHECK(c.Post("/slack/events", signed_headers(challenge, kT0 - 301), challenge, "application/json")->status == 401);
    CHECK(c.Post("/slack/events", challenge, "application/json")->status == 401);

    const json event = {{"type", "event_callback"},
                        {"event",
                         {{"type", "message"}, {"channel", channel}, {"user", "ana"}, {"text", "hi there"}, {"ts", "1735689601.000100"}}}};
    const auto body = event.dump();
    CHECK(c.Post("/slack/events", signed_headers(body, kT0), body, "application/json")->status == 200);
    CHECK(c.Post("/slack/events", signed_headers(body, kT0), body, "application/json")->status == 200);  // retry
    // The message plus its below-threshold suppression.
    for (int i = 0; i < 200 && s.service->events()->last_seq(sid) < 4; ++i) std::this_thread::sleep_for(5ms);
    std::this_thread::sleep_for(50ms);
    CHECK(s.service->events()->last_seq(sid) == 4);
    std::size_t from_ana = 0;
    for (const auto& e : s.service->events()->events(sid)) from_ana += e.kind == EventKind::message && e.speaker_id == "ana";
    CHECK(from_ana == 1);
  }

  TEST_CASE("CORS preflight when an origin is configured") {
    Server s("http://localhost:5173");
    httplib::Client c("127.0.0.1", s.port);
    const auto r = c.Options("/v1/experiments");
    REQUIRE(r);
    CHECK(r->status == 204);
    CHECK(r->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  }

  TEST_CASE("a taken port is a bind error") {
    Server s;
    ServiceOptions o;
    o.descriptors = std::make_shared<DescriptorTable>(testsupport::default_table());
    HttpServiceOptions h;
    h.researcher_token = kToken;
    HttpService second(std::make_shared<ExperimentService>(std::move(o)), h);
    CHECK_THROWS_AS(second.bind("127.0.0.1", s.port), BindError);
    CHECK_THROWS_AS(second.bind("127.0.0.1", 70000), BindError);
    CHECK_THROWS_AS(HttpService(s.service, HttpServiceOptions{}), ConfigError);
  }
}
