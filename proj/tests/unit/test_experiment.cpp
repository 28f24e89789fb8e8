#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "aicollab/crypto.hpp"
#include "aicollab/error.hpp"
#include "aicollab/experiment.hpp"
#include "aicollab/memory_log.hpp"
#include "unit/support.hpp"

using namespace aicollab;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

constexpr double kT0 = 1735689600.0;

struct Fixture {
  std::shared_ptr<std::atomic<double>> now = std::make_shared<std::atomic<double>>(kT0);
  std::unique_ptr<ExperimentService> svc;

  explicit Fixture(std::optional<std::filesystem::path> memory_dir = std::nullopt, std::size_t cap = kDefaultDocumentCap) {
    ServiceOptions o;
    o.descriptors = std::make_shared<DescriptorTable>(testsupport::default_table());
    o.clock = [now = now] { return now->load(); };
    o.sleeper = [](auto) {};
    o.memory_dir = std::move(memory_dir);
    o.max_document_bytes = cap;
    svc = std::make_unique<ExperimentService>(std::move(o));
  }

  void advance(double seconds) { now->store(now->load() + seconds); }
};

json base_config(int team_size = 2) {
  return {{"persona", {{"name", "Sage"}, {"role_description", "You help a small team plan a community event."}}},
          {"task", {{"title", "Plan"}, {"instructions", "Plan a picnic for 40 people."}}},
          {"composition", {{"team_size", team_size}}},
          {"duration_seconds", 60},
          {"gateway", {{"script", {{{"match", "budget"}, {"reply", "Cap it at 500."}}}}}},
          {"logic_filter", {{"proactivity_threshold", 1.0}, {"min_seconds_between_bot_messages", 0}}},
          {"tag_lexicon", {{"agreement", {"agreed"}}}}};
}

ParticipantProfile person(const std::string& id, const std::string& gender = "") {
  ParticipantProfile p;
  p.participant_id = id;
  p.display_name = id;
  p.gender = gender;
  return p;
}

std::vector<ParticipantProfile> pair() { return {person("ana"), person("ben")}; }

// Created, opened and started with ana and ben.
std::string live_session(Fixture& f, const std::string& exp = "e1") {
  auto body = base_config();
  body["experiment_id"] = exp;
  f.svc->create_experiment(body);
  f.svc->open_experiment(exp);
  return f.svc->start_session(exp, pair());
}

std::vector<std::string> findings_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.findings();
  }
  return {};
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("status moves draft, open, running, closed and never back") {
    Fixture f;
    auto c = f.svc->create_experiment(base_config());
    CHECK(c.experiment_id == "exp-1");
    CHECK(c.status == ExperimentStatus::draft);
    const auto id = c.experiment_id;

    CHECK_THROWS_AS(f.svc->start_session(id, pair()), StateError);
    CHECK_THROWS_AS(f.svc->join_pool(id, person("ana")), StateError);
    CHECK_THROWS_AS(f.svc->close_experiment(id), StateError);
    CHECK(f.svc->update_experiment(id, base_config(3)).composition.team_size == 3);
    f.svc->update_experiment(id, base_config());

    CHECK(f.svc->open_experiment(id).status == ExperimentStatus::open);
    CHECK_THROWS_AS(f.svc->open_experiment(id), StateError);
    CHECK_THROWS_AS(f.svc->update_experiment(id, base_config()), StateError);

    const auto sid = f.svc->start_session(id, pair());
    CHECK(f.svc->experiment(id).status == ExperimentStatus::running);
    CHECK_THROWS_AS(f.svc->open_experiment(id), StateError);

    CHECK(f.svc->close_experiment(id).status == ExperimentStatus::closed);
    CHECK(f.svc->session_info(sid).status == SessionStatus::ended);
    CHECK_THROWS_AS(f.svc->start_session(id, pair()), StateError);
    CHECK_THROWS_AS(f.svc->close_experiment(id), StateError);
    CHECK_THROWS_AS(f.svc->upload_document(id, "a.txt", "x"), StateError);
    CHECK(f.svc->experiment(id).status == ExperimentStatus::closed);
  }

  TEST_CASE("creation validates every field") {
    Fixture f;
    auto hot = base_config();
    hot["gateway"]["temperature"] = 3.0;
    CHECK(findings_of([&] { f.svc->create_experiment(hot); }) ==
          std::vector<std::string>{"gateway.temperature: must be in [0, 2]"});

    auto uneven = base_config();
    uneven["composition"]["gender_targets"] = {{"F", 1}};
    CHECK(findings_of([&] { f.svc->create_experiment(uneven); }) ==
          std::vector<std::string>{"composition.gender_targets: counts sum to 1, team_size is 2"});

    auto remote = base_config();
    remote["gateway"]["backend"] = "remote";
    const auto rf = findings_of([&] { f.svc->create_experiment(remote); });
    REQUIRE(rf.size() == 1);
    CHECK(rf[0].rfind("gateway.backend: ", 0) == 0);

    auto bad_id = base_config();
    bad_id["experiment_id"] = "has space";
    CHECK(findings_of([&] { f.svc->create_experiment(bad_id); }) ==
          std::vector<std::string>{"experiment_id: use 1-64 of [A-Za-z0-9_-]"});

    auto named = base_config();
    named["experiment_id"] = "study_a";
    f.svc->create_experiment(named);
    CHECK_THROWS_AS(f.svc->create_experiment(named), StateError);
    CHECK(f.svc->experiments().size() == 1);
    CHECK_THROWS_AS(f.svc->experiment("nope"), NotFoundError);
  }

  TEST_CASE("minimal config with a neutral persona is accepted") {
    Fixture f;
    CHECK(f.svc->create_experiment({{"persona", {{"name", "Sage"}}}}).status == ExperimentStatus::draft);
  }

  TEST_CASE("documents are capped, text-only and content-addressed") {
    Fixture f;
    const auto id = f.svc->create_experiment(base_config()).experiment_id;
    const std::string text(10 * 1024, 'a');
    const auto d1 = f.svc->upload_document(id, "brief.txt", text);
    const auto d2 = f.svc->upload_document(id, "brief-again.txt", text);
    CHECK(d1.digest == crypto::sha256_hex(text));
    CHECK(d1.digest == d2.digest);
    CHECK(d1.id != d2.id);
    CHECK(d1.size == text.size());
    CHECK(f.svc->documents(id).size() == 2);
    CHECK_FALSE(d1.summary_json().contains("content"));

    CHECK_THROWS_AS(f.svc->upload_document(id, "big.txt", std::string(2u << 20, 'a')), ParameterError);
    CHECK_THROWS_AS(f.svc->upload_document(id, "bin", std::string("\x00\x01", 2)), ParameterError);
    CHECK_THROWS_AS(f.svc->upload_document(id, "latin1", "caf\xe9"), ParameterError);
    CHECK_THROWS_AS(f.svc->upload_document(id, " ", "x"), ParameterError);
    CHECK_THROWS_AS(f.svc->upload_document("nope", "a.txt", "x"), NotFoundError);
    CHECK_NOTHROW(f.svc->upload_document(id, "utf8.txt", "caf\xc3\xa9 \xe2\x82\xac\n"));
  }

  TEST_CASE("document cap is configurable") {
    Fixture f(std::nullopt, 1u << 20);
    const auto id = f.svc->create_experiment(base_config()).experiment_id;
    CHECK_NOTHROW(f.svc->upload_document(id, "exact.txt", std::string(1u << 20, 'a')));
    CHECK_THROWS_AS(f.svc->upload_document(id, "over.txt", std::string((1u << 20) + 1, 'a')), ParameterError);
  }

  TEST_CASE("opening checks the task's document references") {
    Fixture f;
    auto body = base_config();
    body["task"]["context_document_ids"] = {"doc-1"};
    const auto id = f.svc->create_experiment(body).experiment_id;
    CHECK(findings_of([&] { f.svc->open_experiment(id); }) ==
          std::vector<std::string>{"task.context_document_ids: unknown document doc-1"});
    const auto doc = f.svc->upload_document(id, "brief.txt", "Budget is 500.");
    f.svc->open_experiment(id);
    const auto sid = f.svc->start_session(id, pair());
    const auto start = f.svc->events()->events(sid).front();
    CHECK(start.payload["task"]["context_document_ids"] == json::array({doc.id}));
  }

  TEST_CASE("pool matching forms teams and keeps the residual") {
    Fixture f;
    auto body = base_config();
    body["composition"]["gender_targets"] = {{"F", 1}, {"M", 1}};
    const auto id = f.svc->create_experiment(body).experiment_id;
    f.svc->open_experiment(id);
    f.svc->join_pool(id, person("f1", "F"));
    f.svc->join_pool(id, person("f2", "F"));
    f.svc->join_pool(id, person("m1", "M"));
    f.svc->join_pool(id, person("x1", "F"));
    CHECK_THROWS_AS(f.svc->join_pool(id, person("f1", "F")), StateError);
    CHECK_THROWS(f.svc->join_pool(id, person("")));
    CHECK(f.svc->leave_pool(id, "x1"));
    CHECK_FALSE(f.svc->leave_pool(id, "x1"));

    const auto teams = f.svc->match_pool(id);
    REQUIRE(teams.size() == 1);
    REQUIRE(teams[0].size() == 2);
    CHECK(teams[0][0].participant_id() == "f1");
    CHECK(teams[0][1].participant_id() == "m1");
    const auto pool = f.svc->pool(id);
    REQUIRE(pool.size() == 1);
    CHECK(pool[0].participant_id() == "f2");
    CHECK(pool[0].enqueued_at == kT0);

    std::vector<ParticipantProfile> team;
    for (const auto& e : teams[0]) team.push_back(e.profile);
    CHECK_NOTHROW(f.svc->start_session(id, team));
    CHECK_THROWS_AS(f.svc->start_session(id, {person("f2", "F"), person("f3", "F")}), ParameterError);
  }

  TEST_CASE("session start logs session_start then the task message") {
    Fixture f;
    const auto sid = live_session(f);
    CHECK(sid == "e1-s1");
    const auto events = f.svc->events()->events(sid);
    REQUIRE(events.size() == 2);
    CHECK(events[0].kind == EventKind::session_start);
    CHECK(events[0].seq == 1);
    CHECK(events[1].kind == EventKind::message);
    CHECK(events[1].payload["role"] == "task");
    CHECK(events[1].payload["text"] == "Task: Plan\nPlan a picnic for 40 people.");

    const auto info = f.svc->session_info(sid);
    CHECK(info.platform == "loopback");
    CHECK(info.channel_id == "loopback-e1-s1");
    CHECK(info.deadline == kT0 + 60);
    CHECK(info.participants.size() == 3);
    CHECK(f.svc->loopback()->has_channel(info.channel_id));

    CHECK_THROWS_AS(f.svc->start_session("e1", {person("ana")}), ParameterError);
    CHECK_THROWS_AS(f.svc->start_session("e1", pair(), std::string("C1")), ConfigError);
    CHECK_THROWS_AS(f.svc->session_info("nope"), NotFoundError);
  }

  TEST_CASE("one experiment may run several sessions at once") {
    Fixture f;
    const auto s1 = live_session(f);
    const auto s2 = f.svc->start_session("e1", {person("cho"), person("dev")});
    CHECK(s1 != s2);
    CHECK(f.svc->sessions("e1").size() == 2);
    CHECK(f.svc->sessions(std::string("other")).empty());
    f.svc->post_message(s1, "ana", "hello");
    CHECK(f.svc->events()->last_seq(s2) == 2);
  }

  TEST_CASE("loopback messages flow through the pipeline and replies are delivered") {
    Fixture f;
    const auto sid = live_session(f);
    const auto channel = f.svc->session_info(sid).channel_id;
    f.advance(5);
    CHECK_FALSE(f.svc->post_message(sid, "ana", "hello all"));
    f.advance(5);
    const auto reply = f.svc->post_message(sid, "ben", "Sage, what about the budget?");
    REQUIRE(reply);
    CHECK(reply->text == "Cap it at 500.");
    const auto sent = f.svc->loopback()->sent(channel);
    REQUIRE(sent.size() == 1);
    CHECK(sent[0].text == "Cap it at 500.");
    const auto events = f.svc->events()->events(sid);
    CHECK(events.back().kind == EventKind::bot_reply);
    CHECK(f.svc->events()->verify_chain(sid));
  }

  TEST_CASE("platform events are deduplicated and routed by channel") {
    Fixture f;
    const auto sid = live_session(f);
    PlatformEvent ev;
    ev.envelope_type = EnvelopeType::message_event;
    ev.channel = f.svc->session_info(sid).channel_id;
    ev.user = "ana";
    ev.text = "we agreed on Saturday";
    ev.ts = "1735689605.000100";
    CHECK(f.svc->handle_platform_event(ev));
    const auto after_first = f.svc->events()->last_seq(sid);
    CHECK_FALSE(f.svc->handle_platform_event(ev));
    CHECK(f.svc->events()->last_seq(sid) == after_first);
    std::size_t from_ana = 0;
    for (const auto& e : f.svc->events()->events(sid)) from_ana += e.kind == EventKind::message && e.speaker_id == "ana";
    CHECK(from_ana == 1);

    auto other = ev;
    other.channel = "elsewhere";
    other.ts = "1735689606.000100";
    CHECK_FALSE(f.svc->handle_platform_event(other));
    auto challenge = ev;
    challenge.envelope_type = EnvelopeType::verification_challenge;
    CHECK_FALSE(f.svc->handle_platform_event(challenge));
  }

  TEST_CASE("deadlines end sessions on the next tick") {
    Fixture f;
    const auto sid = live_session(f);
    f.advance(59);
    CHECK(f.svc->tick() == 0);
    f.advance(1);
    CHECK(f.svc->tick() == 1);
    CHECK(f.svc->tick() == 0);
    const auto last = f.svc->events()->events(sid).back();
    CHECK(last.kind == EventKind::session_end);
    CHECK(last.payload["reason"] == "deadline");
    CHECK_THROWS_AS(f.svc->post_message(sid, "ana", "late"), StateError);
  }

  TEST_CASE("the background timer fires within one period") {
    Fixture f;
    const auto sid = live_session(f);
    f.svc->start_timer(20ms);
    f.advance(61);
    for (int i = 0; i < 200 && f.svc->session_info(sid).status != SessionStatus::ended; ++i) {
      std::this_thread::sleep_for(5ms);
    }
    f.svc->stop_timer();
    CHECK(f.svc->session_info(sid).status == SessionStatus::ended);
  }

  TEST_CASE("stopping a session persists its memory log") {
    testsupport::TempDir dir;
    Fixture f(dir.path);
    const auto sid = live_session(f);
    f.svc->post_message(sid, "ana", "hello");
    const auto summary = f.svc->stop_session(sid);
    CHECK(summary["reason"] == "manual");
    const auto path = dir.path / (sid + ".memory.jsonl");
    REQUIRE(std::filesystem::exists(path));
    CHECK(read_memory_log(path)->size() >= 2);
  }

  TEST_CASE("analytics stream agrees with batch analytics and resumes") {
    Fixture f;
    const auto sid = live_session(f);
    f.advance(3);
    f.svc->post_message(sid, "ana", "we agreed on Saturday");
    f.advance(4);
    f.svc->post_message(sid, "ben", "fine");
    const auto last = f.svc->events()->last_seq(sid);

    auto stream = f.svc->stream_analytics(sid);
    std::vector<AnalyticsSnapshot> snaps;
    for (std::uint64_t i = 0; i < last; ++i) {
      auto s = stream->next(1000ms);
      REQUIRE(s);
      snaps.push_back(*s);
    }
    for (std::size_t i = 0; i < snaps.size(); ++i) {
      CHECK(snaps[i].as_of_seq == i + 1);
      CHECK(snaps[i] == f.svc->analytics(sid, i + 1));
    }
    CHECK(snaps.back() == f.svc->analytics(sid));
    CHECK(snaps.back().tags.size() == 1);
    CHECK_FALSE(stream->next(20ms));
    CHECK_FALSE(stream->finished());

    auto resumed = f.svc->stream_analytics(sid, 2);
    auto first = resumed->next(1000ms);
    REQUIRE(first);
    CHECK(first->as_of_seq == 3);

    f.svc->stop_session(sid);
    auto tail = f.svc->stream_analytics(sid, last);
    auto fin = tail->next(1000ms);
    REQUIRE(fin);
    CHECK(fin->as_of_seq == last + 1);
    CHECK_FALSE(tail->next(1000ms));
    CHECK(tail->finished());
    CHECK_THROWS_AS(f.svc->stream_analytics("nope"), NotFoundError);
  }

  TEST_CASE("a live stream receives events appended after it opened") {
    Fixture f;
    const auto sid = live_session(f);
    auto cursor = f.svc->stream_events(sid, 2);
    std::thread writer([&] {
      std::this_thread::sleep_for(20ms);
      f.svc->post_message(sid, "ana", "late arrival");
    });
    const auto rec = cursor->next(2000ms);
    writer.join();
    REQUIRE(rec);
    CHECK(rec->seq == 3);
    CHECK(rec->payload["text"] == "late arrival");
  }

  TEST_CASE("exports round-trip and transcripts cover chat lines") {
    Fixture f;
    const auto sid = live_session(f);
    f.svc->post_message(sid, "ana", "hello");
    f.svc->post_message(sid, "ben", "Sage, budget?");
    const auto events = f.svc->export_session(sid, ExportFormat::events);
    EventStore copy;
    CHECK(copy.import_events(events) == sid);
    CHECK(copy.export_events(sid) == events);
    CHECK(compute_analytics(copy.events(sid), TagLexicon::from_json({{"agreement", {"agreed"}}})) == f.svc->analytics(sid));

    const auto transcript = f.svc->export_session(sid, ExportFormat::transcript);
    std::size_t chat = 0;
    for (const auto& e : f.svc->events()->events(sid)) {
      if (e.kind == EventKind::message || e.kind == EventKind::bot_reply) ++chat;
    }
    // The task message spans two lines.
    CHECK(static_cast<std::size_t>(std::count(transcript.begin(), transcript.end(), '\n')) == chat + 1);
  }

  TEST_CASE("feedback is logged against session participants") {
    Fixture f;
    const auto sid = live_session(f);
    const auto rec = f.svc->record_feedback(sid, {{"participant_id", "ana"}, {"rating", 4}});
    CHECK(rec.kind == EventKind::feedback);
    CHECK(rec.speaker_id == "ana");
    CHECK_THROWS_AS(f.svc->record_feedback(sid, {{"participant_id", "zed"}}), ParameterError);
    CHECK_THROWS_AS(f.svc->record_feedback(sid, json::array()), ParameterError);
  }

  TEST_CASE("descriptor table updates need the current version and a bump") {
    Fixture f;
    const auto original = testsupport::slurp(AICOLLAB_TABLE_PATH);
    const auto v1 = f.svc->descriptor_table()->version();

    PersonaSpec spec;
    spec.name = "Sage";
    spec.facets.push_back({Trait::extraversion, "dominance", Level::high});
    const auto before = f.svc->compile_preview(spec);
    CHECK(before.find("You take charge of the conversation") != std::string::npos);

    auto edited = original;
    const std::string old_text = "You take charge of the conversation";
    edited.replace(edited.find(old_text), old_text.size(), "You lead the conversation");
    CHECK_THROWS_AS(f.svc->put_descriptor_table(edited, v1), StateError);  // changed but same version

    edited.replace(edited.find("version = " + v1), ("version = " + v1).size(), "version = lab-2");
    CHECK_THROWS_AS(f.svc->put_descriptor_table(edited, std::string("stale")), StateError);
    CHECK(f.svc->put_descriptor_table(edited, v1)->version() == "lab-2");
    CHECK(f.svc->compile_preview(spec).find("You lead the conversation") != std::string::npos);
    CHECK_THROWS_AS(f.svc->put_descriptor_table(original, v1), StateError);
    CHECK_NOTHROW(f.svc->put_descriptor_table(original, std::nullopt));
    CHECK_THROWS_AS(f.svc->put_descriptor_table("not a table", std::nullopt), ValidationError);
  }

  TEST_CASE("sweeps run on the service's table with scripted backends") {
    Fixture f;
    SimulationScript script;
    script.participants = {{"ana", "Ana", false}, {"ben", "Ben", false}};
    script.lines = {{"ana", "budget first", 0}, {"ben", "venue next", 10}, {"ana", "Assistant, budget?", 20}};
    const auto cells = f.svc->run_sweep({{"k", {1, 3}}}, script, std::nullopt);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].overlap == doctest::Approx(1.0));
    CHECK_THROWS_AS(f.svc->run_sweep({}, script, std::nullopt), ParameterError);
  }
}
