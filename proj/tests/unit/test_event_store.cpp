#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "aicollab/error.hpp"
#include "aicollab/event_store.hpp"
#include "oracles/sha256_ref.hpp"
#include "unit/support.hpp"

using namespace aicollab;
using nlohmann::json;

namespace {

void seed(EventStore& store, const std::string& sid) {
  store.append(sid, EventKind::session_start, 100, std::nullopt, {{"participants", json::array()}});
  store.append(sid, EventKind::message, 101, "ana", {{"text", "hello"}, {"display_name", "Ana"}});
  store.append(sid, EventKind::bot_reply, 102, "bot", {{"text", "hi Ana"}, {"display_name", "Sage"}});
}

}  // namespace

TEST_SUITE("event_store") {
  TEST_CASE("sequence numbers and hash chain") {
    EventStore store;
    seed(store, "s1");
    const auto ev = store.events("s1");
    REQUIRE(ev.size() == 3);
    std::string prev = kGenesisHash;
    for (std::size_t i = 0; i < ev.size(); ++i) {
      CHECK(ev[i].seq == i + 1);
      CHECK(ev[i].prev_hash == prev);
      // the chain hash recomputed with an independent sha256
      auto line = json::parse(ev[i].line());
      line.erase("hash");
      CHECK(ev[i].hash == oracle::sha256_hex(prev + "\n" + line.dump()));
      prev = ev[i].hash;
    }
    CHECK(store.verify_chain("s1"));
    CHECK(store.last_seq("s1") == 3);
    CHECK(store.events("s1", 2).size() == 2);
  }

  TEST_CASE("lifecycle rules") {
    EventStore store;
    CHECK_THROWS_AS(store.append("s", EventKind::message, 1, "a", {}), StateError);
    seed(store, "s");
    CHECK_THROWS_AS(store.append("s", EventKind::session_start, 1, std::nullopt, {}), StateError);
    store.append("s", EventKind::session_end, 200, std::nullopt, {{"reason", "manual"}});
    CHECK(store.is_ended("s"));
    CHECK_THROWS_AS(store.append("s", EventKind::message, 201, "a", {{"text", "late"}}), StateError);
    CHECK_NOTHROW(store.append("s", EventKind::feedback, 202, std::nullopt, {{"rating", 4}}));
    CHECK_THROWS_AS(store.events("nope"), NotFoundError);
    CHECK_THROWS_AS(store.append("", EventKind::session_start, 1, std::nullopt, {}), ParameterError);
  }

  TEST_CASE("export and import reproduce the log") {
    EventStore a;
    seed(a, "s1");
    const auto doc = a.export_events("s1");
    EventStore b;
    CHECK(b.import_events(doc) == "s1");
    CHECK(b.export_events("s1") == doc);
    CHECK_THROWS_AS(b.import_events(doc), StateError);
  }

  TEST_CASE("tampering is detected on import") {
    EventStore a;
    seed(a, "s1");
    auto doc = a.export_events("s1");
    const auto pos = doc.find("hello");
    doc.replace(pos, 5, "HELLO");
    EventStore b;
    CHECK_THROWS_AS(b.import_events(doc), ParameterError);
    CHECK_THROWS_AS(parse_event_document(""), ParameterError);
  }

  TEST_CASE("file-backed store survives a restart") {
    testsupport::TempDir dir;
    {
      auto store = EventStore::open_directory(dir.path, true);
      seed(*store, "exp-1-s1");
      seed(*store, "exp-1-s2");
    }
    auto reopened = EventStore::open_directory(dir.path);
    CHECK(reopened->session_ids() == std::vector<std::string>{"exp-1-s1", "exp-1-s2"});
    CHECK(reopened->verify_chain("exp-1-s1"));
    CHECK(reopened->last_seq("exp-1-s2") == 3);
    reopened->append("exp-1-s1", EventKind::message, 103, "ana", {{"text", "again"}});
    auto third = EventStore::open_directory(dir.path);
    CHECK(third->last_seq("exp-1-s1") == 4);
  }

  TEST_CASE("corrupted file fails loudly on load") {
    testsupport::TempDir dir;
    std::filesystem::path file;
    {
      auto sink = std::make_shared<FileEventSink>(dir.path);
      EventStore store(sink);
      seed(store, "s1");
      file = sink->session_path("s1");
    }
    {
      std::ofstream out(file, std::ios::app);
      out << "{\"seq\":4,\"garbage\":true}\n";
    }
    CHECK_THROWS_AS(EventStore::open_directory(dir.path), StorageError);
  }

  TEST_CASE("sink failure propagates and nothing is committed") {
    struct FailingSink final : EventSink {
      bool fail = false;
      void create_session(const std::string&, const std::string&) override {}
      void write(const std::string&, const std::string&) override {
        if (fail) throw StorageError("disk full");
      }
    };
    auto sink = std::make_shared<FailingSink>();
    EventStore store(sink);
    seed(store, "s");
    sink->fail = true;
    CHECK_THROWS_AS(store.append("s", EventKind::message, 5, "a", {{"text", "x"}}), StorageError);
    CHECK(store.last_seq("s") == 3);
    sink->fail = false;
    CHECK(store.append("s", EventKind::message, 5, "a", {{"text", "x"}}).seq == 4);
  }

  TEST_CASE("listeners see records in order and can unsubscribe") {
    EventStore store;
    std::vector<std::uint64_t> seen;
    const auto token = store.subscribe("s", [&](const EventRecord& r) { seen.push_back(r.seq); });
    seed(store, "s");
    store.unsubscribe(token);
    store.append("s", EventKind::message, 9, "a", {{"text", "x"}});
    CHECK(seen == std::vector<std::uint64_t>{1, 2, 3});
  }

  TEST_CASE("concurrent appends keep seq gap-free") {
    EventStore store;
    store.append("s", EventKind::session_start, 0, std::nullopt, {});
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&, t] {
        for (int i = 0; i < 50; ++i) store.append("s", EventKind::message, i, "p" + std::to_string(t), {{"text", "x"}});
      });
    }
    for (auto& th : threads) th.join();
    CHECK(store.last_seq("s") == 201);
    CHECK(store.verify_chain("s"));
  }

  TEST_CASE("kind names round trip") {
    for (auto k : {EventKind::message, EventKind::bot_reply, EventKind::suppression, EventKind::reflection,
                   EventKind::session_start, EventKind::session_end, EventKind::prompt_audit, EventKind::feedback}) {
      CHECK(event_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(event_kind_from_string("bogus"), ParameterError);
  }
}
