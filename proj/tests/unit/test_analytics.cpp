#include <doctest.h>

#include <cmath>
#include <random>

#include "aicollab/analytics.hpp"
#include "aicollab/error.hpp"
#include "oracles/analytics_oracle.hpp"

using namespace aicollab;
using nlohmann::json;

namespace {

struct Built {
  EventStore store;
  std::vector<oracle::ChatLine> lines;
};

// Random session with a roster of `people` plus a bot.
void build(Built& b, std::mt19937_64& rng, int people, int messages) {
  json roster = json::array();
  for (int i = 0; i < people; ++i) {
    roster.push_back({{"participant_id", "p" + std::to_string(i)}, {"display_name", "P" + std::to_string(i)}, {"is_bot", false}});
  }
  roster.push_back({{"participant_id", "bot"}, {"display_name", "Sage"}, {"is_bot", true}});
  b.store.append("s", EventKind::session_start, 0, std::nullopt, {{"participants", roster}});
  std::uniform_int_distribution<int> who(0, people), words(0, 12), gap(0, 40);
  double t = 0;
  const char* vocab[] = {"plan", "budget", "yes", "no", "maybe", "venue", "time"};
  for (int i = 0; i < messages; ++i) {
    t += gap(rng) + 0.25;
    const int w = who(rng);
    std::string text;
    const int n = words(rng);
    for (int k = 0; k < n; ++k) text += std::string(k ? " " : "") + vocab[rng() % 7];
    if (text.empty()) text = "  ";
    const bool bot = w == people;
    const std::string id = bot ? "bot" : "p" + std::to_string(w);
    b.store.append("s", bot ? EventKind::bot_reply : EventKind::message, t, id, {{"text", text}});
    b.lines.push_back({id, text, t});
    if (rng() % 5 == 0) b.store.append("s", EventKind::suppression, t, std::nullopt, {{"reason", "cooldown"}});
  }
}

}  // namespace

TEST_SUITE("analytics") {
  TEST_CASE("quantiles interpolate linearly") {
    const std::vector<double> v = {1, 2, 3, 4};
    CHECK(sorted_quantile(v, 0.5) == doctest::Approx(2.5));
    CHECK(sorted_quantile(v, 0.9) == doctest::Approx(3.7));
    CHECK(sorted_quantile(std::vector<double>{7}, 0.9) == 7);
    CHECK_THROWS_AS(sorted_quantile(std::vector<double>{}, 0.5), ParameterError);
  }

  TEST_CASE("equity") {
    CHECK(participation_equity(std::vector<std::uint64_t>{5, 5, 5}) == doctest::Approx(1.0));
    CHECK(participation_equity(std::vector<std::uint64_t>{9, 0, 0}) == 1.0);
    CHECK(participation_equity(std::vector<std::uint64_t>{}) == 1.0);
    const double h = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25)) / std::log(2.0);
    CHECK(participation_equity(std::vector<std::uint64_t>{3, 1, 0}) == doctest::Approx(h).epsilon(1e-12));
  }

  TEST_CASE("hand-checked three-line session") {
    EventStore store;
    store.append("s", EventKind::session_start, 0, std::nullopt,
                 {{"participants", json::array({{{"participant_id", "a"}, {"display_name", "Ana"}},
                                                {{"participant_id", "b"}, {"display_name", "Ben"}},
                                                {{"participant_id", "quiet"}, {"display_name", "Q"}}})}});
    store.append("s", EventKind::message, 10, "a", {{"text", "one two"}});
    store.append("s", EventKind::message, 14, "b", {{"text", "three"}});
    store.append("s", EventKind::message, 15, "b", {{"text", "four five six"}});
    store.append("s", EventKind::message, 21, "a", {{"text", "x"}});
    const auto snap = compute_analytics(store, "s");
    REQUIRE(snap.participants.size() == 3);
    CHECK(snap.total_messages == 4);
    CHECK(snap.participants[0].words == 3);
    CHECK(snap.participants[1].messages == 2);
    CHECK(snap.participants[2].messages == 0);
    CHECK_FALSE(snap.participants[2].latency.has_value());
    // b: 14-10, 15-10; a: 21-15
    CHECK(snap.participants[1].latency->median == doctest::Approx(4.5));
    CHECK(snap.participants[0].latency->samples == 1);
    CHECK(snap.participants[0].latency->median == doctest::Approx(6));
    CHECK(snap.turn_matrix[0][1] == 1);
    CHECK(snap.turn_matrix[1][1] == 1);
    CHECK(snap.turn_matrix[1][0] == 1);
    CHECK(snap.participation_equity == doctest::Approx(1.0));
    CHECK(snap.as_of_seq == 5);
  }

  TEST_CASE("matches the brute-force oracle on random sessions") {
    std::mt19937_64 rng(42);
    for (int round = 0; round < 10; ++round) {
      Built b;
      build(b, rng, 2 + round % 4, 1 + static_cast<int>(rng() % 150));
      const auto snap = compute_analytics(b.store, "s");
      const auto want = oracle::compute(b.lines);
      CHECK(snap.total_messages == want.total);
      std::uint64_t row_sum = 0;
      for (const auto& row : snap.turn_matrix) {
        for (auto c : row) row_sum += c;
      }
      CHECK(row_sum + 1 == snap.total_messages);
      CHECK(snap.participation_equity >= 0.0);
      CHECK(snap.participation_equity <= 1.0);
      CHECK(std::abs(snap.participation_equity - want.equity) <= 1e-9);
      for (std::size_t i = 0; i < snap.participants.size(); ++i) {
        const auto& p = snap.participants[i];
        const auto it = want.speakers.find(p.participant_id);
        if (it == want.speakers.end()) {
          CHECK(p.messages == 0);
          continue;
        }
        CHECK(p.messages == it->second.messages);
        CHECK(p.words == it->second.words);
        CHECK(p.latency.has_value() == it->second.median.has_value());
        if (p.latency) {
          CHECK(p.latency->samples == it->second.latency_samples);
          CHECK(std::abs(p.latency->median - *it->second.median) <= 1e-9);
          CHECK(std::abs(p.latency->p90 - *it->second.p90) <= 1e-9);
        }
        for (std::size_t j = 0; j < snap.participants.size(); ++j) {
          const auto key = std::make_pair(p.participant_id, snap.participants[j].participant_id);
          const auto t = want.transitions.count(key) ? want.transitions.at(key) : 0;
          CHECK(snap.turn_matrix[i][j] == t);
        }
      }
    }
  }

  TEST_CASE("lexicon tagging records spans and offsets") {
    EventStore store;
    store.append("s", EventKind::session_start, 0, std::nullopt, {});
    store.append("s", EventKind::message, 1, "a", {{"text", "I Agree, and I agree again"}});
    store.append("s", EventKind::message, 2, "b", {{"text", "why not?"}});
    TagLexicon lex;
    lex.entries = {{"agreement", {"agree"}}, {"question", {"why", "?"}}};
    const auto tags = tag_behaviors(store.events("s"), lex);
    REQUIRE(tags.size() == 4);
    CHECK(tags[0] == TagEntry{2, "agreement", "Agree", 2, "lexicon"});
    CHECK(tags[1].offset == 15);
    CHECK(tags[2].tag == "question");
    CHECK(tags[3].matched_span == "?");
  }

  TEST_CASE("lexicon validation and json round trip") {
    TagLexicon bad;
    bad.entries = {{"", {"x"}}, {"t", {""}}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    TagLexicon lex;
    lex.entries = {{"b", {"x", "y"}}, {"a", {"z"}}};
    CHECK(TagLexicon::from_json(lex.to_json()).entries == lex.entries);
  }

  TEST_CASE("snapshot prefix is monotone") {
    std::mt19937_64 rng(3);
    Built b;
    build(b, rng, 3, 40);
    const auto events = b.store.events("s");
    std::uint64_t prev_total = 0;
    for (std::size_t n = 1; n <= events.size(); ++n) {
      const auto snap = compute_analytics(std::span(events.data(), n));
      CHECK(snap.as_of_seq == n);
      CHECK(snap.total_messages >= prev_total);
      prev_total = snap.total_messages;
    }
  }

  TEST_CASE("transcript export") {
    EventStore store;
    store.append("s", EventKind::session_start, 1735689600, std::nullopt, {});
    store.append("s", EventKind::message, 1735689605, "a", {{"text", "hello"}, {"display_name", "Ana"}});
    store.append("s", EventKind::suppression, 1735689605, std::nullopt, {{"reason", "cooldown"}});
    store.append("s", EventKind::bot_reply, 1735689606.5, "bot", {{"text", "hi"}, {"display_name", "Sage"}});
    CHECK(export_session(store, "s", ExportFormat::transcript) ==
          "2025-01-01T00:00:05Z Ana: hello\n2025-01-01T00:00:06.500Z Sage: hi\n");
    CHECK(export_session(store, "s", ExportFormat::events) == store.export_events("s"));
  }

  TEST_CASE("participant profiles") {
    const auto p = ParticipantProfile::from_json(
        json::parse(R"({"participant_id":"p1","display_name":"Ana","age":30,"gender":"f",
                        "individual_measures":{"self_efficacy":4.2},"consent_flags":{"recording":true}})"));
    CHECK(p.age == 30);
    CHECK(p.individual_measures.at("self_efficacy") == 4.2);
    CHECK(ParticipantProfile::from_json(p.to_json()).to_json() == p.to_json());
    CHECK_THROWS_AS(ParticipantProfile::from_json(json::parse(R"({"participant_id":""})")), ValidationError);
    CHECK_THROWS_AS(ParticipantProfile::from_json(json::parse(R"({"participant_id":3})")), ValidationError);
  }

  TEST_CASE("to_json layout") {
    EventStore store;
    store.append("s", EventKind::session_start, 0, std::nullopt, {});
    store.append("s", EventKind::message, 1, "a", {{"text", "hey"}});
    const auto j = compute_analytics(store, "s").to_json();
    CHECK(j["turn_taking"]["order"] == json::array({"a"}));
    CHECK(j["participants"][0]["latency"].is_null());
    CHECK(j["total_messages"] == 1);
  }
}
