#include "aicollab/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "aicollab/error.hpp"
#include "aicollab/llm.hpp"
#include "aicollab/text.hpp"

namespace aicollab {

using nlohmann::json;

namespace {

bool is_chat_line(const EventRecord& e) {
  return e.kind == EventKind::message || e.kind == EventKind::bot_reply;
}

std::string payload_text(const EventRecord& e) { return e.payload.value("text", std::string()); }

}  // namespace

void TagLexicon::validate() const {
  std::vector<std::string> findings;
  for (const auto& [tag, patterns] : entries) {
    if (text::is_blank(tag)) findings.emplace_back("tag name must not be empty");
    if (patterns.empty()) findings.push_back("tag '" + tag + "' has no patterns");
    for (const auto& p : patterns) {
      if (p.empty()) findings.push_back("tag '" + tag + "' has an empty pattern");
    }
  }
  if (!findings.empty()) throw ValidationError("invalid tag lexicon", std::move(findings));
}

TagLexicon TagLexicon::from_json(const json& j) {
  TagLexicon lex;
  if (j.is_array()) {
    // [{"tag": "...", "patterns": [...]}, ...] keeps order explicitly
    for (const auto& e : j) lex.entries.emplace_back(e.at("tag").get<std::string>(), e.at("patterns").get<std::vector<std::string>>());
  } else {
    for (const auto& [tag, patterns] : j.items()) lex.entries.emplace_back(tag, patterns.get<std::vector<std::string>>());
  }
  lex.validate();
  return lex;
}

json TagLexicon::to_json() const {
  json out = json::array();
  for (const auto& [tag, patterns] : entries) out.push_back({{"tag", tag}, {"patterns", patterns}});
  return out;
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ParameterError("quantile of empty sample");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double participation_equity(std::span<const std::uint64_t> counts) {
  std::uint64_t total = 0;
  std::size_t active = 0;
  for (auto c : counts) {
    total += c;
    if (c > 0) ++active;
  }
  if (active < 2) return 1.0;
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return std::clamp(h / std::log(static_cast<double>(active)), 0.0, 1.0);
}

std::vector<TagEntry> tag_behaviors(std::span<const EventRecord> events, const TagLexicon& lexicon) {
  std::vector<TagEntry> out;
  for (const auto& e : events) {
    if (!is_chat_line(e)) continue;
    const auto body = payload_text(e);
    for (const auto& [tag, patterns] : lexicon.entries) {
      for (const auto& pattern : patterns) {
        for (auto offset : text::find_all_ci(body, pattern)) {
          out.push_back({e.seq, tag, body.substr(offset, pattern.size()), offset, "lexicon"});
        }
      }
    }
  }
  return out;
}

std::vector<TagEntry> tag_behaviors_with_model(std::span<const EventRecord> events, const TagLexicon& lexicon,
                                               Gateway& gateway, const std::string& model_id) {
  std::vector<TagEntry> out;
  if (lexicon.empty()) return out;
  std::string allowed;
  for (const auto& [tag, _] : lexicon.entries) allowed += (allowed.empty() ? "" : ", ") + tag;
  for (const auto& e : events) {
    if (!is_chat_line(e)) continue;
    const auto body = payload_text(e);
    if (text::is_blank(body)) continue;
    CompletionRequest req;
    req.model_id = model_id;
    req.temperature = 0.0;
    req.max_output_tokens = 50;
    req.request_id = e.session_id + ":tag:" + std::to_string(e.seq);
    req.messages = {{Role::system,
                     "You label team chat messages with behavior tags. Allowed tags: " + allowed +
                         ". Reply with the applicable tags separated by commas, or 'none'.",
                     std::nullopt},
                    {Role::user, body, std::nullopt}};
    const auto reply = gateway.complete(req).content;
    std::size_t pos = 0;
    while (pos <= reply.size()) {
      auto comma = reply.find(',', pos);
      if (comma == std::string::npos) comma = reply.size();
      const auto label = text::to_lower_ascii(text::trim(std::string_view(reply).substr(pos, comma - pos)));
      for (const auto& [tag, _] : lexicon.entries) {
        if (text::to_lower_ascii(tag) == label) out.push_back({e.seq, tag, body, 0, "model"});
      }
      pos = comma + 1;
    }
  }
  return out;
}

AnalyticsSnapshot compute_analytics(std::span<const EventRecord> events, const TagLexicon& lexicon) {
  AnalyticsSnapshot snap;
  if (!events.empty()) {
    snap.session_id = events.front().session_id;
    snap.as_of_seq = events.back().seq;
  }

  std::unordered_map<std::string, std::size_t> index;
  auto add_participant = [&](const std::string& id, const std::string& name, bool is_bot) -> std::size_t {
    auto [it, inserted] = index.emplace(id, snap.participants.size());
    if (inserted) {
      ParticipantStats p;
      p.participant_id = id;
      p.display_name = name.empty() ? id : name;
      p.is_bot = is_bot;
      snap.participants.push_back(std::move(p));
    }
    return it->second;
  };

  for (const auto& e : events) {
    if (e.kind != EventKind::session_start || !e.payload.contains("participants")) continue;
    for (const auto& p : e.payload["participants"]) {
      add_participant(p.value("participant_id", std::string()), p.value("display_name", std::string()),
                      p.value("is_bot", false));
    }
  }

  struct Line {
    std::size_t who;
    double ts;
  };
  std::vector<Line> lines;
  for (const auto& e : events) {
    if (e.kind == EventKind::reflection) snap.reflections.push_back(e.payload.value("content", std::string()));
    if (!is_chat_line(e)) continue;
    const auto speaker = e.speaker_id.value_or("unknown");
    const auto who = add_participant(speaker, e.payload.value("display_name", speaker), e.kind == EventKind::bot_reply);
    auto& p = snap.participants[who];
    ++p.messages;
    p.words += text::word_count(payload_text(e));
    lines.push_back({who, e.timestamp});
  }
  snap.total_messages = lines.size();

  const std::size_t n = snap.participants.size();
  snap.turn_matrix.assign(n, std::vector<std::uint64_t>(n, 0));
  std::vector<std::vector<double>> latencies(n);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    ++snap.turn_matrix[lines[i - 1].who][lines[i].who];
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    for (std::size_t j = i; j-- > 0;) {
      if (lines[j].who != lines[i].who) {
        latencies[lines[i].who].push_back(lines[i].ts - lines[j].ts);
        break;
      }
    }
  }
  std::vector<std::uint64_t> counts;
  for (std::size_t w = 0; w < n; ++w) {
    counts.push_back(snap.participants[w].messages);
    auto& samples = latencies[w];
    if (samples.empty()) continue;
    std::sort(samples.begin(), samples.end());
    snap.participants[w].latency = LatencyStats{samples.size(), sorted_quantile(samples, 0.5), sorted_quantile(samples, 0.9)};
  }
  snap.participation_equity = participation_equity(counts);
  snap.tags = tag_behaviors(events, lexicon);
  return snap;
}

AnalyticsSnapshot compute_analytics(const EventStore& store, const std::string& session_id, const TagLexicon& lexicon) {
  const auto events = store.events(session_id);
  auto snap = compute_analytics(events, lexicon);
  snap.session_id = session_id;
  return snap;
}

json AnalyticsSnapshot::to_json() const {
  json parts = json::array();
  std::vector<std::string> ids;
  for (const auto& p : participants) {
    json entry = {{"participant_id", p.participant_id},
                  {"display_name", p.display_name},
                  {"is_bot", p.is_bot},
                  {"messages", p.messages},
                  {"words", p.words}};
    entry["latency"] = p.latency ? json{{"samples", p.latency->samples}, {"median", p.latency->median}, {"p90", p.latency->p90}}
                                 : json(nullptr);
    parts.push_back(std::move(entry));
    ids.push_back(p.participant_id);
  }
  json tag_list = json::array();
  for (const auto& t : tags) {
    tag_list.push_back({{"seq", t.seq}, {"tag", t.tag}, {"span", t.matched_span}, {"offset", t.offset}, {"provenance", t.provenance}});
  }
  return json{{"session_id", session_id},
              {"as_of_seq", as_of_seq},
              {"total_messages", total_messages},
              {"participants", parts},
              {"turn_taking", {{"order", ids}, {"counts", turn_matrix}}},
              {"participation_equity", participation_equity},
              {"tags", tag_list},
              {"reflections", reflections}};
}

std::string render_transcript(std::span<const EventRecord> events) {
  std::string out;
  for (const auto& e : events) {
    if (!is_chat_line(e)) continue;
    const auto speaker = e.speaker_id.value_or("unknown");
    out += text::format_utc(e.timestamp) + " " + e.payload.value("display_name", speaker) + ": " + payload_text(e) + "\n";
  }
  return out;
}

std::string export_session(const EventStore& store, const std::string& session_id, ExportFormat format) {
  if (format == ExportFormat::events) return store.export_events(session_id);
  const auto events = store.events(session_id);
  return render_transcript(events);
}

void ParticipantProfile::validate() const {
  std::vector<std::string> findings;
  if (participant_id.empty()) findings.emplace_back("participant_id: must not be empty");
  for (const auto& [name, v] : individual_measures) {
    if (!std::isfinite(v)) findings.push_back("individual_measures." + name + ": not finite");
  }
  if (age && (*age < 0 || *age > 150)) findings.emplace_back("age: out of range");
  if (!findings.empty()) throw ValidationError("invalid participant profile", std::move(findings));
}

json ParticipantProfile::to_json() const {
  return json{{"participant_id", participant_id},
              {"display_name", display_name},
              {"age", age ? json(*age) : json(nullptr)},
              {"demographics", {{"age_band", age_band}, {"gender", gender}, {"education", education}}},
              {"individual_measures", individual_measures},
              {"consent_flags", consent_flags}};
}

ParticipantProfile ParticipantProfile::from_json(const json& j) {
  ParticipantProfile p;
  try {
    p.participant_id = j.value("participant_id", std::string());
    p.display_name = j.value("display_name", p.participant_id);
    if (j.contains("age") && !j["age"].is_null()) p.age = j["age"].get<int>();
    const auto demo = j.value("demographics", json::object());
    p.age_band = demo.value("age_band", std::string());
    p.gender = demo.value("gender", j.value("gender", std::string()));
    p.education = demo.value("education", std::string());
    if (j.contains("individual_measures")) p.individual_measures = j["individual_measures"].get<std::map<std::string, double>>();
    if (j.contains("consent_flags")) p.consent_flags = j["consent_flags"].get<std::map<std::string, bool>>();
  } catch (const json::exception& e) {
    throw ValidationError("invalid participant profile", {e.what()});
  }
  p.validate();
  return p;
}

}  // namespace aicollab
