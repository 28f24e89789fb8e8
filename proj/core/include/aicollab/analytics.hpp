#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aicollab/event_store.hpp"

namespace aicollab {

class Gateway;

// tag name -> case-insensitive trigger phrases, in listing order.
struct TagLexicon {
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;

  bool empty() const noexcept { return entries.empty(); }
  // Throws ValidationError on empty tag names or empty patterns.
  void validate() const;
  static TagLexicon from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct TagEntry {
  std::uint64_t seq = 0;
  std::string tag;
  std::string matched_span;  // text as it appears in the message
  std::size_t offset = 0;    // byte offset of the span
  std::string provenance = "lexicon";

  bool operator==(const TagEntry&) const = default;
};

struct LatencyStats {
  std::size_t samples = 0;
  double median = 0.0;  // seconds
  double p90 = 0.0;

  bool operator==(const LatencyStats&) const = default;
};

struct ParticipantStats {
  std::string participant_id;
  std::string display_name;
  bool is_bot = false;
  std::uint64_t messages = 0;
  std::uint64_t words = 0;
  std::optional<LatencyStats> latency;

  bool operator==(const ParticipantStats&) const = default;
};

struct AnalyticsSnapshot {
  std::string session_id;
  std::uint64_t as_of_seq = 0;
  std::uint64_t total_messages = 0;  // message + bot_reply events
  // Session roster order, then any unlisted speakers by first appearance.
  std::vector<ParticipantStats> participants;
  // turn_matrix[i][j]: times participant j spoke immediately after participant i.
  std::vector<std::vector<std::uint64_t>> turn_matrix;
  double participation_equity = 1.0;
  std::vector<TagEntry> tags;
  std::vector<std::string> reflections;

  nlohmann::json to_json() const;
  bool operator==(const AnalyticsSnapshot&) const = default;
};

// Interpolated quantile (q in [0, 1]) of an ascending-sorted sample.
double sorted_quantile(std::span<const double> sorted, double q);

// Normalized Shannon entropy of the counts that are > 0; 1.0 with fewer than
// two active speakers.
double participation_equity(std::span<const std::uint64_t> counts);

std::vector<TagEntry> tag_behaviors(std::span<const EventRecord> events, const TagLexicon& lexicon);

// Optional model-assisted pass: asks the gateway which lexicon tags apply to
// each message and records the answers with provenance "model".
std::vector<TagEntry> tag_behaviors_with_model(std::span<const EventRecord> events, const TagLexicon& lexicon,
                                               Gateway& gateway, const std::string& model_id);

AnalyticsSnapshot compute_analytics(std::span<const EventRecord> events, const TagLexicon& lexicon = {});
AnalyticsSnapshot compute_analytics(const EventStore& store, const std::string& session_id,
                                    const TagLexicon& lexicon = {});

enum class ExportFormat { events, transcript };

// events: the verbatim line-delimited log. transcript: one
// "<utc timestamp> <display name>: <text>" line per message and bot reply.
std::string export_session(const EventStore& store, const std::string& session_id, ExportFormat format);
std::string render_transcript(std::span<const EventRecord> events);

struct ParticipantProfile {
  std::string participant_id;
  std::string display_name;
  std::optional<int> age;
  std::string age_band;
  std::string gender;
  std::string education;
  std::map<std::string, double> individual_measures;  // e.g. "self_efficacy" -> 4.2
  std::map<std::string, bool> consent_flags;

  // participant_id non-empty, measures finite.
  void validate() const;
  nlohmann::json to_json() const;
  static ParticipantProfile from_json(const nlohmann::json& j);
};

}  // namespace aicollab
