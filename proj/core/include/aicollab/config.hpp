#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aicollab/analytics.hpp"
#include "aicollab/llm.hpp"
#include "aicollab/orchestrator.hpp"
#include "aicollab/persona.hpp"

namespace aicollab {

struct AgeBandTarget {
  int min_age = 0;
  int max_age = 0;  // inclusive
  int count = 0;

  bool operator==(const AgeBandTarget&) const = default;
};

struct CompositionConstraints {
  int team_size = 1;
  std::optional<std::map<std::string, int>> gender_targets;
  std::optional<std::vector<AgeBandTarget>> age_bands;

  // Appends "<prefix>.<field>: ..." findings.
  void collect_findings(std::vector<std::string>& findings, const std::string& prefix = "composition") const;
  void validate() const;
  nlohmann::json to_json() const;
  bool operator==(const CompositionConstraints&) const = default;
};

// True when the members exactly meet size and every target. Members without
// a gender (age) never satisfy gender (age) targets.
bool satisfies_constraints(std::span<const ParticipantProfile> team, const CompositionConstraints& constraints);

// Whether `candidate` can join the partial team without making the targets
// unreachable.
bool admits(std::span<const ParticipantProfile> partial, const ParticipantProfile& candidate,
            const CompositionConstraints& constraints);

struct PoolEntry {
  ParticipantProfile profile;
  double enqueued_at = 0.0;

  const std::string& participant_id() const noexcept { return profile.participant_id; }
};

struct MatchResult {
  std::vector<std::vector<PoolEntry>> teams;
  std::vector<PoolEntry> residual;  // pool order
};

// Greedy first-fit in pool order: each participant joins the first partial
// team that still admits them, otherwise opens a new one. A team forms once
// full; partial teams left at the end return to the pool.
MatchResult match_teams(std::span<const PoolEntry> pool, const CompositionConstraints& constraints);

enum class ExperimentStatus { draft, open, running, closed };

const char* to_string(ExperimentStatus s) noexcept;
std::optional<ExperimentStatus> experiment_status_from_string(std::string_view s) noexcept;

struct TaskSpec {
  std::string title;
  std::string instructions;
  std::vector<std::string> context_document_ids;

  bool operator==(const TaskSpec&) const = default;
};

struct MemorySettings {
  std::size_t importance_window = kDefaultImportanceWindow;
  ReflectionSettings reflection;
  bool include_bot_replies = true;
  std::size_t transcript_window = 20;

  bool operator==(const MemorySettings&) const = default;
};

struct ExperimentConfig {
  std::string experiment_id;
  std::string name;
  PersonaSpec persona;
  LogicFilterConfig logic_filter;
  RetrievalSettings retrieval;
  GatewaySettings gateway;
  std::vector<ScriptRule> gateway_script;  // scripted backend only
  std::string fallback_reply = std::string(ScriptedBackend::kDefaultFallback);
  TaskSpec task;
  CompositionConstraints composition;
  double duration_seconds = 1800.0;
  ExperimentStatus status = ExperimentStatus::draft;
  MemorySettings memory;
  TagLexicon tag_lexicon;

  // Missing sections take their defaults. Every structural and range problem
  // is reported at once as a ValidationError with field paths.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  SessionConfig session_config() const;
};

// Range checks across every section plus persona validation against the table.
std::vector<std::string> validate_experiment(const ExperimentConfig& config, const DescriptorTable& table);

// from_json plus the persona checks against the table, all findings in one error.
ExperimentConfig load_experiment_config(const nlohmann::json& j, const DescriptorTable& table);

}  // namespace aicollab
