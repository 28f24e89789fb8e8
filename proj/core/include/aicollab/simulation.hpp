#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aicollab/analytics.hpp"
#include "aicollab/config.hpp"
#include "aicollab/memory.hpp"
#include "aicollab/orchestrator.hpp"

namespace aicollab {

struct ScriptLine {
  std::string speaker;  // participant id
  std::string text;
  double at = 0.0;  // seconds after the epoch of the script
};

// A conversation replayed against the full pipeline on a virtual clock.
struct SimulationScript {
  std::vector<Participant> participants;  // humans only; the bot comes from the persona
  std::vector<ScriptLine> lines;
  std::vector<ScriptRule> gateway_script;
  std::string fallback_reply = std::string(ScriptedBackend::kDefaultFallback);
  double epoch = 1735689600.0;  // 2025-01-01T00:00:00Z

  // Speakers declared, offsets non-decreasing, texts non-blank.
  void validate() const;
  static SimulationScript from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

inline constexpr std::string_view kSimulationBotId = "bot";
inline constexpr std::string_view kSimulationChannel = "sim";

struct RetrievalTrace {
  std::size_t line = 0;  // index into the script
  std::vector<MemoryId> ids;
  std::vector<double> ages;  // seconds between the memory and the message
};

struct SimulationResult {
  std::string session_id;
  std::vector<EventRecord> events;
  AnalyticsSnapshot analytics;
  std::string events_jsonl;
  std::string transcript;
  std::string analytics_json;
  std::string memory_jsonl;
  std::vector<RetrievalTrace> retrievals;
};

// Runs the script through a Session with the scripted gateway and the local
// embedder. The script's gateway rules replace the config's when present.
// Deterministic: identical inputs give byte-identical outputs.
SimulationResult run_simulation(const SimulationScript& script, const ExperimentConfig& config,
                                const DescriptorTable& table);

// events.jsonl, transcript.txt, analytics.json, memory.jsonl
void write_simulation_outputs(const SimulationResult& result, const std::filesystem::path& out_dir);

struct SweepAxis {
  std::string name;  // alpha, beta, gamma, lambda, k, temperature, max_output_tokens
  std::vector<double> values;
};

struct SweepCell {
  std::map<std::string, double> params;
  double overlap = 0.0;  // mean per-message Jaccard overlap with the reference cell
  std::vector<std::size_t> reply_lengths;  // words per bot reply
  std::size_t replies = 0;
  std::size_t suppressions = 0;
  double mean_retrieved_age = 0.0;  // seconds
  std::vector<RetrievalTrace> retrievals;
};

double jaccard(const std::vector<MemoryId>& a, const std::vector<MemoryId>& b);

// Cartesian product of the axes in order; the first cell is the reference.
std::vector<SweepCell> sweep_parameters(const std::vector<SweepAxis>& grid, const SimulationScript& fixture,
                                        const ExperimentConfig& base, const DescriptorTable& table);

std::vector<SweepAxis> sweep_grid_from_json(const nlohmann::json& j);
nlohmann::json sweep_to_json(const std::vector<SweepCell>& cells);

}  // namespace aicollab
