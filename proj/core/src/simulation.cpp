#include "aicollab/simulation.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "aicollab/error.hpp"
#include "aicollab/memory_log.hpp"
#include "aicollab/text.hpp"

namespace aicollab {

using nlohmann::json;

void SimulationScript::validate() const {
  std::vector<std::string> findings;
  std::set<std::string> ids;
  if (participants.empty()) findings.emplace_back("participants: at least one participant is required");
  for (std::size_t i = 0; i < participants.size(); ++i) {
    const auto& p = participants[i];
    const auto path = "participants[" + std::to_string(i) + "]";
    if (p.participant_id.empty()) findings.push_back(path + ".participant_id: must not be empty");
    if (p.participant_id == kSimulationBotId) findings.push_back(path + ".participant_id: 'bot' is reserved");
    if (p.is_bot) findings.push_back(path + ": scripts declare human participants only");
    if (!ids.insert(p.participant_id).second) findings.push_back(path + ": duplicate participant " + p.participant_id);
  }
  double last = 0.0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& l = lines[i];
    const auto path = "lines[" + std::to_string(i) + "]";
    if (!ids.count(l.speaker)) findings.push_back(path + ".speaker: undeclared speaker '" + l.speaker + "'");
    if (text::is_blank(l.text)) findings.push_back(path + ".text: must not be blank");
    if (!std::isfinite(l.at) || l.at < 0.0) findings.push_back(path + ".at: must be a finite offset >= 0");
    if (l.at < last) findings.push_back(path + ".at: offsets must be non-decreasing");
    last = std::max(last, l.at);
  }
  for (std::size_t i = 0; i < gateway_script.size(); ++i) {
    if (gateway_script[i].match.empty()) {
      findings.push_back("gateway_script[" + std::to_string(i) + "].match: must not be empty");
    }
  }
  if (fallback_reply.empty()) findings.emplace_back("fallback_reply: must not be empty");
  if (!std::isfinite(epoch)) findings.emplace_back("epoch: must be finite");
  if (!findings.empty()) throw ValidationError("invalid simulation script", std::move(findings));
}

SimulationScript SimulationScript::from_json(const json& j) {
  SimulationScript s;
  try {
    if (!j.is_object()) throw ValidationError("invalid simulation script", {"script: expected an object"});
    for (const auto& p : j.at("participants")) {
      s.participants.push_back({p.at("participant_id").get<std::string>(),
                                p.value("display_name", p.at("participant_id").get<std::string>()), false});
    }
    for (const auto& l : j.at("lines")) {
      s.lines.push_back({l.at("speaker").get<std::string>(), l.at("text").get<std::string>(), l.value("at", 0.0)});
    }
    if (j.contains("gateway_script")) {
      for (const auto& r : j.at("gateway_script")) {
        s.gateway_script.push_back({r.at("match").get<std::string>(), r.at("reply").get<std::string>()});
      }
    }
    s.fallback_reply = j.value("fallback_reply", s.fallback_reply);
    s.epoch = j.value("epoch", s.epoch);
  } catch (const json::exception& e) {
    throw ValidationError("invalid simulation script", {e.what()});
  }
  s.validate();
  return s;
}

json SimulationScript::to_json() const {
  json ps = json::array(), ls = json::array(), rules = json::array();
  for (const auto& p : participants) ps.push_back({{"participant_id", p.participant_id}, {"display_name", p.display_name}});
  for (const auto& l : lines) ls.push_back({{"speaker", l.speaker}, {"text", l.text}, {"at", l.at}});
  for (const auto& r : gateway_script) rules.push_back({{"match", r.match}, {"reply", r.reply}});
  return {{"participants", ps}, {"lines", ls}, {"gateway_script", rules}, {"fallback_reply", fallback_reply}, {"epoch", epoch}};
}

SimulationResult run_simulation(const SimulationScript& script, const ExperimentConfig& config,
                                const DescriptorTable& table) {
  script.validate();
  const auto findings = validate_experiment(config, table);
  if (!findings.empty()) throw ValidationError("invalid experiment config", findings);

  auto embedder = std::make_shared<LocalHashEmbedder>();
  auto events = std::make_shared<EventStore>();
  auto memory = std::make_shared<MemoryStore>(
      MemoryStoreConfig{embedder->dimension(), config.memory.importance_window, embedder->version()});
  auto backend = std::make_shared<ScriptedBackend>(
      script.gateway_script.empty() ? config.gateway_script : script.gateway_script, script.fallback_reply);
  auto gateway = std::make_shared<Gateway>(backend, GatewayConfig{}, [](std::chrono::milliseconds) {});

  SessionState state;
  state.session_id = "sim-" + (config.experiment_id.empty() ? std::string("experiment") : config.experiment_id);
  state.channel_id = std::string(kSimulationChannel);
  state.experiment_id = config.experiment_id;
  state.participants = script.participants;
  state.participants.push_back({std::string(kSimulationBotId), config.persona.name, true});
  state.task_title = config.task.title;
  state.task_instructions = config.task.instructions;
  state.context_document_ids = config.task.context_document_ids;
  state.started_at = script.epoch;
  const double last_offset = script.lines.empty() ? 0.0 : script.lines.back().at;
  state.deadline = script.epoch + std::max(config.duration_seconds, last_offset + 1.0);

  SessionServices services{events, memory, embedder, gateway, make_gateway_summarizer(gateway, config.gateway)};
  Session session(state, config.session_config(), compile_system_prompt(config.persona, table), services);

  SimulationResult result;
  result.session_id = state.session_id;
  std::size_t current_line = 0;
  session.set_retrieval_observer([&](const IncomingMessage& msg, const std::vector<ScoredMemory>& retrieved) {
    RetrievalTrace t;
    t.line = current_line;
    for (const auto& m : retrieved) {
      t.ids.push_back(m.record->id);
      t.ages.push_back(msg.timestamp - m.record->created_at);
    }
    result.retrievals.push_back(std::move(t));
  });

  session.start();
  for (current_line = 0; current_line < script.lines.size(); ++current_line) {
    const auto& line = script.lines[current_line];
    const auto* speaker = state.find_participant(line.speaker);
    IncomingMessage msg{state.channel_id, line.speaker, speaker->display_name, line.text, script.epoch + line.at,
                        "sim-" + std::to_string(current_line + 1)};
    session.handle_incoming(msg);
  }
  session.end(EndReason::manual, script.epoch + last_offset);

  result.events = events->events(state.session_id);
  result.analytics = compute_analytics(result.events, config.tag_lexicon);
  result.events_jsonl = events->export_events(state.session_id);
  result.transcript = render_transcript(result.events);
  result.analytics_json = result.analytics.to_json().dump(2) + "\n";
  std::ostringstream mem;
  write_memory_log(*memory, mem);
  result.memory_jsonl = mem.str();
  return result;
}

void write_simulation_outputs(const SimulationResult& result, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw StorageError("cannot create " + out_dir.string() + ": " + ec.message());
  auto write = [&](const char* name, const std::string& content) {
    const auto path = out_dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw StorageError("cannot write " + path.string());
  };
  write("events.jsonl", result.events_jsonl);
  write("transcript.txt", result.transcript);
  write("analytics.json", result.analytics_json);
  write("memory.jsonl", result.memory_jsonl);
}

}  // namespace aicollab
