#include "aicollab/config.hpp"

#include <cmath>
#include <set>

#include "aicollab/error.hpp"

namespace aicollab {

using nlohmann::json;

const char* to_string(ExperimentStatus s) noexcept {
  switch (s) {
    case ExperimentStatus::draft: return "draft";
    case ExperimentStatus::open: return "open";
    case ExperimentStatus::running: return "running";
    case ExperimentStatus::closed: return "closed";
  }
  return "?";
}

std::optional<ExperimentStatus> experiment_status_from_string(std::string_view s) noexcept {
  if (s == "draft") return ExperimentStatus::draft;
  if (s == "open") return ExperimentStatus::open;
  if (s == "running") return ExperimentStatus::running;
  if (s == "closed") return ExperimentStatus::closed;
  return std::nullopt;
}

namespace {

// Reads optional fields of one JSON object, recording type errors as findings.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path, std::vector<std::string>& findings)
      : j_(j), path_(std::move(path)), findings_(findings) {}

  const json* find(const char* key) const {
    if (!j_.is_object()) return nullptr;
    const auto it = j_.find(key);
    return (it == j_.end() || it->is_null()) ? nullptr : &*it;
  }

  std::string path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void read(const char* key, std::string& out) {
    if (const auto* v = find(key)) v->is_string() ? void(out = v->get<std::string>()) : bad(key, "a string");
  }
  void read(const char* key, double& out) {
    if (const auto* v = find(key)) v->is_number() ? void(out = v->get<double>()) : bad(key, "a number");
  }
  void read(const char* key, bool& out) {
    if (const auto* v = find(key)) v->is_boolean() ? void(out = v->get<bool>()) : bad(key, "true or false");
  }
  void read(const char* key, int& out) {
    if (const auto* v = find(key)) {
      if (v->is_number_integer()) {
        const auto x = v->get<long long>();
        if (x >= INT32_MIN && x <= INT32_MAX) {
          out = static_cast<int>(x);
          return;
        }
      }
      bad(key, "an integer");
    }
  }
  void read(const char* key, std::size_t& out) {
    if (const auto* v = find(key)) {
      if (v->is_number_integer() && v->get<long long>() >= 0) {
        out = v->get<std::size_t>();
      } else {
        bad(key, "a non-negative integer");
      }
    }
  }
  void read(const char* key, std::vector<std::string>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) return bad(key, "an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) return bad(key, "an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  // Sub-object reader; a non-object value is reported and yields an empty object.
  FieldReader object(const char* key) {
    static const json empty = json::object();
    const auto* v = find(key);
    if (v && !v->is_object()) {
      bad(key, "an object");
      v = nullptr;
    }
    return FieldReader(v ? *v : empty, path(key), findings_);
  }

  void bad(const char* key, const char* expected) { findings_.push_back(path(key) + ": expected " + expected); }

  const json& value() const { return j_; }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& findings_;
};

void parse_into(const json& j, ExperimentConfig& c, std::vector<std::string>& findings) {
  if (!j.is_object()) {
    findings.emplace_back("config: expected an object");
    return;
  }
  FieldReader root(j, "", findings);
  root.read("experiment_id", c.experiment_id);
  root.read("name", c.name);

  if (const auto* p = root.find("persona")) {
    try {
      c.persona = p->get<PersonaSpec>();
    } catch (const ValidationError& e) {
      findings.insert(findings.end(), e.findings().begin(), e.findings().end());
    } catch (const json::exception& e) {
      findings.push_back(std::string("persona: ") + e.what());
    }
  }

  auto lf = root.object("logic_filter");
  lf.read("respond_when_mentioned", c.logic_filter.respond_when_mentioned);
  lf.read("proactivity_threshold", c.logic_filter.proactivity_threshold);
  lf.read("min_seconds_between_bot_messages", c.logic_filter.min_seconds_between_bot_messages);
  lf.read("max_reply_tokens", c.logic_filter.max_reply_tokens);
  lf.read("scope_guard_enabled", c.logic_filter.scope_guard_enabled);

  auto rt = root.object("retrieval");
  double alpha = c.retrieval.weights.alpha(), beta = c.retrieval.weights.beta(), gamma = c.retrieval.weights.gamma();
  rt.read("alpha", alpha);
  rt.read("beta", beta);
  rt.read("gamma", gamma);
  try {
    c.retrieval.weights = RetrievalWeights(alpha, beta, gamma);
  } catch (const ParameterError& e) {
    findings.push_back(std::string("retrieval.alpha/beta/gamma: ") + e.what());
  }
  rt.read("lambda", c.retrieval.lambda);
  rt.read("k", c.retrieval.k);

  auto gw = root.object("gateway");
  gw.read("model_id", c.gateway.model_id);
  gw.read("temperature", c.gateway.temperature);
  gw.read("max_output_tokens", c.gateway.max_output_tokens);
  gw.read("backend", c.gateway.backend);
  gw.read("fallback_reply", c.fallback_reply);
  if (const auto* script = gw.find("script")) {
    if (!script->is_array()) {
      gw.bad("script", "an array of {match, reply}");
    } else {
      for (std::size_t i = 0; i < script->size(); ++i) {
        const auto& rule = (*script)[i];
        if (!rule.is_object() || !rule.value("match", json()).is_string() || !rule.value("reply", json()).is_string()) {
          findings.push_back("gateway.script[" + std::to_string(i) + "]: expected {match, reply} strings");
          continue;
        }
        c.gateway_script.push_back({rule["match"].get<std::string>(), rule["reply"].get<std::string>()});
      }
    }
  }

  auto task = root.object("task");
  task.read("title", c.task.title);
  task.read("instructions", c.task.instructions);
  task.read("context_document_ids", c.task.context_document_ids);

  auto comp = root.object("composition");
  comp.read("team_size", c.composition.team_size);
  if (const auto* g = comp.find("gender_targets")) {
    if (!g->is_object()) {
      comp.bad("gender_targets", "an object of gender -> count");
    } else {
      std::map<std::string, int> targets;
      for (const auto& [gender, count] : g->items()) {
        if (!count.is_number_integer()) {
          findings.push_back("composition.gender_targets." + gender + ": expected an integer");
          continue;
        }
        targets[gender] = count.get<int>();
      }
      c.composition.gender_targets = targets;
    }
  }
  if (const auto* bands = comp.find("age_bands")) {
    if (!bands->is_array()) {
      comp.bad("age_bands", "an array of {min, max, count}");
    } else {
      std::vector<AgeBandTarget> out;
      for (std::size_t i = 0; i < bands->size(); ++i) {
        FieldReader band((*bands)[i], "composition.age_bands[" + std::to_string(i) + "]", findings);
        AgeBandTarget b;
        band.read("min", b.min_age);
        band.read("max", b.max_age);
        band.read("count", b.count);
        out.push_back(b);
      }
      c.composition.age_bands = out;
    }
  }

  root.read("duration_seconds", c.duration_seconds);
  if (const auto* s = root.find("status")) {
    const auto status = s->is_string() ? experiment_status_from_string(s->get<std::string>()) : std::nullopt;
    if (status) {
      c.status = *status;
    } else {
      findings.emplace_back("status: expected one of draft, open, running, closed");
    }
  }

  auto mem = root.object("memory");
  mem.read("importance_window", c.memory.importance_window);
  mem.read("reflection_every", c.memory.reflection.every_messages);
  mem.read("reflection_importance_threshold", c.memory.reflection.importance_threshold);
  mem.read("include_bot_replies", c.memory.include_bot_replies);
  mem.read("transcript_window", c.memory.transcript_window);

  if (const auto* lex = root.find("tag_lexicon")) {
    try {
      c.tag_lexicon = TagLexicon::from_json(*lex);
    } catch (const ValidationError& e) {
      for (const auto& f : e.findings()) findings.push_back("tag_lexicon: " + f);
    } catch (const std::exception& e) {
      findings.push_back(std::string("tag_lexicon: ") + e.what());
    }
  }
}

void range_findings(const ExperimentConfig& c, std::vector<std::string>& findings) {
  auto in = [](double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; };
  const auto& lf = c.logic_filter;
  if (!in(lf.proactivity_threshold, 0.0, 1.0)) findings.emplace_back("logic_filter.proactivity_threshold: must be in [0, 1]");
  if (lf.min_seconds_between_bot_messages < 0) {
    findings.emplace_back("logic_filter.min_seconds_between_bot_messages: must be >= 0");
  }
  if (lf.max_reply_tokens < 1 || lf.max_reply_tokens > 8192) {
    findings.emplace_back("logic_filter.max_reply_tokens: must be in [1, 8192]");
  }
  if (!(std::isfinite(c.retrieval.lambda) && c.retrieval.lambda > 0.0)) {
    findings.emplace_back("retrieval.lambda: must be a finite value > 0");
  }
  if (c.retrieval.k < 1 || c.retrieval.k > 1000) findings.emplace_back("retrieval.k: must be in [1, 1000]");
  if (c.gateway.model_id.empty()) findings.emplace_back("gateway.model_id: must not be empty");
  if (!in(c.gateway.temperature, 0.0, 2.0)) findings.emplace_back("gateway.temperature: must be in [0, 2]");
  if (c.gateway.max_output_tokens < 1 || c.gateway.max_output_tokens > 8192) {
    findings.emplace_back("gateway.max_output_tokens: must be in [1, 8192]");
  }
  static const std::set<std::string> backends = {"scripted", "echo", "remote"};
  if (!backends.count(c.gateway.backend)) findings.emplace_back("gateway.backend: must be scripted, echo or remote");
  for (std::size_t i = 0; i < c.gateway_script.size(); ++i) {
    if (c.gateway_script[i].match.empty()) {
      findings.push_back("gateway.script[" + std::to_string(i) + "].match: must not be empty");
    }
  }
  if (c.fallback_reply.empty()) findings.emplace_back("gateway.fallback_reply: must not be empty");
  c.composition.collect_findings(findings);
  if (!in(c.duration_seconds, 1.0, 7 * 86400.0)) findings.emplace_back("duration_seconds: must be in [1, 604800]");
  if (c.memory.importance_window < 1) findings.emplace_back("memory.importance_window: must be >= 1");
  if (c.memory.reflection.every_messages < 1) findings.emplace_back("memory.reflection_every: must be >= 1");
  if (!(std::isfinite(c.memory.reflection.importance_threshold) && c.memory.reflection.importance_threshold > 0.0)) {
    findings.emplace_back("memory.reflection_importance_threshold: must be > 0");
  }
  if (c.memory.transcript_window < 1) findings.emplace_back("memory.transcript_window: must be >= 1");
  try {
    c.tag_lexicon.validate();
  } catch (const ValidationError& e) {
    for (const auto& f : e.findings()) findings.push_back("tag_lexicon: " + f);
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  std::vector<std::string> findings;
  parse_into(j, c, findings);
  range_findings(c, findings);
  if (!findings.empty()) throw ValidationError("invalid experiment config", std::move(findings));
  return c;
}

std::vector<std::string> validate_experiment(const ExperimentConfig& config, const DescriptorTable& table) {
  std::vector<std::string> findings;
  range_findings(config, findings);
  for (const auto& f : validate_persona(config.persona, table).findings) findings.push_back("persona: " + f);
  return findings;
}

ExperimentConfig load_experiment_config(const json& j, const DescriptorTable& table) {
  ExperimentConfig c;
  std::vector<std::string> findings;
  parse_into(j, c, findings);
  for (auto& f : validate_experiment(c, table)) findings.push_back(std::move(f));
  if (!findings.empty()) throw ValidationError("invalid experiment config", std::move(findings));
  return c;
}

json ExperimentConfig::to_json() const {
  json script = json::array();
  for (const auto& r : gateway_script) script.push_back({{"match", r.match}, {"reply", r.reply}});
  return {{"experiment_id", experiment_id},
          {"name", name},
          {"status", aicollab::to_string(status)},
          {"persona", persona},
          {"logic_filter",
           {{"respond_when_mentioned", logic_filter.respond_when_mentioned},
            {"proactivity_threshold", logic_filter.proactivity_threshold},
            {"min_seconds_between_bot_messages", logic_filter.min_seconds_between_bot_messages},
            {"max_reply_tokens", logic_filter.max_reply_tokens},
            {"scope_guard_enabled", logic_filter.scope_guard_enabled}}},
          {"retrieval",
           {{"alpha", retrieval.weights.alpha()},
            {"beta", retrieval.weights.beta()},
            {"gamma", retrieval.weights.gamma()},
            {"lambda", retrieval.lambda},
            {"k", retrieval.k}}},
          {"gateway",
           {{"model_id", gateway.model_id},
            {"temperature", gateway.temperature},
            {"max_output_tokens", gateway.max_output_tokens},
            {"backend", gateway.backend},
            {"script", script},
            {"fallback_reply", fallback_reply}}},
          {"task",
           {{"title", task.title}, {"instructions", task.instructions}, {"context_document_ids", task.context_document_ids}}},
          {"composition", composition.to_json()},
          {"duration_seconds", duration_seconds},
          {"memory",
           {{"importance_window", memory.importance_window},
            {"reflection_every", memory.reflection.every_messages},
            {"reflection_importance_threshold", memory.reflection.importance_threshold},
            {"include_bot_replies", memory.include_bot_replies},
            {"transcript_window", memory.transcript_window}}},
          {"tag_lexicon", tag_lexicon.to_json()}};
}

SessionConfig ExperimentConfig::session_config() const {
  SessionConfig s;
  s.logic_filter = logic_filter;
  s.retrieval = retrieval;
  s.gateway = gateway;
  s.reflection = memory.reflection;
  s.transcript_window = memory.transcript_window;
  s.memorize_bot_replies = memory.include_bot_replies;
  return s;
}

}  // namespace aicollab
