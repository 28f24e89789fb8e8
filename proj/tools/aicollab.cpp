// aicollab: serve, simulate, score and persona entry points.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aicollab/experiment.hpp"
#include "aicollab/http_service.hpp"
#include "aicollab/memory_log.hpp"
#include "aicollab/persona.hpp"
#include "aicollab/remote.hpp"
#include "aicollab/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aicollab;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kValidation = 3;
constexpr int kRuntime = 4;
constexpr int kIo = 5;
constexpr int kPortInUse = 6;
constexpr int kUsage = 64;

struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  const auto text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string default_table_path() {
  if (const char* env = std::getenv("AICOLLAB_DESCRIPTORS"); env && *env) return env;
  if (fs::exists(AICOLLAB_INSTALLED_TABLE)) return AICOLLAB_INSTALLED_TABLE;
  return AICOLLAB_SOURCE_TABLE;
}

DescriptorTable load_table(const std::string& path) {
  if (!fs::exists(path)) throw IoFailure("descriptor table not found: " + path);
  return load_descriptor_table_file(path);
}

std::string env_or_empty(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  return v ? v : "";
}

// Runs a command body, mapping failures to exit codes and messages on stderr.
template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto& f : e.findings()) std::cerr << "  - " << f << '\n';
    return kValidation;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const BindError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kPortInUse;
  } catch (const IoFailure& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const StorageError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

// ---------------------------------------------------------------------------
// serve

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir;
  std::string descriptor_table;
  std::string researcher_token_env = "AICOLLAB_RESEARCHER_TOKEN";
  std::string cors_origin;
  bool fsync = false;
  bool remote_enabled = false;
  std::string remote_base_url = "https://api.openai.com/v1";
  std::string remote_api_key_env = "OPENAI_API_KEY";
  bool slack_enabled = false;
  std::string slack_base_url = "https://slack.com/api";
  std::string slack_signing_secret_env = "SLACK_SIGNING_SECRET";
  std::string slack_bot_token_env = "SLACK_BOT_TOKEN";
  std::string slack_bot_user_id;
};

ServeConfig parse_serve_config(const json& j) {
  ServeConfig c;
  std::vector<std::string> findings;
  auto str = [&](const json& obj, const char* key, std::string& out, const std::string& path) {
    if (!obj.contains(key) || obj[key].is_null()) return;
    obj[key].is_string() ? void(out = obj[key].get<std::string>()) : findings.push_back(path + ": expected a string");
  };
  auto boolean = [&](const json& obj, const char* key, bool& out, const std::string& path) {
    if (!obj.contains(key) || obj[key].is_null()) return;
    obj[key].is_boolean() ? void(out = obj[key].get<bool>()) : findings.push_back(path + ": expected true or false");
  };
  if (!j.is_object()) throw ValidationError("invalid server config", {"config: expected an object"});
  str(j, "host", c.host, "host");
  if (j.contains("port")) {
    if (!j["port"].is_number_integer() || j["port"].get<long long>() < 0 || j["port"].get<long long>() > 65535) {
      findings.emplace_back("port: expected an integer in [0, 65535]");
    } else {
      c.port = j["port"].get<int>();
    }
  }
  str(j, "data_dir", c.data_dir, "data_dir");
  str(j, "descriptor_table", c.descriptor_table, "descriptor_table");
  str(j, "researcher_token_env", c.researcher_token_env, "researcher_token_env");
  str(j, "cors_origin", c.cors_origin, "cors_origin");
  boolean(j, "fsync", c.fsync, "fsync");
  if (j.contains("remote")) {
    const auto& r = j["remote"];
    if (!r.is_object()) {
      findings.emplace_back("remote: expected an object");
    } else {
      boolean(r, "enabled", c.remote_enabled, "remote.enabled");
      str(r, "base_url", c.remote_base_url, "remote.base_url");
      str(r, "api_key_env", c.remote_api_key_env, "remote.api_key_env");
    }
  }
  if (j.contains("slack")) {
    const auto& s = j["slack"];
    if (!s.is_object()) {
      findings.emplace_back("slack: expected an object");
    } else {
      boolean(s, "enabled", c.slack_enabled, "slack.enabled");
      str(s, "base_url", c.slack_base_url, "slack.base_url");
      str(s, "signing_secret_env", c.slack_signing_secret_env, "slack.signing_secret_env");
      str(s, "bot_token_env", c.slack_bot_token_env, "slack.bot_token_env");
      str(s, "bot_user_id", c.slack_bot_user_id, "slack.bot_user_id");
      if (c.slack_enabled && c.slack_bot_user_id.empty()) findings.emplace_back("slack.bot_user_id: required when enabled");
    }
  }
  if (c.host.empty()) findings.emplace_back("host: must not be empty");
  if (!findings.empty()) throw ValidationError("invalid server config", std::move(findings));
  return c;
}

std::atomic<HttpService*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const std::string& config_path, const std::string& backend_flag) {
  const auto cfg = parse_serve_config(read_json(config_path));
  const bool remote = cfg.remote_enabled || backend_flag == "remote";

  // Secrets come from the environment only; report every missing one.
  std::vector<std::string> missing;
  const auto token = env_or_empty(cfg.researcher_token_env);
  if (token.empty()) missing.push_back(cfg.researcher_token_env);
  const auto api_key = remote ? env_or_empty(cfg.remote_api_key_env) : "";
  if (remote && api_key.empty()) missing.push_back(cfg.remote_api_key_env);
  std::string signing_secret, bot_token;
  if (cfg.slack_enabled) {
    signing_secret = env_or_empty(cfg.slack_signing_secret_env);
    bot_token = env_or_empty(cfg.slack_bot_token_env);
    if (signing_secret.empty()) missing.push_back(cfg.slack_signing_secret_env);
    if (bot_token.empty()) missing.push_back(cfg.slack_bot_token_env);
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw ConfigError("missing secret environment variable(s): " + names);
  }

  ServiceOptions opts;
  opts.descriptors = std::make_shared<DescriptorTable>(
      load_table(cfg.descriptor_table.empty() ? default_table_path() : cfg.descriptor_table));
  if (!cfg.data_dir.empty()) {
    opts.events = EventStore::open_directory(fs::path(cfg.data_dir) / "events", cfg.fsync);
    opts.memory_dir = fs::path(cfg.data_dir) / "memory";
  }
  if (remote) {
    RemoteEndpoint endpoint{cfg.remote_base_url, api_key};
    opts.backend_factory = [endpoint](const ExperimentConfig& c) -> std::shared_ptr<ChatBackend> {
      if (c.gateway.backend == "remote") return std::make_shared<RemoteChatBackend>(endpoint);
      return make_local_backend(c);
    };
  }
  if (cfg.slack_enabled) {
    SlackConfig sc;
    sc.base_url = cfg.slack_base_url;
    sc.bot_token = bot_token;
    opts.slack = std::make_shared<SlackAdapter>(sc);
    opts.slack_bot_user_id = cfg.slack_bot_user_id;
  }
  auto service = std::make_shared<ExperimentService>(std::move(opts));

  HttpServiceOptions http;
  http.researcher_token = token;
  http.slack_signing_secret = signing_secret;
  http.cors_origin = cfg.cors_origin;
  HttpService server(service, http);
  const int port = server.bind(cfg.host, cfg.port);
  service->start_timer();
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << cfg.host << ":" << port << std::endl;
  server.serve();
  g_server = nullptr;
  service->stop_timer();
  return kOk;
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const std::string& script_path, const std::string& config_path, const std::string& out_dir,
                 const std::string& table_path, const std::string& backend) {
  if (backend != "scripted") throw ConfigError("simulate runs the scripted backend only (got --backend " + backend + ")");
  const auto table = load_table(table_path.empty() ? default_table_path() : table_path);
  const auto script = SimulationScript::from_json(read_json(script_path));
  const auto config = load_experiment_config(read_json(config_path), table);
  const auto result = run_simulation(script, config, table);
  write_simulation_outputs(result, out_dir);
  std::cout << "wrote " << result.events.size() << " events for " << result.session_id << " to " << out_dir << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// score

struct ScoreOptions {
  std::string log;
  std::string query;
  std::size_t k = kDefaultTopK;
  double alpha = 1.0, beta = 1.0, gamma = 1.0;
  double lambda = kDefaultDecayLambda;
  std::optional<double> now;
};

std::string fixed(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(6) << v;
  return ss.str();
}

int cmd_score(const ScoreOptions& o) {
  const auto raw = read_file(o.log);
  std::cout << "rank\tid\tkind\tspeaker\tcreated_at\trecency\trelevance\timportance\tcomposite\ttop_k\n";
  if (raw.empty()) return kOk;

  std::unique_ptr<MemoryStore> store;
  try {
    std::istringstream in(raw);
    store = read_memory_log(in);
  } catch (const ParameterError& e) {
    throw ValidationError("malformed memory log", {e.what()});
  }
  if (store->size() == 0) return kOk;

  LocalHashEmbedder embedder(store->config().dimension);
  if (!store->config().embedder_version.empty() && store->config().embedder_version != embedder.version()) {
    throw ConfigError("log was embedded with " + store->config().embedder_version + "; score embeds queries with " +
                      embedder.version());
  }
  RetrievalQuery q;
  q.query_text = o.query;
  q.query_embedding = embedder.embed_text(o.query);
  double latest = 0.0;
  for (const auto& r : store->records()) latest = std::max(latest, r->created_at);
  q.now = o.now.value_or(latest);
  q.k = o.k;
  q.lambda = o.lambda;
  q.weights = RetrievalWeights(o.alpha, o.beta, o.gamma);

  const auto ranked = store->score_all(q);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& s = ranked[i];
    std::cout << (i + 1) << '\t' << s.record->id << '\t' << to_string(s.record->kind) << '\t' << s.record->speaker_id
              << '\t' << fixed(s.record->created_at) << '\t' << fixed(s.recency) << '\t' << fixed(s.relevance) << '\t'
              << fixed(s.importance) << '\t' << fixed(s.composite) << '\t' << (i < o.k ? "*" : "") << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// persona

int cmd_persona(const std::string& spec_path, const std::string& table_path) {
  const auto table = load_table(table_path.empty() ? default_table_path() : table_path);
  PersonaSpec spec;
  const auto j = read_json(spec_path);
  spec = (j.contains("persona") ? j["persona"] : j).get<PersonaSpec>();
  std::cout << compile_system_prompt(spec, table);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aicollab: AI teammate research platform"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path, script_path, out_dir, table_path, spec_path, backend = "scripted";
  ScoreOptions score;
  double now = 0.0;

  auto* serve = app.add_subcommand("serve", "Run the experiment service");
  serve->add_option("--config", config_path, "Server config (JSON)")->required();
  serve->add_option("--backend", backend, "Enable a chat backend for experiments")
      ->check(CLI::IsMember({"scripted", "echo", "remote"}));

  auto* simulate = app.add_subcommand("simulate", "Replay a scripted conversation through the pipeline");
  simulate->add_option("--script", script_path, "Simulation script (JSON)")->required();
  simulate->add_option("--config", config_path, "Experiment config (JSON)")->required();
  simulate->add_option("--out", out_dir, "Output directory")->required();
  simulate->add_option("--table", table_path, "Descriptor table");
  simulate->add_option("--backend", backend, "Chat backend")->check(CLI::IsMember({"scripted", "echo", "remote"}));

  auto* score_cmd = app.add_subcommand("score", "Score every memory of a log against a query");
  score_cmd->add_option("--log", score.log, "Memory log (JSONL)")->required();
  score_cmd->add_option("--query", score.query, "Query text")->required();
  score_cmd->add_option("--k", score.k, "Top-k")->check(CLI::Range(std::size_t{1}, std::size_t{1000000}));
  score_cmd->add_option("--alpha", score.alpha, "Recency weight")->check(CLI::NonNegativeNumber);
  score_cmd->add_option("--beta", score.beta, "Relevance weight")->check(CLI::NonNegativeNumber);
  score_cmd->add_option("--gamma", score.gamma, "Importance weight")->check(CLI::NonNegativeNumber);
  score_cmd->add_option("--lambda", score.lambda, "Recency decay per second")->check(CLI::PositiveNumber);
  auto* now_opt = score_cmd->add_option("--now", now, "Scoring time in epoch seconds (default: newest record)");

  auto* persona = app.add_subcommand("persona", "Compile a persona spec into its system prompt");
  persona->add_option("--spec", spec_path, "Persona spec (JSON)")->required();
  persona->add_option("--table", table_path, "Descriptor table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (*serve) return guarded([&] { return cmd_serve(config_path, backend); });
  if (*simulate) return guarded([&] { return cmd_simulate(script_path, config_path, out_dir, table_path, backend); });
  if (*score_cmd) {
    if (*now_opt) score.now = now;
    return guarded([&] { return cmd_score(score); });
  }
  if (*persona) return guarded([&] { return cmd_persona(spec_path, table_path); });
  return kUsage;
}
