#include "aicollab/memory_log.hpp"

#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>

#include "aicollab/error.hpp"

namespace aicollab {

using nlohmann::json;

std::string memory_log_header(const MemoryStoreConfig& config) {
  json header = {{"schema", kMemoryLogSchema},
                 {"schema_version", kMemoryLogSchemaVersion},
                 {"dimension", config.dimension},
                 {"importance_window", config.importance_window},
                 {"embedder", config.embedder_version}};
  return header.dump();
}

std::string serialize_memory_record(const MemoryRecord& record) {
  json sparse = json::array();
  const auto values = record.embedding.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0) sparse.push_back(json::array({i, values[i]}));
  }
  json line = {{"id", record.id},
               {"kind", to_string(record.kind)},
               {"content", record.content},
               {"created_at", record.created_at},
               {"speaker_id", record.speaker_id},
               {"channel_id", record.channel_id},
               {"importance", record.importance},
               {"source_ids", record.source_ids},
               {"embedding", sparse}};
  return line.dump();
}

void write_memory_log(const MemoryStore& store, std::ostream& out) {
  out << memory_log_header(store.config()) << '\n';
  for (const auto& rec : store.records()) out << serialize_memory_record(*rec) << '\n';
}

void write_memory_log(const MemoryStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open " + path.string() + " for writing");
  write_memory_log(store, out);
  if (!out.flush()) throw StorageError("write failed: " + path.string());
}

std::unique_ptr<MemoryStore> read_memory_log(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::unique_ptr<MemoryStore> store;
  auto fail = [&](const std::string& why) {
    throw ParameterError("memory log line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(e.what());
    }
    try {
      if (!store) {
        if (j.value("schema", "") != kMemoryLogSchema) fail("missing memory log header");
        if (j.at("schema_version").get<int>() != kMemoryLogSchemaVersion) fail("unsupported schema version");
        MemoryStoreConfig config;
        config.dimension = j.at("dimension").get<std::size_t>();
        config.importance_window = j.value("importance_window", kDefaultImportanceWindow);
        config.embedder_version = j.value("embedder", "");
        store = std::make_unique<MemoryStore>(config);
        continue;
      }
      MemoryRecord rec;
      rec.id = j.at("id").get<MemoryId>();
      rec.kind = memory_kind_from_string(j.at("kind").get<std::string>());
      rec.content = j.at("content").get<std::string>();
      rec.created_at = j.at("created_at").get<double>();
      rec.speaker_id = j.at("speaker_id").get<std::string>();
      rec.channel_id = j.at("channel_id").get<std::string>();
      rec.importance = j.at("importance").get<double>();
      rec.source_ids = j.at("source_ids").get<std::vector<MemoryId>>();
      std::vector<double> dense(store->config().dimension, 0.0);
      for (const auto& pair : j.at("embedding")) {
        const auto idx = pair.at(0).get<std::size_t>();
        if (idx >= dense.size()) fail("embedding index out of range");
        dense[idx] = pair.at(1).get<double>();
      }
      rec.embedding = EmbeddingVector(std::move(dense));
      store->restore(std::move(rec));
    } catch (const json::exception& e) {
      fail(e.what());
    } catch (const ParameterError& e) {
      if (std::string_view(e.what()).starts_with("memory log line")) throw;
      fail(e.what());
    }
  }
  if (!store) throw ParameterError("memory log is empty (missing header)");
  return store;
}

std::unique_ptr<MemoryStore> read_memory_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path.string());
  return read_memory_log(in);
}

}  // namespace aicollab
