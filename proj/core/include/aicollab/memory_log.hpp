#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>

#include "aicollab/memory.hpp"

// Line-delimited persistence for a memory stream. The first line is a schema
// header carrying the store dimension and embedder version; every following
// line is one record. Embeddings are stored sparsely as [index, value] pairs.
namespace aicollab {

inline constexpr std::string_view kMemoryLogSchema = "aicollab.memory";
inline constexpr int kMemoryLogSchemaVersion = 1;

std::string memory_log_header(const MemoryStoreConfig& config);
std::string serialize_memory_record(const MemoryRecord& record);

void write_memory_log(const MemoryStore& store, std::ostream& out);
void write_memory_log(const MemoryStore& store, const std::filesystem::path& path);

// Throws ParameterError naming the offending line on malformed input.
std::unique_ptr<MemoryStore> read_memory_log(std::istream& in);
std::unique_ptr<MemoryStore> read_memory_log(const std::filesystem::path& path);

}  // namespace aicollab
