#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "aicollab/embedding.hpp"

namespace aicollab {

using MemoryId = std::uint64_t;

enum class MemoryKind { observation, reflection };

const char* to_string(MemoryKind kind) noexcept;
MemoryKind memory_kind_from_string(std::string_view s);

struct MemoryRecord {
  MemoryId id = 0;
  MemoryKind kind = MemoryKind::observation;
  std::string content;
  EmbeddingVector embedding;
  double created_at = 0.0;  // UTC seconds
  std::string speaker_id;
  std::string channel_id;
  double importance = 0.5;  // cached at ingest
  std::vector<MemoryId> source_ids;  // non-empty iff kind == reflection
};

// Recency/relevance/importance weights, stored normalized to sum 1.
class RetrievalWeights {
 public:
  RetrievalWeights() = default;  // 1/3 each
  // Each weight must be >= 0 and the sum > 0.
  RetrievalWeights(double alpha, double beta, double gamma);

  double alpha() const noexcept { return alpha_; }
  double beta() const noexcept { return beta_; }
  double gamma() const noexcept { return gamma_; }

  bool operator==(const RetrievalWeights&) const = default;

 private:
  double alpha_ = 1.0 / 3.0;
  double beta_ = 1.0 / 3.0;
  double gamma_ = 1.0 / 3.0;
};

// One-hour half-life.
inline const double kDefaultDecayLambda = std::log(2.0) / 3600.0;
inline constexpr std::size_t kDefaultTopK = 10;
inline constexpr std::size_t kDefaultImportanceWindow = 50;

struct RetrievalQuery {
  std::string query_text;
  EmbeddingVector query_embedding;
  double now = 0.0;
  std::size_t k = kDefaultTopK;
  double lambda = kDefaultDecayLambda;  // 1/seconds
  RetrievalWeights weights;
  // Restricts the scan to one channel. Unset scans every record.
  std::optional<std::string> channel_id;
  // Only records with id < before_id are eligible.
  std::optional<MemoryId> before_id;

  void validate() const;
};

struct ScoredMemory {
  std::shared_ptr<const MemoryRecord> record;
  double recency = 0.0;
  double relevance = 0.0;
  double importance = 0.0;
  double composite = 0.0;
};

// e^(-lambda * elapsed). Negative elapsed (clock skew) is clamped to 0.
double recency_weight(double elapsed_seconds, double lambda);

// Cosine of the angle between a and b. Defined as 0 when either is all zeros.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Maps a cosine in [-1, 1] onto [0, 1].
inline double normalized_similarity(double cosine) noexcept { return (cosine + 1.0) / 2.0; }

// Mean normalized similarity of target to its peers (target itself excluded
// by the caller). 0.5 when there are no peers.
double importance_score(const EmbeddingVector& target, std::span<const EmbeddingVector> peers);

// alpha*recency + beta*relevance + gamma*importance; each component must lie in [0, 1].
double composite_score(double recency, double relevance, double importance,
                       const RetrievalWeights& weights);

// Ranking order used by retrieval: composite desc, then recency desc, then id desc.
bool ranks_before(const ScoredMemory& a, const ScoredMemory& b) noexcept;

struct MemoryStoreConfig {
  std::size_t dimension = LocalHashEmbedder::kDefaultDimension;
  std::size_t importance_window = kDefaultImportanceWindow;
  std::string embedder_version;
};

struct MemoryDraft {
  MemoryKind kind = MemoryKind::observation;
  std::string content;
  std::string speaker_id;
  std::string channel_id;
  double created_at = 0.0;
  EmbeddingVector embedding;
  std::vector<MemoryId> source_ids;
};

struct IdRange {
  MemoryId first = 0;
  MemoryId last = 0;  // inclusive
};

using Summarizer = std::function<std::string(const std::vector<std::shared_ptr<const MemoryRecord>>&)>;

// Append-only memory stream. One writer, any number of concurrent readers.
// Records are immutable once inserted.
class MemoryStore {
 public:
  explicit MemoryStore(MemoryStoreConfig config);

  const MemoryStoreConfig& config() const noexcept { return config_; }
  std::size_t size() const;
  std::size_t channel_size(const std::string& channel_id) const;

  // Assigns the next id and caches importance over the trailing window of the
  // same channel.
  std::shared_ptr<const MemoryRecord> append(MemoryDraft draft);

  std::shared_ptr<const MemoryRecord> append_observation(std::string content, std::string speaker_id,
                                                         std::string channel_id, double created_at,
                                                         EmbeddingVector embedding);

  // Reinserts a previously persisted record verbatim (id and importance kept).
  // Ids must keep increasing.
  void restore(MemoryRecord record);

  // Top-k by composite score, best first. Read-only.
  std::vector<ScoredMemory> retrieve_top_k(const RetrievalQuery& query) const;

  // Every eligible record scored, in ranking order.
  std::vector<ScoredMemory> score_all(const RetrievalQuery& query) const;

  // Summarizes the channel's records whose ids fall in `window` into a new
  // reflection record. The summary is re-embedded with `embedder`.
  std::shared_ptr<const MemoryRecord> synthesize_reflection(const std::string& channel_id, IdRange window,
                                                            const Summarizer& summarizer,
                                                            const Embedder& embedder, double created_at);

  std::shared_ptr<const MemoryRecord> get(MemoryId id) const;
  std::vector<std::shared_ptr<const MemoryRecord>> records() const;
  std::vector<std::shared_ptr<const MemoryRecord>> channel_records(const std::string& channel_id) const;

 private:
  std::vector<ScoredMemory> score_locked(const RetrievalQuery& query) const;
  std::vector<const EmbeddingVector*> trailing_window_locked(const std::string& channel_id) const;

  MemoryStoreConfig config_;
  mutable std::shared_mutex mutex_;
  std::vector<std::shared_ptr<const MemoryRecord>> records_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_channel_;
  MemoryId next_id_ = 1;
};

}  // namespace aicollab
