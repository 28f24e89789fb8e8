#include "aicollab/memory.hpp"

#include <algorithm>
#include <mutex>

#include "aicollab/error.hpp"
#include "aicollab/text.hpp"

namespace aicollab {
namespace {

double cosine_raw(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ParameterError("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double mean_normalized_similarity(const EmbeddingVector& target,
                                  const std::vector<const EmbeddingVector*>& peers) {
  if (peers.empty()) return 0.5;
  double sum = 0.0;
  for (const auto* peer : peers) sum += normalized_similarity(cosine_raw(target.values(), peer->values()));
  return sum / static_cast<double>(peers.size());
}

void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ParameterError(std::string("composite_score: ") + name + " outside [0, 1]: " + std::to_string(v));
  }
}

}  // namespace

const char* to_string(MemoryKind kind) noexcept {
  return kind == MemoryKind::observation ? "observation" : "reflection";
}

MemoryKind memory_kind_from_string(std::string_view s) {
  if (s == "observation") return MemoryKind::observation;
  if (s == "reflection") return MemoryKind::reflection;
  throw ParameterError("unknown memory kind: " + std::string(s));
}

RetrievalWeights::RetrievalWeights(double alpha, double beta, double gamma) {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0) || !std::isfinite(alpha) ||
      !std::isfinite(beta) || !std::isfinite(gamma)) {
    throw ParameterError("retrieval weights must be finite and non-negative");
  }
  const double sum = alpha + beta + gamma;
  if (!(sum > 0.0)) throw ParameterError("retrieval weights must not all be zero");
  alpha_ = alpha / sum;
  beta_ = beta / sum;
  gamma_ = gamma / sum;
}

void RetrievalQuery::validate() const {
  if (k < 1) throw ParameterError("retrieval: k must be at least 1");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("retrieval: lambda must be > 0");
  if (!std::isfinite(now)) throw ParameterError("retrieval: now must be finite");
}

double recency_weight(double elapsed_seconds, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("recency_weight: lambda must be > 0");
  if (std::isnan(elapsed_seconds)) throw ParameterError("recency_weight: elapsed is NaN");
  return std::exp(-lambda * std::max(0.0, elapsed_seconds));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) { return cosine_raw(a, b); }

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_raw(a.values(), b.values());
}

double importance_score(const EmbeddingVector& target, std::span<const EmbeddingVector> peers) {
  std::vector<const EmbeddingVector*> ptrs;
  ptrs.reserve(peers.size());
  for (const auto& p : peers) ptrs.push_back(&p);
  return mean_normalized_similarity(target, ptrs);
}

double composite_score(double recency, double relevance, double importance, const RetrievalWeights& weights) {
  check_unit(recency, "recency");
  check_unit(relevance, "relevance");
  check_unit(importance, "importance");
  return weights.alpha() * recency + weights.beta() * relevance + weights.gamma() * importance;
}

bool ranks_before(const ScoredMemory& a, const ScoredMemory& b) noexcept {
  if (a.composite != b.composite) return a.composite > b.composite;
  if (a.recency != b.recency) return a.recency > b.recency;
  return a.record->id > b.record->id;
}

MemoryStore::MemoryStore(MemoryStoreConfig config) : config_(std::move(config)) {
  if (config_.dimension == 0) throw ParameterError("memory store dimension must be positive");
}

std::size_t MemoryStore::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

std::size_t MemoryStore::channel_size(const std::string& channel_id) const {
  std::shared_lock lock(mutex_);
  auto it = by_channel_.find(channel_id);
  return it == by_channel_.end() ? 0 : it->second.size();
}

std::vector<const EmbeddingVector*> MemoryStore::trailing_window_locked(const std::string& channel_id) const {
  std::vector<const EmbeddingVector*> peers;
  auto it = by_channel_.find(channel_id);
  if (it == by_channel_.end()) return peers;
  const auto& idx = it->second;
  const std::size_t n = std::min(config_.importance_window, idx.size());
  peers.reserve(n);
  for (std::size_t i = idx.size() - n; i < idx.size(); ++i) peers.push_back(&records_[idx[i]]->embedding);
  return peers;
}

std::shared_ptr<const MemoryRecord> MemoryStore::append(MemoryDraft draft) {
  if (draft.embedding.dimension() != config_.dimension) {
    throw ParameterError("append: embedding dimension " + std::to_string(draft.embedding.dimension()) +
                         " does not match store dimension " + std::to_string(config_.dimension));
  }
  if (text::is_blank(draft.content)) throw ParameterError("append: memory content is empty");
  if (draft.kind == MemoryKind::observation && !draft.source_ids.empty()) {
    throw ParameterError("append: observations carry no source ids");
  }
  if (draft.kind == MemoryKind::reflection && draft.source_ids.empty()) {
    throw ParameterError("append: reflections need at least one source id");
  }
  if (!std::isfinite(draft.created_at)) throw ParameterError("append: created_at must be finite");

  std::unique_lock lock(mutex_);
  auto record = std::make_shared<MemoryRecord>();
  record->importance = mean_normalized_similarity(draft.embedding, trailing_window_locked(draft.channel_id));
  record->id = next_id_++;
  record->kind = draft.kind;
  record->content = std::move(draft.content);
  record->embedding = std::move(draft.embedding);
  record->created_at = draft.created_at;
  record->speaker_id = std::move(draft.speaker_id);
  record->channel_id = std::move(draft.channel_id);
  record->source_ids = std::move(draft.source_ids);
  by_channel_[record->channel_id].push_back(records_.size());
  records_.push_back(record);
  return record;
}

std::shared_ptr<const MemoryRecord> MemoryStore::append_observation(std::string content, std::string speaker_id,
                                                                    std::string channel_id, double created_at,
                                                                    EmbeddingVector embedding) {
  MemoryDraft draft;
  draft.content = std::move(content);
  draft.speaker_id = std::move(speaker_id);
  draft.channel_id = std::move(channel_id);
  draft.created_at = created_at;
  draft.embedding = std::move(embedding);
  return append(std::move(draft));
}

void MemoryStore::restore(MemoryRecord record) {
  if (record.embedding.dimension() != config_.dimension) {
    throw ParameterError("restore: embedding dimension mismatch for record " + std::to_string(record.id));
  }
  if (!(record.importance >= 0.0 && record.importance <= 1.0)) {
    throw ParameterError("restore: importance outside [0, 1] for record " + std::to_string(record.id));
  }
  if ((record.kind == MemoryKind::reflection) == record.source_ids.empty()) {
    throw ParameterError("restore: source ids inconsistent with kind for record " + std::to_string(record.id));
  }
  std::unique_lock lock(mutex_);
  if (record.id < next_id_) {
    throw ParameterError("restore: record ids must strictly increase (got " + std::to_string(record.id) + ")");
  }
  next_id_ = record.id + 1;
  auto ptr = std::make_shared<const MemoryRecord>(std::move(record));
  by_channel_[ptr->channel_id].push_back(records_.size());
  records_.push_back(std::move(ptr));
}

std::vector<ScoredMemory> MemoryStore::score_locked(const RetrievalQuery& query) const {
  query.validate();
  if (query.query_embedding.dimension() != config_.dimension) {
    throw ParameterError("retrieve: query embedding dimension mismatch");
  }
  std::vector<ScoredMemory> scored;
  auto consider = [&](const std::shared_ptr<const MemoryRecord>& rec) {
    if (query.before_id && rec->id >= *query.before_id) return;
    ScoredMemory s;
    s.record = rec;
    s.recency = recency_weight(query.now - rec->created_at, query.lambda);
    s.relevance = normalized_similarity(cosine_raw(query.query_embedding.values(), rec->embedding.values()));
    s.importance = rec->importance;
    s.composite = composite_score(s.recency, s.relevance, s.importance, query.weights);
    scored.push_back(std::move(s));
  };
  if (query.channel_id) {
    auto it = by_channel_.find(*query.channel_id);
    if (it != by_channel_.end()) {
      scored.reserve(it->second.size());
      for (std::size_t i : it->second) consider(records_[i]);
    }
  } else {
    scored.reserve(records_.size());
    for (const auto& rec : records_) consider(rec);
  }
  return scored;
}

std::vector<ScoredMemory> MemoryStore::retrieve_top_k(const RetrievalQuery& query) const {
  std::shared_lock lock(mutex_);
  auto scored = score_locked(query);
  const std::size_t k = std::min(query.k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), ranks_before);
  scored.resize(k);
  return scored;
}

std::vector<ScoredMemory> MemoryStore::score_all(const RetrievalQuery& query) const {
  std::shared_lock lock(mutex_);
  auto scored = score_locked(query);
  std::sort(scored.begin(), scored.end(), ranks_before);
  return scored;
}

std::shared_ptr<const MemoryRecord> MemoryStore::synthesize_reflection(const std::string& channel_id, IdRange window,
                                                                       const Summarizer& summarizer,
                                                                       const Embedder& embedder, double created_at) {
  if (window.first == 0 || window.last < window.first) throw ParameterError("reflection: empty id window");
  if (!summarizer) throw ParameterError("reflection: no summarizer");
  std::vector<std::shared_ptr<const MemoryRecord>> sources;
  {
    std::shared_lock lock(mutex_);
    auto it = by_channel_.find(channel_id);
    if (it != by_channel_.end()) {
      for (std::size_t i : it->second) {
        const auto& rec = records_[i];
        if (rec->id >= window.first && rec->id <= window.last) sources.push_back(rec);
      }
    }
  }
  if (sources.empty()) throw ParameterError("reflection: window contains no records of channel " + channel_id);

  std::string summary = summarizer(sources);
  if (text::is_blank(summary)) throw ParameterError("reflection: summarizer returned empty text");

  MemoryDraft draft;
  draft.kind = MemoryKind::reflection;
  draft.embedding = embedder.embed_text(summary);
  draft.content = std::move(summary);
  draft.channel_id = channel_id;
  draft.speaker_id = sources.back()->speaker_id;
  draft.created_at = created_at;
  for (const auto& s : sources) draft.source_ids.push_back(s->id);
  return append(std::move(draft));
}

std::shared_ptr<const MemoryRecord> MemoryStore::get(MemoryId id) const {
  std::shared_lock lock(mutex_);
  auto it = std::lower_bound(records_.begin(), records_.end(), id,
                             [](const auto& rec, MemoryId v) { return rec->id < v; });
  if (it == records_.end() || (*it)->id != id) return nullptr;
  return *it;
}

std::vector<std::shared_ptr<const MemoryRecord>> MemoryStore::records() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::vector<std::shared_ptr<const MemoryRecord>> MemoryStore::channel_records(const std::string& channel_id) const {
  std::shared_lock lock(mutex_);
  std::vector<std::shared_ptr<const MemoryRecord>> out;
  auto it = by_channel_.find(channel_id);
  if (it == by_channel_.end()) return out;
  out.reserve(it->second.size());
  for (std::size_t i : it->second) out.push_back(records_[i]);
  return out;
}

}  // namespace aicollab
