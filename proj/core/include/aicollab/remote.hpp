#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>

#include "aicollab/embedding.hpp"
#include "aicollab/llm.hpp"
#include "aicollab/retry.hpp"

namespace aicollab {

// Receives request/response bodies for audit. Credentials travel in headers
// and never reach the sink.
using AuditSink = std::function<void(std::string_view direction, std::string_view body)>;

struct RemoteEndpoint {
  std::string base_url;  // e.g. "https://api.openai.com/v1"
  std::string api_key;
  std::chrono::milliseconds timeout{30000};
};

// Chat-completions over JSON/HTTPS. POSTs {base_url}/chat/completions.
class RemoteChatBackend final : public ChatBackend {
 public:
  explicit RemoteChatBackend(RemoteEndpoint endpoint, AuditSink audit = {});

  std::string name() const override { return "remote"; }
  CompletionResult complete_once(const CompletionRequest& request) override;

 private:
  RemoteEndpoint endpoint_;
  AuditSink audit_;
};

struct RemoteEmbedderConfig {
  RemoteEndpoint endpoint;
  std::string model = "text-embedding-3-small";
  std::size_t dimension = 1536;
  RetryPolicy retry;
  std::size_t max_concurrent = 4;
};

// Embeddings over JSON/HTTPS. POSTs {base_url}/embeddings with
// {"model", "input": [...]}; accepts either {"data": [{"embedding": [...]}]}
// or a bare array of float arrays in response.
class RemoteEmbedder final : public Embedder {
 public:
  explicit RemoteEmbedder(RemoteEmbedderConfig config, Sleeper sleeper = {});

  std::size_t dimension() const override { return config_.dimension; }
  std::string version() const override { return "remote-" + config_.model + "-d" + std::to_string(config_.dimension); }
  EmbeddingVector embed_text(std::string_view text) const override;
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override;

 private:
  std::vector<EmbeddingVector> request(std::span<const std::string> texts) const;

  RemoteEmbedderConfig config_;
  mutable Retrier retrier_;
  mutable std::mutex slots_mutex_;
  mutable std::condition_variable slots_cv_;
  mutable std::size_t active_ = 0;
};

// Parses an embeddings response body; exposed for tests.
std::vector<EmbeddingVector> parse_embeddings_response(std::string_view body, std::size_t expected_count,
                                                       std::size_t dimension);

}  // namespace aicollab
