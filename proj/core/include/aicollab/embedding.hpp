#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aicollab {

// Fixed-dimension dense vector of finite reals.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  // Throws ParameterError on an empty vector or a non-finite entry.
  explicit EmbeddingVector(std::vector<double> values);

  static EmbeddingVector zeros(std::size_t dimension);

  std::size_t dimension() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double norm() const noexcept;
  bool is_zero() const noexcept;

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<double> values_;
};

// Text -> vector. Implementations must be deterministic for a fixed
// configuration and safe to call concurrently.
class Embedder {
 public:
  virtual ~Embedder() = default;

  virtual std::size_t dimension() const = 0;
  // Identifies the embedding space; vectors from different versions are never compared.
  virtual std::string version() const = 0;

  // Throws ParameterError on blank text.
  virtual EmbeddingVector embed_text(std::string_view text) const = 0;

  // Element i equals embed_text(texts[i]). An invalid element raises a
  // ParameterError naming its index before any work is done.
  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const;

 protected:
  static void validate_batch(std::span<const std::string> texts);
};

// Bag-of-tokens hashing embedder: tokens are maximal runs of ASCII
// alphanumerics (bytes >= 0x80 count as word characters), lowercased, hashed
// with 64-bit FNV-1a into `dimension` buckets, counted, then L2-normalized.
class LocalHashEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kDefaultDimension = 4096;
  static constexpr std::string_view kHashVersion = "fnv1a64-v1";

  explicit LocalHashEmbedder(std::size_t dimension = kDefaultDimension);

  std::size_t dimension() const override { return dimension_; }
  std::string version() const override;
  EmbeddingVector embed_text(std::string_view text) const override;

  // Exposed so tests can construct collision-free token sets.
  std::size_t bucket_of(std::string_view token) const;
  static std::vector<std::string> tokenize(std::string_view text);

 private:
  std::size_t dimension_;
};

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace aicollab
