#include "aicollab/embedding.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>

#include "aicollab/error.hpp"
#include "aicollab/text.hpp"

namespace aicollab {

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw ParameterError("embedding must have a positive dimension");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw ParameterError("embedding entry " + std::to_string(i) + " is not finite");
    }
  }
}

EmbeddingVector EmbeddingVector::zeros(std::size_t dimension) {
  return EmbeddingVector(std::vector<double>(dimension, 0.0));
}

double EmbeddingVector::norm() const noexcept {
  double sum = 0.0;
  for (double v : values_) sum += v * v;
  return std::sqrt(sum);
}

bool EmbeddingVector::is_zero() const noexcept {
  for (double v : values_) {
    if (v != 0.0) return false;
  }
  return true;
}

void Embedder::validate_batch(std::span<const std::string> texts) {
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (text::is_blank(texts[i])) {
      throw ParameterError("embed_batch: text at index " + std::to_string(i) + " is empty");
    }
  }
}

std::vector<EmbeddingVector> Embedder::embed_batch(std::span<const std::string> texts) const {
  validate_batch(texts);
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_text(t));
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

LocalHashEmbedder::LocalHashEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw ParameterError("embedder dimension must be positive");
}

std::string LocalHashEmbedder::version() const {
  return "local-" + std::string(kHashVersion) + "-d" + std::to_string(dimension_);
}

std::vector<std::string> LocalHashEmbedder::tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool word = c >= 0x80 || std::isalnum(c);
    if (word) {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::size_t LocalHashEmbedder::bucket_of(std::string_view token) const {
  return static_cast<std::size_t>(fnv1a64(token) % dimension_);
}

EmbeddingVector LocalHashEmbedder::embed_text(std::string_view text) const {
  if (text::is_blank(text)) throw ParameterError("embed_text: text is empty");
  std::vector<double> counts(dimension_, 0.0);
  for (const auto& token : tokenize(text)) counts[bucket_of(token)] += 1.0;
  double sum = 0.0;
  for (double v : counts) sum += v * v;
  // Punctuation-only input has no tokens and stays the zero vector.
  if (sum > 0.0) {
    const double inv = 1.0 / std::sqrt(sum);
    for (double& v : counts) v *= inv;
  }
  return EmbeddingVector(std::move(counts));
}

}  // namespace aicollab
