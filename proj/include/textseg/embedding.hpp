#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace textseg {

inline constexpr std::size_t kEmbeddingDim = 768;

using TextEmbedding = std::vector<double>;

/// N x E, row-major.
struct EmbeddingBatch {
  std::size_t rows = 0;
  std::size_t dim = kEmbeddingDim;
  std::vector<double> values;

  std::vector<double> row(std::size_t i) const {
    return {values.begin() + static_cast<std::ptrdiff_t>(i * dim),
            values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim)};
  }
};

std::uint64_t fnv1a64(std::string_view bytes);

/// SplitMix64 (Steele, Lea & Flood), seeded directly with the state.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Frozen stand-in encoder: every token seeds a SplitMix64 stream with its
/// FNV-1a hash and draws E values in [-1, 1); the embedding is the
/// L2-normalized mean over tokens. Throws EmptyPrompt if there are no tokens.
TextEmbedding embed_hashed(std::string_view text, std::size_t dim = kEmbeddingDim);

/// Embeddings imported from a file: header `E=<dim>`, then
/// `<key>\t<v1> <v2> ... <vE>` per line.
class EmbeddingTable {
 public:
  static EmbeddingTable load(const std::string& path);
  static EmbeddingTable parse(std::string_view text);

  void insert(const std::string& key, std::vector<double> values);
  std::string serialize() const;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  const std::vector<double>* find(const std::string& key) const;

 private:
  std::size_t dim_ = kEmbeddingDim;
  std::map<std::string, std::vector<double>> table_;
};

/// Trims and collapses whitespace runs to single spaces.
std::string normalize_whitespace(std::string_view text);

TextEmbedding embed_lookup(std::string_view text, const EmbeddingTable& table);

/// Frozen text encoder interface.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual TextEmbedding embed(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
};

class HashedEncoder final : public TextEncoder {
 public:
  explicit HashedEncoder(std::size_t dim = kEmbeddingDim) : dim_(dim) {}
  TextEmbedding embed(std::string_view text) const override { return embed_hashed(text, dim_); }
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
};

class LookupEncoder final : public TextEncoder {
 public:
  explicit LookupEncoder(EmbeddingTable table) : table_(std::move(table)) {}
  TextEmbedding embed(std::string_view text) const override { return embed_lookup(text, table_); }
  std::size_t dim() const override { return table_.dim(); }

 private:
  EmbeddingTable table_;
};

/// Row i = encoder.embed(texts[i]); a failing element is rethrown with its
/// index in the message and its original error code.
EmbeddingBatch embed_batch(const std::vector<std::string>& texts, const TextEncoder& encoder);

}  // namespace textseg
