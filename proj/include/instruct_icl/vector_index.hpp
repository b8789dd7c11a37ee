#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace instruct_icl::retrieval {

struct EmbeddingRecord {
  std::string image_id;
  std::vector<float> vector;
};

struct SimilarityHit {
  std::string image_id;
  double score = 0.0;

  bool operator==(const SimilarityHit&) const = default;
};

enum class ScanPolicy { Serial, Parallel };

// Cosine similarity of two vectors, clamped to [-1, 1].
// Throws DimensionMismatch or ZeroNormVector.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Exact (brute-force) cosine index over a fixed set of image embeddings.
// Immutable once built; concurrent queries are safe.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;

  std::uint32_t dimension() const { return dimension_; }
  std::size_t size() const { return ids_.size(); }
  bool contains(std::string_view image_id) const;

  // Rows are kept in build order; that order is also the on-disk order.
  const std::vector<std::string>& image_ids() const { return ids_; }
  std::span<const float> vector(std::size_t row) const;
  // Throws IndexMissingImage.
  std::span<const float> vector(std::string_view image_id) const;
  std::size_t row_of(std::string_view image_id) const;

  // Hits sorted by score descending, ties by image_id ascending.
  // Returns min(k, candidates) hits; throws EmptyIndexAfterExclusion when no
  // candidate survives the exclusion set, DimensionMismatch/ZeroNormVector on
  // a bad target.
  std::vector<SimilarityHit> query_top_k(std::span<const float> target, std::size_t k,
                                         const std::set<std::string>& exclude = {},
                                         ScanPolicy policy = ScanPolicy::Parallel) const;

  bool operator==(const EmbeddingIndex& other) const;

 private:
  friend EmbeddingIndex build_index(std::vector<EmbeddingRecord> records);

  std::uint32_t dimension_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> matrix_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> rows_;
};

// Throws DimensionMismatch, DuplicateImageId, ZeroNormVector, NonFiniteVector
// naming the offending image_id.
EmbeddingIndex build_index(std::vector<EmbeddingRecord> records);

// JSON Lines: {"image_id": "...", "vector": [...]} per line.
std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path);

// Binary little-endian format:
//   "IIEX" | u32 version | u32 dimension | u64 count |
//   count x ( u32 id_len | id bytes | dimension x f32 )
inline constexpr std::uint32_t kIndexFormatVersion = 1;

std::string serialize_index(const EmbeddingIndex& index);
EmbeddingIndex deserialize_index(std::string_view bytes);
void save_index(const EmbeddingIndex& index, const std::filesystem::path& path);
EmbeddingIndex load_index(const std::filesystem::path& path);

}  // namespace instruct_icl::retrieval
