#include "instruct_icl/vector_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <nlohmann/json.hpp>

#include "instruct_icl/error.hpp"
#include "instruct_icl/hashing.hpp"
#include "instruct_icl/kernels/similarity_scan.hpp"

namespace instruct_icl::retrieval {
namespace {

constexpr std::string_view kMagic = "IIEX";

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  template <typename T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void corrupt(const std::string& reason) const {
    throw Error(ErrorCode::CorruptIndexFile, "offset " + std::to_string(pos_) + ": " + reason);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) corrupt(std::string("truncated while reading ") + what);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  const double na = kernels::norm(a);
  const double nb = kernels::norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::ZeroNormVector, "cosine of a zero vector");
  return kernels::cosine_from_parts(kernels::dot(a, b), na, nb);
}

bool EmbeddingIndex::contains(std::string_view image_id) const {
  return rows_.contains(std::string(image_id));
}

std::span<const float> EmbeddingIndex::vector(std::size_t row) const {
  return std::span<const float>(matrix_).subspan(row * dimension_, dimension_);
}

std::size_t EmbeddingIndex::row_of(std::string_view image_id) const {
  auto it = rows_.find(std::string(image_id));
  if (it == rows_.end()) throw Error(ErrorCode::IndexMissingImage, std::string(image_id));
  return it->second;
}

std::span<const float> EmbeddingIndex::vector(std::string_view image_id) const {
  return vector(row_of(image_id));
}

std::vector<SimilarityHit> EmbeddingIndex::query_top_k(std::span<const float> target, std::size_t k,
                                                       const std::set<std::string>& exclude,
                                                       ScanPolicy policy) const {
  if (target.size() != dimension_) {
    throw Error(ErrorCode::DimensionMismatch, "target has " + std::to_string(target.size()) +
                                                  " components, index has " + std::to_string(dimension_));
  }
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "k must be at least 1");
  const double target_norm = kernels::norm(target);
  if (!all_finite(target)) throw Error(ErrorCode::NonFiniteVector, "query target");
  if (!(target_norm > 0.0)) throw Error(ErrorCode::ZeroNormVector, "query target");

  std::vector<double> scores(ids_.size());
  if (policy == ScanPolicy::Parallel) {
    kernels::score_rows_parallel(matrix_, norms_, target, target_norm, scores);
  } else {
    kernels::score_rows_serial(matrix_, norms_, target, target_norm, scores);
  }

  std::vector<std::size_t> candidates;
  candidates.reserve(ids_.size());
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    if (!exclude.contains(ids_[r])) candidates.push_back(r);
  }
  if (candidates.empty()) {
    throw Error(ErrorCode::EmptyIndexAfterExclusion, std::to_string(exclude.size()) + " ids excluded");
  }

  auto ranks_before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids_[a] < ids_[b];
  };
  const std::size_t n = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                    candidates.end(), ranks_before);

  std::vector<SimilarityHit> hits;
  hits.reserve(n);
  for (std::size_t i = 0; i < n; ++i) hits.push_back({ids_[candidates[i]], scores[candidates[i]]});
  return hits;
}

bool EmbeddingIndex::operator==(const EmbeddingIndex& other) const {
  if (dimension_ != other.dimension_ || ids_ != other.ids_ || matrix_.size() != other.matrix_.size()) {
    return false;
  }
  // Bitwise comparison so -0.0f and +0.0f are distinguished.
  for (std::size_t i = 0; i < matrix_.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(matrix_[i]) != std::bit_cast<std::uint32_t>(other.matrix_[i])) {
      return false;
    }
  }
  return true;
}

EmbeddingIndex build_index(std::vector<EmbeddingRecord> records) {
  EmbeddingIndex index;
  if (records.empty()) return index;
  const auto dim = records.front().vector.size();
  if (dim == 0 || dim > UINT32_MAX) throw Error(ErrorCode::DimensionMismatch, records.front().image_id);
  index.dimension_ = static_cast<std::uint32_t>(dim);
  index.ids_.reserve(records.size());
  index.matrix_.reserve(records.size() * dim);
  index.norms_.reserve(records.size());

  for (auto& rec : records) {
    if (rec.vector.size() != dim) {
      throw Error(ErrorCode::DimensionMismatch, rec.image_id + " has dimension " +
                                                    std::to_string(rec.vector.size()) + ", expected " +
                                                    std::to_string(dim));
    }
    if (!all_finite(rec.vector)) throw Error(ErrorCode::NonFiniteVector, rec.image_id);
    const double n = kernels::norm(rec.vector);
    if (!(n > 0.0)) throw Error(ErrorCode::ZeroNormVector, rec.image_id);
    if (!index.rows_.emplace(rec.image_id, index.ids_.size()).second) {
      throw Error(ErrorCode::DuplicateImageId, rec.image_id);
    }
    index.ids_.push_back(std::move(rec.image_id));
    index.matrix_.insert(index.matrix_.end(), rec.vector.begin(), rec.vector.end());
    index.norms_.push_back(n);
  }
  return index;
}

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::FileNotFound, path.string());
  const auto text = read_file_bytes(path);
  std::vector<EmbeddingRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    auto fail = [&](const std::string& reason) -> void {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": " + reason);
    };
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object() || !obj.contains("image_id") || !obj["image_id"].is_string() ||
        !obj.contains("vector") || !obj["vector"].is_array()) {
      fail("expected {\"image_id\": string, \"vector\": [numbers]}");
    }
    EmbeddingRecord rec;
    rec.image_id = obj["image_id"].get<std::string>();
    rec.vector.reserve(obj["vector"].size());
    for (const auto& v : obj["vector"]) {
      if (!v.is_number()) fail("non-numeric component in " + rec.image_id);
      rec.vector.push_back(v.get<float>());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::string serialize_index(const EmbeddingIndex& index) {
  std::string out;
  out.reserve(20 + index.size() * (8 + 4 * index.dimension()));
  out.append(kMagic);
  put_le<std::uint32_t>(out, kIndexFormatVersion);
  put_le<std::uint32_t>(out, index.dimension());
  put_le<std::uint64_t>(out, index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto& id = index.image_ids()[r];
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.append(id);
    for (float v : index.vector(r)) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

EmbeddingIndex deserialize_index(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size(), "magic") != kMagic) {
    throw Error(ErrorCode::CorruptIndexFile, "offset 0: bad magic");
  }
  const auto version = in.get_le<std::uint32_t>("format version");
  if (version != kIndexFormatVersion) {
    throw Error(ErrorCode::UnsupportedFormatVersion,
                "file version " + std::to_string(version) + ", supported " +
                    std::to_string(kIndexFormatVersion));
  }
  const auto dim = in.get_le<std::uint32_t>("dimension");
  const auto count = in.get_le<std::uint64_t>("record count");
  if (count > 0 && dim == 0) in.corrupt("zero dimension with non-empty record set");
  // Each record is at least a length prefix plus its components.
  const std::uint64_t min_record = 4 + 4ull * dim;
  if (count > in.remaining() / min_record) in.corrupt("record count exceeds file size");

  std::vector<EmbeddingRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id_len = in.get_le<std::uint32_t>("id length");
    EmbeddingRecord rec;
    rec.image_id = std::string(in.take(id_len, "image id"));
    rec.vector.resize(dim);
    for (auto& v : rec.vector) v = std::bit_cast<float>(in.get_le<std::uint32_t>("vector component"));
    records.push_back(std::move(rec));
  }
  if (in.remaining() != 0) in.corrupt(std::to_string(in.remaining()) + " trailing bytes");

  try {
    return build_index(std::move(records));
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptIndexFile, "invalid record: " + std::string(e.what()));
  }
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_index(index));
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return deserialize_index(read_file_bytes(path));
}

}  // namespace instruct_icl::retrieval
