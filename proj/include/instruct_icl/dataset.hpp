#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace instruct_icl::data {

enum class QuestionType {
  BuildingCondition,
  RoadCondition,
  EntireCondition,
  DensityEstimation,
  RiskAssessment,
  SimpleCounting,
  ComplexCounting,
};

// Row order used by every report: alphabetical by display label.
inline constexpr std::array<QuestionType, 7> kReportOrder = {
    QuestionType::BuildingCondition, QuestionType::ComplexCounting,
    QuestionType::DensityEstimation, QuestionType::EntireCondition,
    QuestionType::RiskAssessment,    QuestionType::RoadCondition,
    QuestionType::SimpleCounting,
};

// Enum name as written in dataset files, e.g. "BuildingCondition".
std::string_view to_string(QuestionType type);
// Human label, e.g. "Building Condition".
std::string_view display_label(QuestionType type);
std::optional<QuestionType> parse_question_type(std::string_view name);

bool is_counting(QuestionType type);

struct AnswerKind {
  enum class Kind { Categorical, Integer };

  Kind kind = Kind::Categorical;
  // Ordered, distinct, normalized. Empty for Integer.
  std::vector<std::string> options;

  static AnswerKind categorical(std::vector<std::string> options) {
    return AnswerKind{Kind::Categorical, std::move(options)};
  }
  static AnswerKind integer() { return AnswerKind{Kind::Integer, {}}; }

  bool is_integer() const { return kind == Kind::Integer; }
  bool operator==(const AnswerKind&) const = default;
};

struct QARecord {
  std::string question_id;
  std::string image_id;
  std::filesystem::path image_path;
  std::string question;
  QuestionType question_type = QuestionType::BuildingCondition;
  AnswerKind answer_kind;
  std::string ground_truth;

  bool operator==(const QARecord&) const = default;
};

// Immutable after construction. Iteration follows ingestion order.
class Dataset {
 public:
  Dataset() = default;
  // Validates every record; throws instruct_icl::Error on the first violation.
  explicit Dataset(std::vector<QARecord> records);

  const std::vector<QARecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  const QARecord* find(std::string_view question_id) const;
  const QARecord& at(std::string_view question_id) const;
  // Indices into records() of every question asked about image_id.
  const std::vector<std::size_t>& by_image(std::string_view image_id) const;

  // Records restricted to one question type, ingestion order preserved.
  Dataset filter(QuestionType type) const;

  // SHA-256 of the canonical JSON Lines serialization.
  std::string digest() const;

  bool operator==(const Dataset& other) const { return records_ == other.records_; }

 private:
  std::vector<QARecord> records_;
  std::unordered_map<std::string, std::size_t> by_question_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_image_;
};

// Relative image paths are resolved against the dataset file's directory.
// The whole file is rejected on any invalid line.
Dataset ingest_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::string_view jsonl, const std::filesystem::path& base_dir = {});

std::string serialize_dataset(const Dataset& dataset);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Lowercase, trim, strip surrounding punctuation. Integer answers also map
// digit strings and the words zero..twenty to canonical decimal literals.
// nullopt means the answer cannot be scored, which includes an answer that is
// nothing but whitespace and punctuation.
std::optional<std::string> try_normalize_answer(std::string_view raw, const AnswerKind& kind);
// Throws Error(Unmappable) where try_normalize_answer returns nullopt.
std::string normalize_answer(std::string_view raw, const AnswerKind& kind);

}  // namespace instruct_icl::data
