#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace instruct_icl {

enum class ErrorCode {
  // dataset
  FileNotFound,
  MalformedRecord,
  DuplicateQuestionId,
  GroundTruthNotInOptions,
  Unmappable,
  // vector index
  DimensionMismatch,
  ZeroNormVector,
  NonFiniteVector,
  DuplicateImageId,
  EmptyIndexAfterExclusion,
  IoError,
  CorruptIndexFile,
  UnsupportedFormatVersion,
  // exemplar selection
  EmptyPool,
  IndexMissingImage,
  // prompting
  TemplateError,
  MissingInstruction,
  MissingAnswerTags,
  UnterminatedTag,
  EmptyAnswer,
  // backends
  AuthMissing,
  Transport,
  RateLimited,
  ImageUnreadable,
  NoRuleForTag,
  FixtureAssertionFailed,
  // evaluation
  IncompleteRun,
  MismatchedEvalSets,
  RunDirectory,
  // cli / config
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

// Every library failure surfaces as this exception; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace instruct_icl
