#include "instruct_icl/error.hpp"

namespace instruct_icl {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateQuestionId: return "DuplicateQuestionId";
    case ErrorCode::GroundTruthNotInOptions: return "GroundTruthNotInOptions";
    case ErrorCode::Unmappable: return "Unmappable";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroNormVector: return "ZeroNormVector";
    case ErrorCode::NonFiniteVector: return "NonFiniteVector";
    case ErrorCode::DuplicateImageId: return "DuplicateImageId";
    case ErrorCode::EmptyIndexAfterExclusion: return "EmptyIndexAfterExclusion";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::CorruptIndexFile: return "CorruptIndexFile";
    case ErrorCode::UnsupportedFormatVersion: return "UnsupportedFormatVersion";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::IndexMissingImage: return "IndexMissingImage";
    case ErrorCode::TemplateError: return "TemplateError";
    case ErrorCode::MissingInstruction: return "MissingInstruction";
    case ErrorCode::MissingAnswerTags: return "MissingAnswerTags";
    case ErrorCode::UnterminatedTag: return "UnterminatedTag";
    case ErrorCode::EmptyAnswer: return "EmptyAnswer";
    case ErrorCode::AuthMissing: return "AuthMissing";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::ImageUnreadable: return "ImageUnreadable";
    case ErrorCode::NoRuleForTag: return "NoRuleForTag";
    case ErrorCode::FixtureAssertionFailed: return "FixtureAssertionFailed";
    case ErrorCode::IncompleteRun: return "IncompleteRun";
    case ErrorCode::MismatchedEvalSets: return "MismatchedEvalSets";
    case ErrorCode::RunDirectory: return "RunDirectory";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace instruct_icl
