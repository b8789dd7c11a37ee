#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "instruct_icl/backends.hpp"
#include "instruct_icl/dataset.hpp"
#include "instruct_icl/prompting.hpp"
#include "instruct_icl/vector_index.hpp"

namespace instruct_icl::eval {

enum class ItemStatus { Answered, Unanswered, BackendFailed };

std::string_view to_string(ItemStatus status);

struct Transcript {
  std::string question_id;
  data::QuestionType question_type = data::QuestionType::BuildingCondition;
  std::string ground_truth;
  prompting::Strategy strategy = prompting::Strategy::ZeroShot;

  std::vector<std::string> exemplar_question_ids;
  std::vector<std::string> missing_classes;

  std::optional<std::string> stage1_request;
  std::optional<std::string> stage1_response;
  std::string stage2_request;
  std::vector<std::string> stage2_images;
  std::string stage2_response;
  int repair_attempts = 0;
  std::optional<std::string> repair_response;

  std::optional<std::string> extracted_answer;
  std::optional<std::string> normalized_answer;
  ItemStatus status = ItemStatus::BackendFailed;
  bool correct = false;
  std::string error;

  bool operator==(const Transcript&) const = default;
};

std::string transcript_to_json(const Transcript& t);
Transcript transcript_from_json(std::string_view text);

// File name under transcripts/ for a question id; unsafe bytes are %XX-escaped.
std::string transcript_filename(std::string_view question_id);

// One item through retrieval, both stages, extraction and scoring. Never
// throws: any failure becomes a BackendFailed transcript carrying the error.
Transcript evaluate_item(const data::QARecord& record, const data::Dataset& pool,
                         const retrieval::EmbeddingIndex& index, prompting::Strategy strategy,
                         backends::ModelClient& client, const prompting::PromptTemplateSet& templates,
                         const prompting::PromptOptions& options);

struct RunOptions {
  std::filesystem::path run_dir;
  int parallelism = 1;
  prompting::PromptOptions prompt;
  // Stop after this many newly processed items (simulates an interrupted run).
  std::optional<std::size_t> max_new_items;
};

struct RunSummary {
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::size_t answered = 0;
  std::size_t unanswered = 0;
  std::size_t backend_failed = 0;
  bool complete = false;
};

// Writes meta.json and transcripts/<id>.json; items that already have a
// transcript are skipped. When every item has a transcript, report.json and
// report.csv are (re)written. Throws RunDirectory when the directory is
// unwritable or belongs to a different run.
RunSummary run_evaluation(const data::Dataset& eval_set, const data::Dataset& pool,
                          const retrieval::EmbeddingIndex& index, prompting::Strategy strategy,
                          backends::ModelClient& client, const prompting::PromptTemplateSet& templates,
                          const RunOptions& options);

struct TypeRow {
  std::string label;
  std::size_t total = 0;
  std::size_t answered = 0;
  std::size_t unanswered = 0;
  std::size_t backend_failed = 0;
  std::size_t correct = 0;

  // 100 * correct / total to two decimals, half-up, as basis points.
  std::optional<std::int64_t> accuracy_bp() const;
  // "75.00", or "n/a" for an empty row.
  std::string accuracy_percent() const;
};

std::optional<std::int64_t> accuracy_basis_points(std::size_t correct, std::size_t total);
std::string format_basis_points(std::int64_t bp);

struct Session {
  std::string started_at;
  std::string finished_at;
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::size_t backend_attempts = 0;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  std::size_t failures = 0;
};

struct EvaluationReport {
  std::string strategy;
  std::string backend;
  std::string model_id;
  std::string template_version;
  std::string eval_digest;
  // Seven rows in report order, then overall.
  std::vector<TypeRow> rows;
  TypeRow overall;
  // Volatile run history from meta.json; not part of report.json/csv.
  std::vector<Session> sessions;
};

// Throws IncompleteRun listing the missing ids.
EvaluationReport aggregate(const std::filesystem::path& run_dir);
// Aggregates transcripts in memory, in the order given.
EvaluationReport aggregate_transcripts(const std::vector<Transcript>& transcripts);

std::string report_json(const EvaluationReport& report);
std::string report_csv(const EvaluationReport& report);
void write_report(const std::filesystem::path& run_dir, const EvaluationReport& report);

struct ComparisonTable {
  std::string eval_digest;
  std::vector<std::string> columns;
  struct Row {
    std::string label;
    std::vector<std::string> cells;
    std::vector<std::string> best;
  };
  std::vector<Row> rows;
};

// Throws MismatchedEvalSets.
ComparisonTable compare(const std::vector<EvaluationReport>& reports);
std::string comparison_csv(const ComparisonTable& table);
std::string comparison_json(const ComparisonTable& table);

}  // namespace instruct_icl::eval
