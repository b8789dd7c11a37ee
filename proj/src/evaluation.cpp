#include "instruct_icl/evaluation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <thread>

#include "instruct_icl/exemplars.hpp"
#include "instruct_icl/hashing.hpp"

namespace instruct_icl::eval {
namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr int kMetaFormat = 1;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <typename T>
void put_optional(ordered_json& j, const char* key, const std::optional<T>& v) {
  if (v) {
    j[key] = *v;
  } else {
    j[key] = nullptr;
  }
}

std::optional<std::string> get_optional(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

bool is_tag_failure(const Error& e) {
  return e.code() == ErrorCode::MissingAnswerTags || e.code() == ErrorCode::UnterminatedTag;
}

ordered_json run_identity(const data::Dataset& eval_set, const data::Dataset& pool,
                          prompting::Strategy strategy, const backends::ModelClient& client,
                          const prompting::PromptTemplateSet& templates,
                          const prompting::PromptOptions& prompt) {
  ordered_json j;
  j["format"] = kMetaFormat;
  j["strategy"] = std::string(prompting::to_string(strategy));
  j["backend"] = std::string(backends::to_string(client.kind()));
  j["model_id"] = client.config().model_id;
  j["template_version"] = templates.version();
  j["template_digest"] = templates.digest();
  j["eval_digest"] = eval_set.digest();
  j["pool_digest"] = pool.digest();
  j["prompt"] = {{"temperature", prompt.decode.temperature},
                 {"max_output_tokens", prompt.decode.max_output_tokens},
                 {"attach_exemplar_images", prompt.attach_exemplar_images}};
  ordered_json items = ordered_json::array();
  for (const auto& r : eval_set) {
    items.push_back({{"question_id", r.question_id},
                     {"question_type", std::string(data::to_string(r.question_type))}});
  }
  j["items"] = std::move(items);
  return j;
}

ordered_json session_json(const Session& s) {
  return {{"started_at", s.started_at},       {"finished_at", s.finished_at},
          {"processed", s.processed},         {"skipped", s.skipped},
          {"backend_attempts", s.backend_attempts}, {"cache_hits", s.cache_hits},
          {"cache_misses", s.cache_misses},   {"failures", s.failures}};
}

Session session_from_json(const ordered_json& j) {
  Session s;
  s.started_at = j.value("started_at", "");
  s.finished_at = j.value("finished_at", "");
  s.processed = j.value("processed", std::size_t{0});
  s.skipped = j.value("skipped", std::size_t{0});
  s.backend_attempts = j.value("backend_attempts", std::size_t{0});
  s.cache_hits = j.value("cache_hits", std::size_t{0});
  s.cache_misses = j.value("cache_misses", std::size_t{0});
  s.failures = j.value("failures", std::size_t{0});
  return s;
}

ordered_json read_json_file(const fs::path& path) {
  try {
    return ordered_json::parse(read_file_bytes(path));
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::RunDirectory, path.string() + ": " + e.what());
  }
}

ordered_json row_json(const TypeRow& r) {
  return {{"question_type", r.label},           {"total", r.total},
          {"answered", r.answered},             {"unanswered", r.unanswered},
          {"backend_failed", r.backend_failed}, {"correct", r.correct},
          {"accuracy_percent", r.accuracy_percent()}};
}

void tally(TypeRow& row, const Transcript& t) {
  ++row.total;
  switch (t.status) {
    case ItemStatus::Answered: ++row.answered; break;
    case ItemStatus::Unanswered: ++row.unanswered; break;
    case ItemStatus::BackendFailed: ++row.backend_failed; break;
  }
  if (t.correct) ++row.correct;
}

}  // namespace

std::string_view to_string(ItemStatus status) {
  switch (status) {
    case ItemStatus::Answered: return "Answered";
    case ItemStatus::Unanswered: return "Unanswered";
    case ItemStatus::BackendFailed: return "BackendFailed";
  }
  return "Unknown";
}

std::string transcript_to_json(const Transcript& t) {
  ordered_json j;
  j["question_id"] = t.question_id;
  j["question_type"] = std::string(data::to_string(t.question_type));
  j["ground_truth"] = t.ground_truth;
  j["strategy"] = std::string(prompting::to_string(t.strategy));
  j["exemplar_question_ids"] = t.exemplar_question_ids;
  j["missing_classes"] = t.missing_classes;
  put_optional(j, "stage1_request", t.stage1_request);
  put_optional(j, "stage1_response", t.stage1_response);
  j["stage2_request"] = t.stage2_request;
  j["stage2_images"] = t.stage2_images;
  j["stage2_response"] = t.stage2_response;
  j["repair_attempts"] = t.repair_attempts;
  put_optional(j, "repair_response", t.repair_response);
  put_optional(j, "extracted_answer", t.extracted_answer);
  put_optional(j, "normalized_answer", t.normalized_answer);
  j["status"] = std::string(to_string(t.status));
  j["correct"] = t.correct;
  j["error"] = t.error;
  return j.dump(2) + "\n";
}

Transcript transcript_from_json(std::string_view text) {
  const auto j = ordered_json::parse(text);
  Transcript t;
  t.question_id = j.at("question_id").get<std::string>();
  const auto type = data::parse_question_type(j.at("question_type").get<std::string>());
  if (!type) throw Error(ErrorCode::RunDirectory, "bad question_type in transcript " + t.question_id);
  t.question_type = *type;
  t.ground_truth = j.at("ground_truth").get<std::string>();
  const auto strategy = prompting::parse_strategy(j.at("strategy").get<std::string>());
  if (!strategy) throw Error(ErrorCode::RunDirectory, "bad strategy in transcript " + t.question_id);
  t.strategy = *strategy;
  t.exemplar_question_ids = j.at("exemplar_question_ids").get<std::vector<std::string>>();
  t.missing_classes = j.at("missing_classes").get<std::vector<std::string>>();
  t.stage1_request = get_optional(j, "stage1_request");
  t.stage1_response = get_optional(j, "stage1_response");
  t.stage2_request = j.at("stage2_request").get<std::string>();
  t.stage2_images = j.at("stage2_images").get<std::vector<std::string>>();
  t.stage2_response = j.at("stage2_response").get<std::string>();
  t.repair_attempts = j.at("repair_attempts").get<int>();
  t.repair_response = get_optional(j, "repair_response");
  t.extracted_answer = get_optional(j, "extracted_answer");
  t.normalized_answer = get_optional(j, "normalized_answer");
  const auto status = j.at("status").get<std::string>();
  if (status == "Answered") {
    t.status = ItemStatus::Answered;
  } else if (status == "Unanswered") {
    t.status = ItemStatus::Unanswered;
  } else if (status == "BackendFailed") {
    t.status = ItemStatus::BackendFailed;
  } else {
    throw Error(ErrorCode::RunDirectory, "bad status in transcript " + t.question_id);
  }
  t.correct = j.at("correct").get<bool>();
  t.error = j.value("error", "");
  return t;
}

std::string transcript_filename(std::string_view question_id) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (char c : question_id) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '-' || c == '_' || (c == '.' && !out.empty())) {
      out.push_back(c);
    } else {
      out.push_back('%');
      out.push_back(kHex[u >> 4]);
      out.push_back(kHex[u & 0x0f]);
    }
  }
  return out + ".json";
}

Transcript evaluate_item(const data::QARecord& record, const data::Dataset& pool,
                         const retrieval::EmbeddingIndex& index, prompting::Strategy strategy,
                         backends::ModelClient& client, const prompting::PromptTemplateSet& templates,
                         const prompting::PromptOptions& options) {
  Transcript t;
  t.question_id = record.question_id;
  t.question_type = record.question_type;
  t.ground_truth = record.ground_truth;
  t.strategy = strategy;

  try {
    const auto set = exemplars::select_exemplars(record, pool, index);
    for (const auto& e : set.exemplars) t.exemplar_question_ids.push_back(e.question_id);
    t.missing_classes = set.missing_classes;
    if (!set.missing_classes.empty()) {
      std::string missing;
      for (const auto& m : set.missing_classes) missing += (missing.empty() ? "" : ", ") + m;
      spdlog::warn("{}: no exemplar for answer(s) {}", record.question_id, missing);
    }

    std::optional<std::string> instruction;
    if (auto stage1 = prompting::build_stage1(record, strategy, set, templates, options)) {
      t.stage1_request = stage1->text;
      instruction = client.complete(*stage1).text;
      t.stage1_response = instruction;
    }

    const auto stage2 = prompting::build_stage2(record, strategy, instruction, set, templates, options);
    t.stage2_request = stage2.text;
    for (const auto& p : stage2.images) t.stage2_images.push_back(p.generic_string());
    t.stage2_response = client.complete(stage2).text;

    std::optional<std::string> raw;
    try {
      raw = prompting::extract_answer(t.stage2_response);
    } catch (const Error& e) {
      if (!is_tag_failure(e)) {
        if (e.code() != ErrorCode::EmptyAnswer) throw;
        t.error = e.what();
      } else {
        t.repair_attempts = 1;
        t.repair_response = client.complete(prompting::make_repair_request(stage2, templates)).text;
        try {
          raw = prompting::extract_answer(*t.repair_response);
        } catch (const Error& again) {
          if (!is_tag_failure(again) && again.code() != ErrorCode::EmptyAnswer) throw;
          t.error = again.what();
        }
      }
    }

    if (!raw) {
      t.status = ItemStatus::Unanswered;
      t.correct = false;
      return t;
    }
    t.extracted_answer = raw;
    t.normalized_answer = data::try_normalize_answer(*raw, record.answer_kind);
    t.status = ItemStatus::Answered;
    t.correct = t.normalized_answer && *t.normalized_answer == record.ground_truth;
    if (!t.normalized_answer) t.error = "Unmappable: " + *raw;
  } catch (const std::exception& e) {
    t.status = ItemStatus::BackendFailed;
    t.correct = false;
    t.error = e.what();
  }
  return t;
}

RunSummary run_evaluation(const data::Dataset& eval_set, const data::Dataset& pool,
                          const retrieval::EmbeddingIndex& index, prompting::Strategy strategy,
                          backends::ModelClient& client, const prompting::PromptTemplateSet& templates,
                          const RunOptions& options) {
  const auto& dir = options.run_dir;
  const auto transcripts_dir = dir / "transcripts";
  const auto meta_path = dir / "meta.json";
  std::error_code ec;
  fs::create_directories(transcripts_dir, ec);
  if (ec) throw Error(ErrorCode::RunDirectory, "cannot create " + transcripts_dir.string() + ": " + ec.message());

  const auto identity = run_identity(eval_set, pool, strategy, client, templates, options.prompt);
  ordered_json meta = identity;
  meta["sessions"] = ordered_json::array();
  if (fs::exists(meta_path)) {
    auto existing = read_json_file(meta_path);
    for (const auto& [key, value] : identity.items()) {
      if (!existing.contains(key) || existing[key] != value) {
        throw Error(ErrorCode::RunDirectory,
                    dir.string() + " holds a different run (" + key + " differs); use a new --run-dir");
      }
    }
    if (existing.contains("sessions")) meta["sessions"] = existing["sessions"];
  } else {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().filename() != "transcripts" || !fs::is_empty(entry.path())) {
        throw Error(ErrorCode::RunDirectory, dir.string() + " is neither empty nor a resumable run");
      }
    }
  }

  Session session;
  session.started_at = utc_now();
  try {
    write_file_atomic(meta_path, meta.dump(2) + "\n");
  } catch (const Error& e) {
    throw Error(ErrorCode::RunDirectory, e.what());
  }

  std::vector<const data::QARecord*> todo;
  for (const auto& r : eval_set) {
    if (fs::exists(transcripts_dir / transcript_filename(r.question_id))) {
      ++session.skipped;
    } else {
      todo.push_back(&r);
    }
  }
  const std::size_t budget = std::min(todo.size(), options.max_new_items.value_or(todo.size()));
  const auto before = client.stats();

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> answered{0}, unanswered{0}, failed{0};
  std::mutex error_mu;
  std::optional<Error> fatal;

  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= budget) return;
      {
        std::lock_guard lock(error_mu);
        if (fatal) return;
      }
      const auto& record = *todo[i];
      const auto t = evaluate_item(record, pool, index, strategy, client, templates, options.prompt);
      switch (t.status) {
        case ItemStatus::Answered: ++answered; break;
        case ItemStatus::Unanswered: ++unanswered; break;
        case ItemStatus::BackendFailed:
          ++failed;
          spdlog::warn("{}: {}", record.question_id, t.error);
          break;
      }
      try {
        write_file_atomic(transcripts_dir / transcript_filename(record.question_id), transcript_to_json(t));
      } catch (const Error& e) {
        std::lock_guard lock(error_mu);
        if (!fatal) fatal.emplace(ErrorCode::RunDirectory, e.what());
        return;
      }
    }
  };

  const int threads = std::max(1, std::min<int>(options.parallelism, static_cast<int>(std::max<std::size_t>(budget, 1))));
  {
    std::vector<std::jthread> pool_threads;
    for (int i = 0; i < threads; ++i) pool_threads.emplace_back(worker);
  }
  if (fatal) throw *fatal;

  const auto after = client.stats();
  RunSummary summary;
  summary.processed = budget;
  summary.skipped = session.skipped;
  summary.answered = answered;
  summary.unanswered = unanswered;
  summary.backend_failed = failed;

  session.processed = budget;
  session.finished_at = utc_now();
  session.backend_attempts = after.attempts - before.attempts;
  session.cache_hits = after.cache_hits - before.cache_hits;
  session.cache_misses = after.cache_misses - before.cache_misses;
  session.failures = failed;
  meta["sessions"].push_back(session_json(session));
  write_file_atomic(meta_path, meta.dump(2) + "\n");

  summary.complete = session.skipped + budget == eval_set.size();
  if (summary.complete) write_report(dir, aggregate(dir));
  return summary;
}

std::optional<std::int64_t> accuracy_basis_points(std::size_t correct, std::size_t total) {
  if (total == 0) return std::nullopt;
  // round_half_up(10000 * correct / total) in integers.
  const auto c = static_cast<std::int64_t>(correct);
  const auto t = static_cast<std::int64_t>(total);
  return (20000 * c + t) / (2 * t);
}

std::string format_basis_points(std::int64_t bp) {
  const auto whole = bp / 100;
  const auto frac = bp % 100;
  return std::to_string(whole) + "." + (frac < 10 ? "0" : "") + std::to_string(frac);
}

std::optional<std::int64_t> TypeRow::accuracy_bp() const { return accuracy_basis_points(correct, total); }

std::string TypeRow::accuracy_percent() const {
  const auto bp = accuracy_bp();
  return bp ? format_basis_points(*bp) : "n/a";
}

EvaluationReport aggregate_transcripts(const std::vector<Transcript>& transcripts) {
  EvaluationReport report;
  std::map<data::QuestionType, TypeRow> rows;
  for (auto type : data::kReportOrder) rows[type].label = std::string(data::display_label(type));
  report.overall.label = "Overall";
  for (const auto& t : transcripts) {
    tally(rows[t.question_type], t);
    tally(report.overall, t);
  }
  for (auto type : data::kReportOrder) report.rows.push_back(rows[type]);
  if (!transcripts.empty()) report.strategy = std::string(prompting::to_string(transcripts.front().strategy));
  return report;
}

EvaluationReport aggregate(const fs::path& run_dir) {
  const auto meta_path = run_dir / "meta.json";
  if (!fs::is_regular_file(meta_path)) {
    throw Error(ErrorCode::RunDirectory, "no meta.json in " + run_dir.string());
  }
  const auto meta = read_json_file(meta_path);

  std::vector<Transcript> transcripts;
  std::vector<std::string> missing;
  for (const auto& item : meta.at("items")) {
    const auto qid = item.at("question_id").get<std::string>();
    const auto path = run_dir / "transcripts" / transcript_filename(qid);
    if (!fs::is_regular_file(path)) {
      missing.push_back(qid);
      continue;
    }
    try {
      transcripts.push_back(transcript_from_json(read_file_bytes(path)));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::RunDirectory, path.string() + ": " + e.what());
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) list += ", ...";
    throw Error(ErrorCode::IncompleteRun, std::to_string(missing.size()) + " missing transcript(s): " + list);
  }

  auto report = aggregate_transcripts(transcripts);
  report.strategy = meta.at("strategy").get<std::string>();
  report.backend = meta.at("backend").get<std::string>();
  report.model_id = meta.at("model_id").get<std::string>();
  report.template_version = meta.at("template_version").get<std::string>();
  report.eval_digest = meta.at("eval_digest").get<std::string>();
  if (meta.contains("sessions")) {
    for (const auto& s : meta["sessions"]) report.sessions.push_back(session_from_json(s));
  }
  return report;
}

std::string report_json(const EvaluationReport& report) {
  ordered_json j;
  j["strategy"] = report.strategy;
  j["backend"] = report.backend;
  j["model_id"] = report.model_id;
  j["template_version"] = report.template_version;
  j["eval_digest"] = report.eval_digest;
  ordered_json rows = ordered_json::array();
  for (const auto& r : report.rows) rows.push_back(row_json(r));
  j["rows"] = std::move(rows);
  j["overall"] = row_json(report.overall);
  return j.dump(2) + "\n";
}

std::string report_csv(const EvaluationReport& report) {
  std::string out = "question_type,total,answered,correct,accuracy_percent\n";
  auto line = [&](const TypeRow& r) {
    out += r.label + "," + std::to_string(r.total) + "," + std::to_string(r.answered) + "," +
           std::to_string(r.correct) + "," + r.accuracy_percent() + "\n";
  };
  for (const auto& r : report.rows) line(r);
  line(report.overall);
  return out;
}

void write_report(const fs::path& run_dir, const EvaluationReport& report) {
  write_file_atomic(run_dir / "report.json", report_json(report));
  write_file_atomic(run_dir / "report.csv", report_csv(report));
}

ComparisonTable compare(const std::vector<EvaluationReport>& reports) {
  if (reports.empty()) throw Error(ErrorCode::InvalidConfig, "compare needs at least one report");
  ComparisonTable table;
  table.eval_digest = reports.front().eval_digest;
  std::map<std::string, int> seen;
  for (const auto& r : reports) {
    if (r.eval_digest != table.eval_digest) {
      throw Error(ErrorCode::MismatchedEvalSets, r.strategy + " run used a different eval set");
    }
    auto strategy = prompting::parse_strategy(r.strategy);
    std::string label = strategy ? std::string(prompting::display_label(*strategy)) : r.strategy;
    if (const int n = ++seen[label]; n > 1) label += " (" + std::to_string(n) + ")";
    table.columns.push_back(label);
  }

  for (std::size_t row = 0; row < data::kReportOrder.size(); ++row) {
    ComparisonTable::Row out;
    out.label = std::string(data::display_label(data::kReportOrder[row]));
    std::optional<std::int64_t> best;
    for (const auto& r : reports) {
      const auto bp = r.rows.at(row).accuracy_bp();
      out.cells.push_back(r.rows.at(row).accuracy_percent());
      if (bp && (!best || *bp > *best)) best = bp;
    }
    for (std::size_t c = 0; c < reports.size(); ++c) {
      if (best && reports[c].rows.at(row).accuracy_bp() == best) out.best.push_back(table.columns[c]);
    }
    table.rows.push_back(std::move(out));
  }
  return table;
}

std::string comparison_csv(const ComparisonTable& table) {
  std::string out = "question_type";
  for (const auto& c : table.columns) out += "," + c;
  out += ",best\n";
  for (const auto& r : table.rows) {
    out += r.label;
    for (const auto& cell : r.cells) out += "," + cell;
    out += ",";
    for (std::size_t i = 0; i < r.best.size(); ++i) out += (i ? "|" : "") + r.best[i];
    out += "\n";
  }
  return out;
}

std::string comparison_json(const ComparisonTable& table) {
  ordered_json j;
  j["eval_digest"] = table.eval_digest;
  j["columns"] = table.columns;
  ordered_json rows = ordered_json::array();
  for (const auto& r : table.rows) {
    ordered_json cells;
    for (std::size_t c = 0; c < table.columns.size(); ++c) cells[table.columns[c]] = r.cells[c];
    rows.push_back({{"question_type", r.label}, {"accuracy_percent", cells}, {"best", r.best}});
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

}  // namespace instruct_icl::eval
