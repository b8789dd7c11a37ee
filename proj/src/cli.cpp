#include "instruct_icl/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <map>
#include <nlohmann/json.hpp>

#include "instruct_icl/config.hpp"
#include "instruct_icl/dataset.hpp"
#include "instruct_icl/error.hpp"
#include "instruct_icl/evaluation.hpp"
#include "instruct_icl/exemplars.hpp"
#include "instruct_icl/hashing.hpp"
#include "instruct_icl/prompting.hpp"
#include "instruct_icl/vector_index.hpp"

namespace instruct_icl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Flag values are captured as strings and fed through resolve_config, so
// flags, environment and config file all go through one typed parser.
class FlagSet {
 public:
  void add(CLI::App* app, const std::string& field, const std::string& flag, const std::string& help) {
    auto& slot = storage_[field];
    options_.emplace_back(field, app->add_option(flag, slot, help));
  }

  void add_switch(CLI::App* app, const std::string& field, const std::string& flag, const std::string& value,
                  const std::string& help) {
    options_.emplace_back(field, app->add_flag(flag, help));
    switch_values_[field] = value;
  }

  std::map<std::string, std::string> given() const {
    std::map<std::string, std::string> out;
    for (const auto& [field, opt] : options_) {
      if (opt->count() == 0) continue;
      auto sw = switch_values_.find(field);
      out[field] = sw != switch_values_.end() ? sw->second : storage_.at(field);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> storage_;
  std::map<std::string, std::string> switch_values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void configure_logging(const std::string& level) {
  auto logger = spdlog::get("instruct_icl");
  if (!logger) {
    logger = spdlog::stderr_color_mt("instruct_icl");
    spdlog::set_default_logger(logger);
  }
  spdlog::set_pattern("%l: %v");
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw UsageError("unknown log level '" + level + "'");
  spdlog::set_level(lvl);
}

CliConfig resolve(const FlagSet& flags, const std::string& config_path) {
  std::optional<fs::path> file;
  if (!config_path.empty()) file = config_path;
  auto config = resolve_config(flags.given(), file);
  configure_logging(config.log_level);
  return config;
}

void require(const fs::path& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

retrieval::EmbeddingIndex open_index(const CliConfig& c) {
  if (!c.index.empty()) return retrieval::load_index(c.index);
  if (!c.embeddings.empty()) return retrieval::build_index(retrieval::load_embeddings(c.embeddings));
  throw UsageError("--index or --embeddings is required");
}

prompting::PromptTemplateSet open_templates(const CliConfig& c) {
  return c.templates.empty() ? prompting::PromptTemplateSet::defaults()
                             : prompting::PromptTemplateSet::load(c.templates);
}

int cmd_ingest(const CliConfig& c, std::ostream& out) {
  require(c.dataset, "--dataset");
  const auto dataset = data::ingest_dataset(c.dataset);
  std::map<data::QuestionType, std::size_t> per_type;
  std::size_t missing_images = 0;
  for (const auto& r : dataset) {
    ++per_type[r.question_type];
    if (!fs::exists(r.image_path)) ++missing_images;
  }
  out << dataset.size() << " records\n";
  for (auto type : data::kReportOrder) out << "  " << data::display_label(type) << ": " << per_type[type] << "\n";
  if (missing_images > 0) spdlog::warn("{} record(s) point at missing image files", missing_images);
  return kExitOk;
}

int cmd_index_build(const CliConfig& c, std::ostream& out) {
  require(c.embeddings, "--embeddings");
  require(c.index, "--index");
  const auto index = retrieval::build_index(retrieval::load_embeddings(c.embeddings));
  retrieval::save_index(index, c.index);
  out << index.size() << " records, dim " << index.dimension() << "\n";
  return kExitOk;
}

int cmd_retrieve(const CliConfig& c, const std::string& question_id, std::size_t k, std::ostream& out) {
  require(c.pool, "--pool");
  const auto index = open_index(c);
  const auto pool = data::ingest_dataset(c.pool);
  std::optional<data::Dataset> eval_set;
  if (!c.dataset.empty()) eval_set = data::ingest_dataset(c.dataset);

  const data::QARecord* target = eval_set ? eval_set->find(question_id) : nullptr;
  if (!target) target = pool.find(question_id);
  if (!target) throw UsageError("UnknownQuestionId: " + question_id);

  const auto set = exemplars::select_exemplars(*target, pool, index);
  ordered_json j;
  j["target_question_id"] = set.target_question_id;
  j["question_type"] = std::string(data::to_string(target->question_type));
  ordered_json list = ordered_json::array();
  for (const auto& e : set.exemplars) {
    list.push_back({{"question_id", e.question_id},
                    {"image_id", e.image_id},
                    {"image_path", e.image_path.generic_string()},
                    {"question", e.question},
                    {"answer", e.answer},
                    {"similarity", e.similarity}});
  }
  j["exemplars"] = std::move(list);
  j["missing_classes"] = set.missing_classes;
  if (k > 0) {
    ordered_json ranking = ordered_json::array();
    for (const auto& hit : index.query_top_k(index.vector(target->image_id), k, {target->image_id})) {
      ranking.push_back({{"image_id", hit.image_id}, {"score", hit.score}});
    }
    j["ranking"] = std::move(ranking);
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

bool any_failures(const eval::EvaluationReport& report) { return report.overall.backend_failed > 0; }

void print_report(const eval::EvaluationReport& report, std::ostream& out) {
  out << eval::report_csv(report);
}

int cmd_run(const CliConfig& c, std::optional<std::size_t> limit, const std::string& usage, std::ostream& out) {
  if (c.strategy.empty()) throw UsageError("--strategy is required\n" + usage);
  const auto strategy = prompting::parse_strategy(c.strategy);
  if (!strategy) {
    throw UsageError("unknown strategy '" + c.strategy + "' (expected zero-shot|aic|iic|bic)\n" + usage);
  }
  require(c.dataset, "--dataset");
  require(c.run_dir, "--run-dir");

  const auto eval_set = data::ingest_dataset(c.dataset);
  const auto pool = c.pool.empty() ? eval_set : data::ingest_dataset(c.pool);
  if (c.pool.empty()) spdlog::warn("no --pool given; retrieving exemplars from the eval set itself");
  const auto index = open_index(c);
  const auto templates = open_templates(c);

  c.backend.validate();
  auto backend = backends::make_backend(c.backend);
  std::optional<backends::ResponseCache> cache;
  if (c.use_cache) cache.emplace(c.cache_dir);
  backends::ModelClient client(backend, c.backend, std::move(cache));

  eval::RunOptions options;
  options.run_dir = c.run_dir;
  options.parallelism = c.parallelism;
  options.prompt.decode = {c.backend.temperature, c.backend.max_output_tokens};
  options.prompt.attach_exemplar_images = c.attach_exemplar_images;
  options.max_new_items = limit;

  const auto summary = eval::run_evaluation(eval_set, pool, index, *strategy, client, templates, options);
  const auto stats = client.stats();
  out << "processed " << summary.processed << ", skipped " << summary.skipped << " (answered "
      << summary.answered << ", unanswered " << summary.unanswered << ", failed " << summary.backend_failed
      << "); backend attempts " << stats.attempts << ", cache hits " << stats.cache_hits << "\n";
  if (!summary.complete) {
    out << "run incomplete; rerun the same command to resume\n";
    return summary.backend_failed > 0 ? kExitItemFailures : kExitOk;
  }
  const auto report = eval::aggregate(c.run_dir);
  print_report(report, out);
  return any_failures(report) ? kExitItemFailures : kExitOk;
}

int cmd_evaluate(const fs::path& run_dir, std::ostream& out) {
  const auto report = eval::aggregate(run_dir);
  eval::write_report(run_dir, report);
  print_report(report, out);
  for (const auto& s : report.sessions) {
    out << "session " << s.started_at << " .. " << s.finished_at << ": processed " << s.processed
        << ", cache hits " << s.cache_hits << ", misses " << s.cache_misses << ", failures " << s.failures
        << "\n";
  }
  return any_failures(report) ? kExitItemFailures : kExitOk;
}

int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& out_dir, std::ostream& out) {
  std::vector<eval::EvaluationReport> reports;
  for (const auto& dir : run_dirs) reports.push_back(eval::aggregate(dir));
  const auto table = eval::compare(reports);
  const auto csv = eval::comparison_csv(table);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file_atomic(fs::path(out_dir) / "comparison.csv", csv);
    write_file_atomic(fs::path(out_dir) / "comparison.json", eval::comparison_json(table));
  }
  out << csv;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instruction-guided in-context learning pipeline for post-disaster VQA", "instruct-icl"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  FlagSet flags;
  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "TOML-style config file ([data], [run], [backend] sections)");
  };

  auto* ingest = app.add_subcommand("ingest", "Validate a dataset file and print per-type counts");
  flags.add(ingest, "dataset", "--dataset", "Dataset JSON Lines file");
  flags.add(ingest, "log_level", "--log-level", "trace|debug|info|warn|error|off");
  add_config(ingest);

  auto* index = app.add_subcommand("index", "Embedding index commands");
  index->require_subcommand(1);
  auto* index_build = index->add_subcommand("build", "Build a binary index from an embeddings file");
  flags.add(index_build, "embeddings", "--embeddings", "Embeddings JSON Lines file");
  flags.add(index_build, "index", "--index,--out", "Output index path");
  flags.add(index_build, "log_level", "--log-level", "trace|debug|info|warn|error|off");
  add_config(index_build);

  std::string question_id;
  std::size_t k = 0;
  auto* retrieve = app.add_subcommand("retrieve", "Print the exemplar set selected for one question");
  flags.add(retrieve, "index", "--index", "Binary index file");
  flags.add(retrieve, "embeddings", "--embeddings", "Embeddings file, used when --index is absent");
  flags.add(retrieve, "pool", "--pool", "Exemplar pool dataset");
  flags.add(retrieve, "dataset", "--dataset", "Dataset holding the target question (default: the pool)");
  retrieve->add_option("--question-id", question_id, "Target question id")->required();
  retrieve->add_option("--k", k, "Also print the k nearest images");
  flags.add(retrieve, "log_level", "--log-level", "trace|debug|info|warn|error|off");
  add_config(retrieve);

  std::optional<std::size_t> limit;
  auto* run = app.add_subcommand("run", "Run one strategy over an eval set into a run directory");
  flags.add(run, "dataset", "--dataset", "Eval dataset JSON Lines file");
  flags.add(run, "pool", "--pool", "Exemplar pool dataset");
  flags.add(run, "embeddings", "--embeddings", "Embeddings file, used when --index is absent");
  flags.add(run, "index", "--index", "Binary index file");
  flags.add(run, "templates", "--templates", "Prompt template file (default: built-in)");
  flags.add(run, "strategy", "--strategy", "zero-shot|aic|iic|bic");
  flags.add(run, "backend", "--backend", "http|scripted");
  flags.add(run, "fixture", "--fixture", "Scripted backend fixture (JSON Lines)");
  flags.add(run, "endpoint", "--endpoint", "HTTP endpoint URL");
  flags.add(run, "model", "--model", "Model identifier sent to the backend");
  flags.add(run, "temperature", "--temperature", "Sampling temperature (default 0)");
  flags.add(run, "parallelism", "--parallelism", "Items processed concurrently");
  flags.add(run, "run_dir", "--run-dir", "Run directory (created or resumed)");
  flags.add(run, "cache_dir", "--cache-dir", "Response cache directory");
  flags.add_switch(run, "use_cache", "--no-cache", "false", "Disable the response cache");
  flags.add_switch(run, "attach_exemplar_images", "--no-exemplar-images", "false",
                   "Send exemplar text but not exemplar images at stage two");
  run->add_option("--limit", limit, "Stop after this many new items");
  flags.add(run, "log_level", "--log-level", "trace|debug|info|warn|error|off");
  add_config(run);

  std::string run_dir;
  auto* evaluate = app.add_subcommand("evaluate", "Aggregate a run directory and rewrite its report");
  evaluate->add_option("run_dir", run_dir, "Run directory")->required();

  std::vector<std::string> run_dirs;
  std::string out_dir;
  auto* compare = app.add_subcommand("compare", "Tabulate accuracy per question type across runs");
  compare->add_option("run_dirs", run_dirs, "Run directories")->required();
  compare->add_option("--out-dir", out_dir, "Write comparison.csv and comparison.json here");

  std::vector<const char*> argv = {"instruct-icl"};
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    while (true) {
      auto subs = target->get_subcommands();
      if (subs.empty()) break;
      target = subs.front();
    }
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(resolve(flags, config_path), out);
    if (index_build->parsed()) return cmd_index_build(resolve(flags, config_path), out);
    if (retrieve->parsed()) return cmd_retrieve(resolve(flags, config_path), question_id, k, out);
    if (run->parsed()) return cmd_run(resolve(flags, config_path), limit, run->help(), out);
    if (evaluate->parsed()) return cmd_evaluate(run_dir, out);
    if (compare->parsed()) return cmd_compare(run_dirs, out_dir, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace instruct_icl::cli
