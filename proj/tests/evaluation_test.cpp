#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "instruct_icl/backends.hpp"
#include "instruct_icl/error.hpp"
#include "instruct_icl/evaluation.hpp"
#include "test_support.hpp"

using namespace instruct_icl;
using namespace instruct_icl::eval;
using prompting::Strategy;
using testing_support::ScratchDir;
using testing_support::slurp;

namespace {

struct Env {
  data::Dataset eval = data::ingest_dataset(testing_support::fixture_dir() / "eval.jsonl");
  data::Dataset pool = data::ingest_dataset(testing_support::fixture_dir() / "pool.jsonl");
  retrieval::EmbeddingIndex index =
      retrieval::build_index(retrieval::load_embeddings(testing_support::fixture_dir() / "embeddings.jsonl"));
  const prompting::PromptTemplateSet& templates = prompting::PromptTemplateSet::defaults();
};

const Env& env() {
  static const Env e;
  return e;
}

backends::BackendConfig scripted_config() {
  backends::BackendConfig c;
  c.fixture = testing_support::fixture_dir() / "fixture.jsonl";
  return c;
}

std::unique_ptr<backends::ModelClient> client_for(std::shared_ptr<backends::Backend> backend,
                                                  std::optional<std::filesystem::path> cache = std::nullopt) {
  std::optional<backends::ResponseCache> c;
  if (cache) c.emplace(*cache);
  return std::make_unique<backends::ModelClient>(std::move(backend), scripted_config(), std::move(c));
}

Transcript synthetic(data::QuestionType type, ItemStatus status, bool correct) {
  Transcript t;
  static int counter = 0;
  t.question_id = "s" + std::to_string(counter++);
  t.question_type = type;
  t.status = status;
  t.correct = correct;
  return t;
}

// Exact half-up rounding of 10000 * c / t.
std::int64_t exact_bp(std::int64_t c, std::int64_t t) {
  const std::int64_t q = 10000 * c / t, r = 10000 * c % t;
  return q + (2 * r >= t ? 1 : 0);
}

RunOptions opts(const std::filesystem::path& dir, int parallelism = 1) {
  RunOptions o;
  o.run_dir = dir;
  o.parallelism = parallelism;
  return o;
}

}  // namespace

TEST(Accuracy, RoundingMatchesExactArithmetic) {
  for (std::int64_t t = 1; t <= 300; ++t)
    for (std::int64_t c = 0; c <= t; ++c) ASSERT_EQ(*accuracy_basis_points(c, t), exact_bp(c, t)) << c << "/" << t;
  EXPECT_FALSE(accuracy_basis_points(0, 0));
  EXPECT_EQ(format_basis_points(7500), "75.00");
  EXPECT_EQ(format_basis_points(8333), "83.33");
  EXPECT_EQ(format_basis_points(5), "0.05");
  EXPECT_EQ(format_basis_points(0), "0.00");
  EXPECT_EQ(format_basis_points(10000), "100.00");
  // 2/3 -> 66.666... -> 66.67; 1/8 -> 12.5 exactly; 1/16 -> 6.25.
  EXPECT_EQ(format_basis_points(*accuracy_basis_points(2, 3)), "66.67");
  EXPECT_EQ(format_basis_points(*accuracy_basis_points(1, 8)), "12.50");
  EXPECT_EQ(format_basis_points(*accuracy_basis_points(1, 16)), "6.25");
  // 1/32 = 3.125 -> half-up 3.13.
  EXPECT_EQ(format_basis_points(*accuracy_basis_points(1, 32)), "3.13");
}

TEST(Accuracy, SyntheticThreeOfFour) {
  using data::QuestionType;
  std::vector<Transcript> ts;
  for (int i = 0; i < 4; ++i) ts.push_back(synthetic(QuestionType::RiskAssessment, ItemStatus::Answered, i < 3));
  ts.push_back(synthetic(QuestionType::SimpleCounting, ItemStatus::Unanswered, false));
  ts.push_back(synthetic(QuestionType::SimpleCounting, ItemStatus::BackendFailed, false));
  auto r = aggregate_transcripts(ts);
  ASSERT_EQ(r.rows.size(), 7u);
  EXPECT_EQ(r.rows[4].label, "Risk Assessment");
  EXPECT_EQ(r.rows[4].accuracy_percent(), "75.00");
  EXPECT_EQ(r.rows[6].accuracy_percent(), "0.00");
  EXPECT_EQ(r.rows[6].unanswered + r.rows[6].backend_failed, 2u);
  EXPECT_EQ(r.rows[0].accuracy_percent(), "n/a");
  EXPECT_EQ(r.overall.total, 6u);
  EXPECT_EQ(r.overall.correct, 3u);
  EXPECT_EQ(r.overall.accuracy_percent(), "50.00");
}

TEST(Accuracy, RandomTranscriptSetsConserveAndMatchOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Transcript> ts;
    std::map<int, std::pair<int, int>> truth;
    const int n = 1 + static_cast<int>(rng() % 80);
    for (int i = 0; i < n; ++i) {
      const auto type = data::kReportOrder[rng() % 7];
      const auto status = static_cast<ItemStatus>(rng() % 3);
      const bool correct = status == ItemStatus::Answered && rng() % 2;
      ts.push_back(synthetic(type, status, correct));
      auto& [c, t] = truth[static_cast<int>(type)];
      c += correct;
      ++t;
    }
    auto r = aggregate_transcripts(ts);
    std::size_t sum = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      const auto& row = r.rows[i];
      sum += row.total;
      EXPECT_EQ(row.answered + row.unanswered + row.backend_failed, row.total);
      auto it = truth.find(static_cast<int>(data::kReportOrder[i]));
      if (it == truth.end()) {
        EXPECT_EQ(row.total, 0u);
        continue;
      }
      EXPECT_EQ(row.correct, static_cast<std::size_t>(it->second.first));
      EXPECT_EQ(*row.accuracy_bp(), exact_bp(it->second.first, it->second.second));
    }
    EXPECT_EQ(sum, static_cast<std::size_t>(n));
  }
}

TEST(Transcripts, JsonRoundTripAndFilenames) {
  Transcript t;
  t.question_id = "a/b c";
  t.question_type = data::QuestionType::DensityEstimation;
  t.ground_truth = "low";
  t.strategy = Strategy::BIC;
  t.exemplar_question_ids = {"p1", "p2"};
  t.missing_classes = {"high"};
  t.stage1_request = "s1";
  t.stage1_response = "instr";
  t.stage2_request = "s2";
  t.stage2_images = {"/x.png"};
  t.stage2_response = "resp";
  t.repair_attempts = 1;
  t.repair_response = "<start>Low<end>";
  t.extracted_answer = "Low";
  t.normalized_answer = "low";
  t.status = ItemStatus::Answered;
  t.correct = true;
  EXPECT_EQ(transcript_from_json(transcript_to_json(t)), t);
  EXPECT_EQ(transcript_filename("e001"), "e001.json");
  EXPECT_EQ(transcript_filename("a/b c"), "a%2Fb%20c.json");
  EXPECT_NE(transcript_filename(".."), "...json");
}

TEST(EvaluateItem, OutcomePaths) {
  const auto& e = env();
  auto backend = backends::ScriptedBackend::from_jsonl(
      R"({"question_id":"e001","strategy":"zero-shot","stage":2,"response":"no tags here"})"
      "\n"
      R"({"question_id":"e001","strategy":"zero-shot","stage":2,"attempt":1,"response":"<start> Flooded <end>"})"
      "\n"
      R"({"question_id":"e002","strategy":"zero-shot","stage":2,"response":"<start>four"})"
      "\n"
      R"({"question_id":"e003","strategy":"zero-shot","stage":2,"response":"<start> <end>"})"
      "\n"
      R"({"question_id":"e006","strategy":"zero-shot","stage":2,"response":"<start>a few<end>"})"
      "\n");
  auto client = client_for(backend);
  const prompting::PromptOptions po;

  auto repaired = evaluate_item(e.eval.at("e001"), e.pool, e.index, Strategy::ZeroShot, *client, e.templates, po);
  EXPECT_EQ(repaired.status, ItemStatus::Answered);
  EXPECT_TRUE(repaired.correct);
  EXPECT_EQ(repaired.repair_attempts, 1);
  EXPECT_EQ(repaired.normalized_answer, "flooded");

  auto unterminated = evaluate_item(e.eval.at("e002"), e.pool, e.index, Strategy::ZeroShot, *client, e.templates, po);
  EXPECT_EQ(unterminated.status, ItemStatus::Unanswered);
  EXPECT_EQ(unterminated.repair_attempts, 1);
  EXPECT_FALSE(unterminated.correct);

  auto empty = evaluate_item(e.eval.at("e003"), e.pool, e.index, Strategy::ZeroShot, *client, e.templates, po);
  EXPECT_EQ(empty.status, ItemStatus::Unanswered);
  EXPECT_EQ(empty.repair_attempts, 0);

  auto unmappable = evaluate_item(e.eval.at("e006"), e.pool, e.index, Strategy::ZeroShot, *client, e.templates, po);
  EXPECT_EQ(unmappable.status, ItemStatus::Answered);
  EXPECT_FALSE(unmappable.correct);
  EXPECT_FALSE(unmappable.normalized_answer);

  auto failed = evaluate_item(e.eval.at("e004"), e.pool, e.index, Strategy::ZeroShot, *client, e.templates, po);
  EXPECT_EQ(failed.status, ItemStatus::BackendFailed);
  EXPECT_NE(failed.error.find("NoRuleForTag"), std::string::npos) << failed.error;

  auto two_stage = evaluate_item(e.eval.at("e001"), e.pool, e.index, Strategy::BIC, *client, e.templates, po);
  EXPECT_EQ(two_stage.status, ItemStatus::BackendFailed);
}

TEST(Run, FixtureZeroShotAllAnswered) {
  const auto& e = env();
  ScratchDir dir("run");
  auto client = client_for(backends::ScriptedBackend::from_file(scripted_config().fixture));
  auto s = run_evaluation(e.eval, e.pool, e.index, Strategy::ZeroShot, *client, e.templates, opts(dir.path()));
  EXPECT_TRUE(s.complete);
  EXPECT_EQ(s.processed, 40u);
  EXPECT_EQ(s.answered, 40u);
  EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
  auto r = aggregate(dir.path());
  EXPECT_EQ(r.overall.total, 40u);
  EXPECT_EQ(r.overall.correct, 23u);
  EXPECT_EQ(r.strategy, "zero-shot");
  EXPECT_EQ(r.eval_digest, e.eval.digest());
  ASSERT_EQ(r.sessions.size(), 1u);
  EXPECT_EQ(r.sessions[0].processed, 40u);
}

TEST(Run, DeterministicAcrossParallelism) {
  const auto& e = env();
  ScratchDir a("p1"), b("p8");
  auto c1 = client_for(backends::ScriptedBackend::from_file(scripted_config().fixture));
  auto c8 = client_for(backends::ScriptedBackend::from_file(scripted_config().fixture));
  run_evaluation(e.eval, e.pool, e.index, Strategy::BIC, *c1, e.templates, opts(a.path(), 1));
  run_evaluation(e.eval, e.pool, e.index, Strategy::BIC, *c8, e.templates, opts(b.path(), 8));
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  EXPECT_EQ(slurp(a / "report.csv"), slurp(b / "report.csv"));
  for (const auto& r : e.eval) {
    const auto name = "transcripts/" + transcript_filename(r.question_id);
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
  }
}

TEST(Run, MissingRuleIsolatesOneItem) {
  const auto& e = env();
  std::string rules;
  std::istringstream in(slurp(scripted_config().fixture));
  for (std::string line; std::getline(in, line);) {
    if (line.find(R"("question_id": "e007", "strategy": "iic", "stage": 2)") != std::string::npos) continue;
    rules += line + "\n";
  }
  ScratchDir dir("iso");
  auto client = client_for(backends::ScriptedBackend::from_jsonl(rules));
  auto s = run_evaluation(e.eval, e.pool, e.index, Strategy::IIC, *client, e.templates, opts(dir.path(), 4));
  EXPECT_EQ(s.backend_failed, 1u);
  EXPECT_EQ(s.answered, 39u);
  auto r = aggregate(dir.path());
  EXPECT_EQ(r.overall.backend_failed, 1u);
  auto t = transcript_from_json(slurp(dir / "transcripts/e007.json"));
  EXPECT_EQ(t.status, ItemStatus::BackendFailed);
}

TEST(Run, ResumeAfterInterruption) {
  const auto& e = env();
  ScratchDir full("full"), part("part");
  auto c_full = client_for(backends::ScriptedBackend::from_file(scripted_config().fixture));
  run_evaluation(e.eval, e.pool, e.index, Strategy::AIC, *c_full, e.templates, opts(full.path()));

  auto backend = backends::ScriptedBackend::from_file(scripted_config().fixture);
  auto client = client_for(backend);
  auto o = opts(part.path(), 3);
  o.max_new_items = 20;
  auto first = run_evaluation(e.eval, e.pool, e.index, Strategy::AIC, *client, e.templates, o);
  EXPECT_FALSE(first.complete);
  EXPECT_EQ(first.processed, 20u);
  EXPECT_FALSE(std::filesystem::exists(part / "report.json"));
  try {
    aggregate(part.path());
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::IncompleteRun);
  }
  o.max_new_items.reset();
  auto second = run_evaluation(e.eval, e.pool, e.index, Strategy::AIC, *client, e.templates, o);
  EXPECT_TRUE(second.complete);
  EXPECT_EQ(second.skipped, 20u);
  EXPECT_EQ(second.processed, 20u);
  EXPECT_EQ(slurp(full / "report.json"), slurp(part / "report.json"));
  EXPECT_EQ(slurp(full / "report.csv"), slurp(part / "report.csv"));
  EXPECT_EQ(aggregate(part.path()).sessions.size(), 2u);

  // A rerun over a complete directory makes no backend calls.
  const auto calls = backend->calls();
  auto third = run_evaluation(e.eval, e.pool, e.index, Strategy::AIC, *client, e.templates, o);
  EXPECT_EQ(third.processed, 0u);
  EXPECT_EQ(backend->calls(), calls);
  EXPECT_EQ(slurp(full / "report.json"), slurp(part / "report.json"));
}

TEST(Run, WarmCacheMakesNoBackendCalls) {
  const auto& e = env();
  ScratchDir cache("cache"), a("a"), b("b");
  auto cold = backends::ScriptedBackend::from_file(scripted_config().fixture);
  auto c1 = client_for(cold, cache.path());
  run_evaluation(e.eval, e.pool, e.index, Strategy::IIC, *c1, e.templates, opts(a.path()));
  EXPECT_GT(cold->calls(), 0u);
  auto warm = backends::ScriptedBackend::from_file(scripted_config().fixture);
  auto c2 = client_for(warm, cache.path());
  run_evaluation(e.eval, e.pool, e.index, Strategy::IIC, *c2, e.templates, opts(b.path()));
  EXPECT_EQ(warm->calls(), 0u);
  EXPECT_EQ(c2->stats().cache_misses, 0u);
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
}

TEST(Run, RejectsForeignDirectories) {
  const auto& e = env();
  ScratchDir dir("foreign");
  auto client = client_for(backends::ScriptedBackend::from_file(scripted_config().fixture));
  auto o = opts(dir.path());
  o.max_new_items = 1;
  run_evaluation(e.eval, e.pool, e.index, Strategy::ZeroShot, *client, e.templates, o);
  try {
    run_evaluation(e.eval, e.pool, e.index, Strategy::AIC, *client, e.templates, o);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::RunDirectory);
  }
  ScratchDir other("other");
  testing_support::spit(other / "stray.txt", "x");
  try {
    run_evaluation(e.eval, e.pool, e.index, Strategy::ZeroShot, *client, e.templates, opts(other.path()));
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::RunDirectory);
  }
}

TEST(Compare, MatrixShapeAndBestFlags) {
  using data::QuestionType;
  auto make = [](const std::string& strategy, int correct_bc, const std::string& digest = "d") {
    std::vector<Transcript> ts;
    for (int i = 0; i < 4; ++i) ts.push_back(synthetic(QuestionType::BuildingCondition, ItemStatus::Answered, i < correct_bc));
    auto r = aggregate_transcripts(ts);
    r.strategy = strategy;
    r.eval_digest = digest;
    return r;
  };
  auto table = compare({make("iic", 3), make("aic", 2), make("bic", 3), make("zero-shot", 1)});
  ASSERT_EQ(table.columns, (std::vector<std::string>{"IIC", "AIC", "BIC", "zero-shot"}));
  ASSERT_EQ(table.rows.size(), 7u);
  EXPECT_EQ(table.rows[0].label, "Building Condition");
  EXPECT_EQ(table.rows[0].cells, (std::vector<std::string>{"75.00", "50.00", "75.00", "25.00"}));
  EXPECT_EQ(table.rows[0].best, (std::vector<std::string>{"IIC", "BIC"}));
  EXPECT_EQ(table.rows[1].cells[0], "n/a");
  EXPECT_TRUE(table.rows[1].best.empty());
  const auto csv = comparison_csv(table);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "question_type,IIC,AIC,BIC,zero-shot,best");
  EXPECT_NE(csv.find("Building Condition,75.00,50.00,75.00,25.00,IIC|BIC\n"), std::string::npos);
  auto j = nlohmann::json::parse(comparison_json(table));
  EXPECT_EQ(j["rows"][0]["accuracy_percent"]["IIC"], "75.00");

  auto single = compare({make("aic", 1)});
  EXPECT_EQ(single.columns.size(), 1u);
  EXPECT_EQ(single.rows[0].best, std::vector<std::string>{"AIC"});

  auto dup = compare({make("aic", 1), make("aic", 2)});
  EXPECT_EQ(dup.columns, (std::vector<std::string>{"AIC", "AIC (2)"}));

  try {
    compare({make("aic", 1), make("bic", 1, "other")});
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::MismatchedEvalSets);
  }
}
