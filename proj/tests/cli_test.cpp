#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "instruct_icl/cli.hpp"
#include "test_support.hpp"

using instruct_icl::cli::kExitItemFailures;
using instruct_icl::cli::kExitOk;
using instruct_icl::cli::kExitUsage;
using testing_support::ScratchDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = instruct_icl::cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string fx(const std::string& name) { return (testing_support::fixture_dir() / name).string(); }

void expect_error_line(const Result& r) {
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
}

std::vector<std::string> run_args(const std::string& strategy, const ScratchDir& dir, const std::string& name,
                                  const std::string& fixture = fx("fixture.jsonl"),
                                  const std::string& dataset = fx("eval.jsonl")) {
  return {"run",       "--strategy", strategy,    "--dataset",   dataset,
          "--pool",    fx("pool.jsonl"), "--embeddings", fx("embeddings.jsonl"), "--backend",
          "scripted",  "--fixture",  fixture,     "--run-dir",   (dir / name).string(),
          "--cache-dir", (dir / "cache").string(), "--log-level", "error"};
}

}  // namespace

TEST(Cli, IndexBuild) {
  ScratchDir dir("cli");
  auto r = cli({"index", "build", "--embeddings", fx("embeddings.jsonl"), "--out", (dir / "i.bin").string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out, "44 records, dim 16\n");

  std::mt19937 rng(1);
  std::normal_distribution<float> nd;
  std::string ten;
  for (int i = 0; i < 10; ++i) {
    ten += "{\"image_id\":\"im" + std::to_string(i) + "\",\"vector\":[";
    for (int d = 0; d < 512; ++d) ten += (d ? "," : "") + std::to_string(nd(rng));
    ten += "]}\n";
  }
  testing_support::spit(dir / "ten.jsonl", ten);
  r = cli({"index", "build", "--embeddings", (dir / "ten.jsonl").string(), "--out", (dir / "ten.bin").string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out, "10 records, dim 512\n");

  testing_support::spit(dir / "mixed.jsonl", "{\"image_id\":\"a\",\"vector\":[1,2]}\n{\"image_id\":\"odd_one\",\"vector\":[1]}\n");
  r = cli({"index", "build", "--embeddings", (dir / "mixed.jsonl").string(), "--out", (dir / "m.bin").string()});
  EXPECT_EQ(r.code, kExitUsage);
  expect_error_line(r);
  EXPECT_NE(r.err.find("odd_one"), std::string::npos) << r.err;

  r = cli({"index", "build", "--embeddings", (dir / "none.jsonl").string(), "--out", (dir / "n.bin").string()});
  EXPECT_EQ(r.code, kExitUsage);
  expect_error_line(r);
}

TEST(Cli, Retrieve) {
  auto r = cli({"retrieve", "--embeddings", fx("embeddings.jsonl"), "--pool", fx("pool.jsonl"), "--dataset",
                fx("eval.jsonl"), "--question-id", "e001", "--k", "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["target_question_id"], "e001");
  EXPECT_EQ(j["exemplars"].size(), 2u);
  EXPECT_TRUE(j["missing_classes"].empty());
  EXPECT_EQ(j["ranking"].size(), 3u);

  r = cli({"retrieve", "--embeddings", fx("embeddings.jsonl"), "--pool", fx("pool.jsonl"), "--dataset",
           fx("eval.jsonl"), "--question-id", "e002"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["exemplars"].size(), 2u);

  r = cli({"retrieve", "--embeddings", fx("embeddings.jsonl"), "--pool", fx("pool.jsonl"), "--question-id", "zzz"});
  EXPECT_EQ(r.code, kExitUsage);
  expect_error_line(r);
}

TEST(Cli, Ingest) {
  auto r = cli({"ingest", "--dataset", fx("eval.jsonl")});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "40 records");
  EXPECT_NE(r.out.find("Building Condition: 6"), std::string::npos);
}

TEST(Cli, RunEvaluateCompare) {
  ScratchDir dir("clirun");
  auto r = cli(run_args("iic", dir, "iic"));
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "iic/report.csv"));
  EXPECT_NE(r.out.find("Building Condition,6,6,6,100.00"), std::string::npos) << r.out;

  r = cli({"evaluate", (dir / "iic").string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;

  r = cli(run_args("zero-shot", dir, "zs12", fx("fixture.jsonl"), fx("eval12.jsonl")));
  EXPECT_EQ(r.code, kExitOk) << r.err;
  r = cli({"compare", (dir / "iic").string(), (dir / "zs12").string()});
  EXPECT_EQ(r.code, kExitUsage);
  expect_error_line(r);
  EXPECT_NE(r.err.find("MismatchedEvalSets"), std::string::npos);

  r = cli(run_args("zero-shot", dir, "zs"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  r = cli({"compare", (dir / "iic").string(), (dir / "zs").string(), "--out-dir", (dir / "cmp").string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "question_type,IIC,zero-shot,best");
  EXPECT_TRUE(std::filesystem::exists(dir / "cmp/comparison.json"));
}

TEST(Cli, ItemFailuresExitOne) {
  ScratchDir dir("clifail");
  std::string rules;
  std::istringstream in(testing_support::slurp(fx("fixture.jsonl")));
  for (std::string line; std::getline(in, line);)
    if (line.find(R"("question_id": "e010", "strategy": "zero-shot")") == std::string::npos) rules += line + "\n";
  testing_support::spit(dir / "f.jsonl", rules);
  auto r = cli(run_args("zero-shot", dir, "run", (dir / "f.jsonl").string()));
  EXPECT_EQ(r.code, kExitItemFailures) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "run/report.json"));
}

TEST(Cli, UsageErrors) {
  ScratchDir dir("cliusage");
  auto r = cli(run_args("cot", dir, "x"));
  EXPECT_EQ(r.code, kExitUsage);
  expect_error_line(r);
  EXPECT_NE(r.err.find("unknown strategy"), std::string::npos);
  EXPECT_NE(r.err.find("Usage:"), std::string::npos) << r.err;

  r = cli({});
  EXPECT_EQ(r.code, kExitUsage);
  expect_error_line(r);
  r = cli({"frobnicate"});
  EXPECT_EQ(r.code, kExitUsage);
  r = cli({"run", "--bogus-flag"});
  EXPECT_EQ(r.code, kExitUsage);
  expect_error_line(r);
  r = cli({"run", "--strategy", "aic", "--dataset", fx("eval.jsonl"), "--run-dir", (dir / "r").string(),
           "--embeddings", fx("embeddings.jsonl"), "--backend", "scripted"});
  EXPECT_EQ(r.code, kExitUsage) << "scripted without a fixture";
  expect_error_line(r);
  r = cli({"evaluate", (dir / "nothing").string()});
  EXPECT_EQ(r.code, kExitUsage);
  expect_error_line(r);
}

TEST(Cli, ConfigFileRun) {
  ScratchDir dir("clicfg");
  auto r = cli({"run", "--config", fx("run.toml"), "--run-dir", (dir / "r").string(), "--cache-dir",
                (dir / "c").string(), "--log-level", "error"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  auto meta = nlohmann::json::parse(testing_support::slurp(dir / "r/meta.json"));
  EXPECT_EQ(meta["strategy"], "bic");
}

class CliHelp : public ::testing::TestWithParam<std::vector<std::string>> {};

TEST_P(CliHelp, MatchesGolden) {
  auto args = GetParam();
  std::string name;
  for (const auto& a : args)
    if (a != "--help") name += (name.empty() ? "" : "_") + a;
  if (name.empty()) name = "top";
  auto r = cli(args);
  EXPECT_EQ(r.code, kExitOk);
  const auto golden = std::filesystem::path(INSTRUCT_ICL_GOLDEN_DIR) / ("help_" + name + ".txt");
  EXPECT_EQ(r.out, testing_support::slurp(golden)) << golden;
}

INSTANTIATE_TEST_SUITE_P(Subcommands, CliHelp,
                         ::testing::Values(std::vector<std::string>{"--help"},
                                           std::vector<std::string>{"ingest", "--help"},
                                           std::vector<std::string>{"index", "build", "--help"},
                                           std::vector<std::string>{"retrieve", "--help"},
                                           std::vector<std::string>{"run", "--help"},
                                           std::vector<std::string>{"evaluate", "--help"},
                                           std::vector<std::string>{"compare", "--help"}),
                         [](const auto& info) {
                           std::string n;
                           for (const auto& a : info.param)
                             if (a != "--help") n += a;
                           return n.empty() ? std::string("top") : n;
                         });

TEST(Cli, RunHelpListsEveryFlag) {
  auto r = cli({"run", "--help"});
  for (const char* flag : {"--dataset", "--pool", "--embeddings", "--index", "--templates", "--strategy", "--backend",
                           "--fixture", "--endpoint", "--model", "--temperature", "--parallelism", "--run-dir",
                           "--config", "--cache-dir", "--no-cache", "--limit", "--log-level"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
}
