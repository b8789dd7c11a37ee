#include <algorithm>
#include <cctype>
#include <chrono>
#include <nlohmann/json.hpp>
#include <thread>

#include "instruct_icl/backends.hpp"
#include "instruct_icl/hashing.hpp"

namespace instruct_icl::backends {
namespace {

std::string tag_string(const prompting::RequestTag& tag) {
  return tag.question_id + "/" + std::string(prompting::to_string(tag.strategy)) + "/stage" +
         std::to_string(static_cast<int>(tag.stage)) + (tag.attempt > 0 ? "/repair" : "");
}

ScriptedBackend::Rule parse_rule(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  if (!j.is_object()) throw std::runtime_error("rule must be an object");
  ScriptedBackend::Rule rule;
  rule.question_id = j.at("question_id").get<std::string>();

  auto strategy_name = j.at("strategy").get<std::string>();
  std::transform(strategy_name.begin(), strategy_name.end(), strategy_name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  auto strategy = prompting::parse_strategy(strategy_name);
  if (!strategy) throw std::runtime_error("unknown strategy '" + strategy_name + "'");
  rule.strategy = *strategy;

  const auto stage = j.at("stage").get<int>();
  if (stage != 1 && stage != 2) throw std::runtime_error("stage must be 1 or 2");
  rule.stage = static_cast<prompting::Stage>(stage);
  if (rule.strategy == prompting::Strategy::ZeroShot && rule.stage == prompting::Stage::One) {
    throw std::runtime_error("zero-shot has no stage 1");
  }

  rule.attempt = j.value("attempt", 0);
  if (rule.attempt < 0 || rule.attempt > 1) throw std::runtime_error("attempt must be 0 or 1");
  if (j.contains("must_contain")) {
    rule.must_contain = j.at("must_contain").get<std::vector<std::string>>();
  }
  rule.response = j.at("response").get<std::string>();
  return rule;
}

}  // namespace

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::FileNotFound, path.string());
  return from_jsonl(read_file_bytes(path));
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_jsonl(std::string_view jsonl) {
  std::vector<Rule> rules;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const auto line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      rules.push_back(parse_rule(line));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::MalformedRecord, "fixture line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return std::make_shared<ScriptedBackend>(std::move(rules));
}

ScriptedBackend::ScriptedBackend(std::vector<Rule> rules) {
  for (auto& rule : rules) {
    Key key{rule.question_id, rule.strategy, rule.stage, rule.attempt};
    prompting::RequestTag tag{rule.question_id, rule.strategy, rule.stage, rule.attempt};
    if (!rules_.emplace(std::move(key), std::move(rule)).second) {
      throw Error(ErrorCode::MalformedRecord, "duplicate fixture rule for " + tag_string(tag));
    }
  }
}

ModelResponse ScriptedBackend::complete(const prompting::ModelRequest& request) {
  ++calls_;
  const int now = ++in_flight_;
  int seen = max_in_flight_.load();
  while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
  }
  struct Leave {
    std::atomic<int>& n;
    ~Leave() { --n; }
  } leave{in_flight_};

  const auto start = std::chrono::steady_clock::now();
  if (delay_.count() > 0) std::this_thread::sleep_for(delay_);

  const auto& tag = request.tag;
  auto it = rules_.find(Key{tag.question_id, tag.strategy, tag.stage, tag.attempt});
  if (it == rules_.end() && tag.attempt > 0) {
    it = rules_.find(Key{tag.question_id, tag.strategy, tag.stage, 0});
  }
  if (it == rules_.end()) throw Error(ErrorCode::NoRuleForTag, tag_string(tag));

  for (const auto& needle : it->second.must_contain) {
    if (request.text.find(needle) == std::string::npos) {
      throw Error(ErrorCode::FixtureAssertionFailed, tag_string(tag) + " missing \"" + needle + "\"");
    }
  }

  ModelResponse response;
  response.text = it->second.response;
  response.finish_reason = "stop";
  response.backend = BackendKind::Scripted;
  response.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return response;
}

}  // namespace instruct_icl::backends
