#include "instruct_icl/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "instruct_icl/error.hpp"
#include "instruct_icl/hashing.hpp"

namespace instruct_icl::data {
namespace {

using nlohmann::ordered_json;

struct TypeNames {
  QuestionType type;
  std::string_view name;
  std::string_view label;
};

constexpr std::array<TypeNames, 7> kTypeNames = {{
    {QuestionType::BuildingCondition, "BuildingCondition", "Building Condition"},
    {QuestionType::RoadCondition, "RoadCondition", "Road Condition"},
    {QuestionType::EntireCondition, "EntireCondition", "Entire Condition"},
    {QuestionType::DensityEstimation, "DensityEstimation", "Density Estimation"},
    {QuestionType::RiskAssessment, "RiskAssessment", "Risk Assessment"},
    {QuestionType::SimpleCounting, "SimpleCounting", "Simple Counting"},
    {QuestionType::ComplexCounting, "ComplexCounting", "Complex Counting"},
}};

constexpr std::array<std::string_view, 21> kNumerals = {
    "zero",    "one",     "two",       "three",    "four",     "five",    "six",
    "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
    "fourteen", "fifteen", "sixteen",  "seventeen", "eighteen", "nineteen", "twenty",
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string_view trim_space(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

[[noreturn]] void malformed(const std::string& reason) {
  throw Error(ErrorCode::MalformedRecord, reason);
}

void validate_record(const QARecord& r) {
  if (r.question_id.empty()) malformed("empty question_id");
  if (r.image_id.empty()) malformed("empty image_id for " + r.question_id);
  if (r.image_path.empty()) malformed("empty image_path for " + r.question_id);
  if (trim_space(r.question).empty()) malformed("empty question for " + r.question_id);

  if (is_counting(r.question_type) != r.answer_kind.is_integer()) {
    malformed(std::string(to_string(r.question_type)) + " requires answer_kind " +
              (is_counting(r.question_type) ? "integer" : "categorical") + " (" + r.question_id + ")");
  }

  if (r.answer_kind.is_integer()) {
    if (!r.answer_kind.options.empty()) malformed("integer answers take no options (" + r.question_id + ")");
    const auto& gt = r.ground_truth;
    const bool canonical = !gt.empty() && std::all_of(gt.begin(), gt.end(), is_digit) &&
                           (gt.size() == 1 || gt.front() != '0');
    if (!canonical) {
      malformed("ground_truth '" + gt + "' is not a canonical non-negative integer (" + r.question_id + ")");
    }
    return;
  }

  const auto& options = r.answer_kind.options;
  if (options.size() < 2) malformed("categorical answers need at least two options (" + r.question_id + ")");
  std::unordered_set<std::string> seen;
  for (const auto& o : options) {
    if (o.empty() || try_normalize_answer(o, r.answer_kind) != o) {
      malformed("option '" + o + "' is not normalized (" + r.question_id + ")");
    }
    if (!seen.insert(o).second) malformed("duplicate option '" + o + "' (" + r.question_id + ")");
  }
  if (!seen.contains(r.ground_truth)) {
    throw Error(ErrorCode::GroundTruthNotInOptions,
                r.question_id + ": '" + r.ground_truth + "' not among options");
  }
}

const ordered_json& require(const ordered_json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) malformed(std::string("missing key '") + key + "'");
  return *it;
}

std::string require_string(const ordered_json& obj, const char* key) {
  const auto& v = require(obj, key);
  if (!v.is_string()) malformed(std::string("key '") + key + "' must be a string");
  return v.get<std::string>();
}

QARecord parse_record(std::string_view line, const std::filesystem::path& base_dir) {
  ordered_json obj;
  try {
    obj = ordered_json::parse(line);
  } catch (const ordered_json::parse_error& e) {
    malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) malformed("record must be a JSON object");

  QARecord r;
  r.question_id = require_string(obj, "question_id");
  r.image_id = require_string(obj, "image_id");
  std::filesystem::path image_path = require_string(obj, "image_path");
  if (!image_path.empty() && image_path.is_relative() && !base_dir.empty()) {
    image_path = (base_dir / image_path).lexically_normal();
  }
  r.image_path = image_path;
  r.question = require_string(obj, "question");

  const auto type_name = require_string(obj, "question_type");
  auto type = parse_question_type(type_name);
  if (!type) malformed("unknown question_type '" + type_name + "'");
  r.question_type = *type;

  const auto kind = require_string(obj, "answer_kind");
  if (kind == "categorical") {
    const auto& opts = require(obj, "options");
    if (!opts.is_array()) malformed("options must be an array");
    std::vector<std::string> options;
    for (const auto& o : opts) {
      if (!o.is_string()) malformed("options must be strings");
      options.push_back(o.get<std::string>());
    }
    r.answer_kind = AnswerKind::categorical(std::move(options));
  } else if (kind == "integer") {
    if (obj.contains("options")) malformed("options must be absent for integer answers");
    r.answer_kind = AnswerKind::integer();
  } else {
    malformed("answer_kind must be \"categorical\" or \"integer\", got '" + kind + "'");
  }

  r.ground_truth = require_string(obj, "ground_truth");
  return r;
}

[[noreturn]] void rethrow_at_line(const Error& e, std::size_t line) {
  throw Error(e.code(), "line " + std::to_string(line) + ": " + e.detail());
}

}  // namespace

std::string_view to_string(QuestionType type) {
  for (const auto& t : kTypeNames) {
    if (t.type == type) return t.name;
  }
  return "Unknown";
}

std::string_view display_label(QuestionType type) {
  for (const auto& t : kTypeNames) {
    if (t.type == type) return t.label;
  }
  return "Unknown";
}

std::optional<QuestionType> parse_question_type(std::string_view name) {
  for (const auto& t : kTypeNames) {
    if (t.name == name) return t.type;
  }
  return std::nullopt;
}

bool is_counting(QuestionType type) {
  return type == QuestionType::SimpleCounting || type == QuestionType::ComplexCounting;
}

Dataset::Dataset(std::vector<QARecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    validate_record(r);
    if (!by_question_.emplace(r.question_id, i).second) {
      throw Error(ErrorCode::DuplicateQuestionId, r.question_id);
    }
    by_image_[r.image_id].push_back(i);
  }
}

const QARecord* Dataset::find(std::string_view question_id) const {
  auto it = by_question_.find(std::string(question_id));
  return it == by_question_.end() ? nullptr : &records_[it->second];
}

const QARecord& Dataset::at(std::string_view question_id) const {
  if (const auto* r = find(question_id)) return *r;
  throw std::out_of_range("unknown question_id " + std::string(question_id));
}

const std::vector<std::size_t>& Dataset::by_image(std::string_view image_id) const {
  static const std::vector<std::size_t> kNone;
  auto it = by_image_.find(std::string(image_id));
  return it == by_image_.end() ? kNone : it->second;
}

Dataset Dataset::filter(QuestionType type) const {
  std::vector<QARecord> out;
  std::copy_if(records_.begin(), records_.end(), std::back_inserter(out),
               [type](const QARecord& r) { return r.question_type == type; });
  return Dataset(std::move(out));
}

std::string Dataset::digest() const { return sha256_hex(serialize_dataset(*this)); }

Dataset parse_dataset(std::string_view jsonl, const std::filesystem::path& base_dir) {
  std::vector<QARecord> records;
  std::unordered_map<std::string, std::size_t> first_line;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    auto line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim_space(line).empty()) continue;
    try {
      auto r = parse_record(line, base_dir);
      validate_record(r);
      if (auto [it, inserted] = first_line.emplace(r.question_id, line_no); !inserted) {
        throw Error(ErrorCode::DuplicateQuestionId,
                    r.question_id + " (first seen on line " + std::to_string(it->second) + ")");
      }
      records.push_back(std::move(r));
    } catch (const Error& e) {
      rethrow_at_line(e, line_no);
    }
  }
  return Dataset(std::move(records));
}

Dataset ingest_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::FileNotFound, path.string());
  }
  return parse_dataset(read_file_bytes(path), path.parent_path());
}

std::string serialize_dataset(const Dataset& dataset) {
  std::string out;
  for (const auto& r : dataset) {
    ordered_json obj;
    obj["question_id"] = r.question_id;
    obj["image_id"] = r.image_id;
    obj["image_path"] = r.image_path.generic_string();
    obj["question"] = r.question;
    obj["question_type"] = std::string(to_string(r.question_type));
    obj["answer_kind"] = r.answer_kind.is_integer() ? "integer" : "categorical";
    if (!r.answer_kind.is_integer()) obj["options"] = r.answer_kind.options;
    obj["ground_truth"] = r.ground_truth;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_dataset(dataset));
}

std::optional<std::string> try_normalize_answer(std::string_view raw, const AnswerKind& kind) {
  std::string_view s = raw;
  auto strip = [](char c) { return is_space(c) || is_punct(c); };

  if (kind.is_integer()) {
    auto t = trim_space(s);
    // A sign is meaningful for integers; "-3" must not collapse into "3".
    if (t.size() >= 2 && t.front() == '-' && is_digit(t[1])) return std::nullopt;
  }

  while (!s.empty() && strip(s.front())) s.remove_prefix(1);
  while (!s.empty() && strip(s.back())) s.remove_suffix(1);

  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](char c) {
    return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  });

  if (out.empty()) return std::nullopt;
  if (!kind.is_integer()) return out;

  if (!out.empty() && std::all_of(out.begin(), out.end(), is_digit)) {
    auto first = out.find_first_not_of('0');
    return first == std::string::npos ? std::string("0") : out.substr(first);
  }
  for (std::size_t i = 0; i < kNumerals.size(); ++i) {
    if (out == kNumerals[i]) return std::to_string(i);
  }
  return std::nullopt;
}

std::string normalize_answer(std::string_view raw, const AnswerKind& kind) {
  if (auto n = try_normalize_answer(raw, kind)) return *std::move(n);
  throw Error(ErrorCode::Unmappable, std::string(raw));
}

}  // namespace instruct_icl::data
