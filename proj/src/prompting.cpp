#include "instruct_icl/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "instruct_icl/error.hpp"
#include "instruct_icl/hashing.hpp"

namespace instruct_icl::prompting {

namespace detail {
extern const std::string_view kDefaultTemplates;
}

namespace {

constexpr std::string_view kCountingOptions = "a non-negative integer count";

const std::set<std::string>& recognized_placeholders() {
  static const std::set<std::string> names = {"question",          "options",
                                              "instruction",       "exemplars",
                                              "exemplar_question", "exemplar_answer",
                                              "exemplar_index"};
  return names;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void template_error(std::string_view name, const std::string& reason) {
  throw Error(ErrorCode::TemplateError, std::string(name) + ": " + reason);
}

// Placeholder names in order of appearance. Rejects malformed braces.
std::vector<std::string> scan_placeholders(std::string_view name, std::string_view body) {
  std::vector<std::string> found;
  std::size_t pos = 0;
  while ((pos = body.find("{{", pos)) != std::string_view::npos) {
    const auto close = body.find("}}", pos + 2);
    if (close == std::string_view::npos) template_error(name, "unterminated '{{'");
    std::string placeholder(body.substr(pos + 2, close - pos - 2));
    if (!recognized_placeholders().contains(placeholder)) {
      template_error(name, "unknown placeholder '{{" + placeholder + "}}'");
    }
    found.push_back(std::move(placeholder));
    pos = close + 2;
  }
  return found;
}

bool is_header(std::string_view line, std::string& name) {
  line = trim(line);
  if (line.size() < 8 || !line.starts_with("--- ") || !line.ends_with(" ---")) return false;
  name = std::string(trim(line.substr(4, line.size() - 8)));
  return !name.empty();
}

std::string render_exemplars(const exemplars::ExemplarSet& set, const PromptTemplateSet& templates) {
  std::string out;
  for (std::size_t i = 0; i < set.exemplars.size(); ++i) {
    const auto& e = set.exemplars[i];
    if (i > 0) out += '\n';
    out += templates.render("exemplar_block", {{"exemplar_index", std::to_string(i + 1)},
                                               {"exemplar_question", e.question},
                                               {"exemplar_answer", e.answer}});
  }
  return out;
}

void check_exemplars_belong(const data::QARecord& record, const exemplars::ExemplarSet& set) {
  if (set.target_question_id != record.question_id) {
    throw std::invalid_argument("exemplar set for " + set.target_question_id + " used with " +
                                record.question_id);
  }
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::ZeroShot: return "zero-shot";
    case Strategy::AIC: return "aic";
    case Strategy::IIC: return "iic";
    case Strategy::BIC: return "bic";
  }
  return "unknown";
}

std::string_view display_label(Strategy s) {
  switch (s) {
    case Strategy::ZeroShot: return "zero-shot";
    case Strategy::AIC: return "AIC";
    case Strategy::IIC: return "IIC";
    case Strategy::BIC: return "BIC";
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  for (auto s : kAllStrategies) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

const std::map<std::string, std::set<std::string>, std::less<>>& PromptTemplateSet::declared_placeholders() {
  static const std::map<std::string, std::set<std::string>, std::less<>> declared = {
      {"stage1_base", {"question", "options"}},
      {"stage1_with_exemplars", {"question", "options", "exemplars"}},
      {"stage2_base", {"question", "options", "instruction"}},
      {"stage2_with_exemplars", {"question", "options", "instruction", "exemplars"}},
      {"exemplar_block", {"exemplar_index", "exemplar_question", "exemplar_answer"}},
      {"answer_options_block", {"options"}},
      {"tag_directive", {}},
      {"repair_suffix", {}},
  };
  return declared;
}

PromptTemplateSet PromptTemplateSet::parse(std::string_view text) {
  PromptTemplateSet set;
  set.digest_ = sha256_hex(text);
  set.version_ = "unversioned";

  std::string current;
  std::vector<std::string> lines;
  auto flush = [&] {
    if (current.empty()) return;
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    std::string body;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (i > 0) body += '\n';
      body += lines[i];
    }
    if (!set.templates_.emplace(current, std::move(body)).second) {
      template_error(current, "defined twice");
    }
    lines.clear();
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;

    std::string header;
    if (is_header(line, header)) {
      flush();
      if (!declared_placeholders().contains(header)) template_error(header, "unknown template name");
      current = header;
      continue;
    }
    if (current.empty()) {
      const auto t = trim(line);
      if (t.starts_with("version:")) set.version_ = std::string(trim(t.substr(8)));
      continue;
    }
    lines.emplace_back(line);
  }
  flush();

  for (const auto& [name, expected] : declared_placeholders()) {
    auto it = set.templates_.find(name);
    if (it == set.templates_.end()) template_error(name, "missing template");
    const auto used = scan_placeholders(name, it->second);
    const std::set<std::string> used_set(used.begin(), used.end());
    for (const auto& p : expected) {
      if (!used_set.contains(p)) template_error(name, "missing placeholder '{{" + p + "}}'");
    }
    for (const auto& p : used_set) {
      if (!expected.contains(p)) template_error(name, "placeholder '{{" + p + "}}' not allowed here");
    }
  }
  const auto& tag = set.templates_.at("tag_directive");
  if (tag.find("<start>") == std::string::npos || tag.find("<end>") == std::string::npos) {
    template_error("tag_directive", "must contain the literal <start> and <end> tags");
  }
  return set;
}

PromptTemplateSet PromptTemplateSet::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::FileNotFound, path.string());
  return parse(read_file_bytes(path));
}

const PromptTemplateSet& PromptTemplateSet::defaults() {
  static const PromptTemplateSet set = parse(detail::kDefaultTemplates);
  return set;
}

const std::string& PromptTemplateSet::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) template_error(name, "missing template");
  return it->second;
}

std::string PromptTemplateSet::render(std::string_view name,
                                      const std::map<std::string, std::string>& values) const {
  const auto& body = get(name);
  std::string out;
  out.reserve(body.size() * 2);
  std::size_t line_start = 0;
  bool first_line = true;
  while (line_start <= body.size()) {
    auto line_end = body.find('\n', line_start);
    if (line_end == std::string::npos) line_end = body.size();
    std::string_view line(body.data() + line_start, line_end - line_start);
    line_start = line_end + 1;

    const auto t = trim(line);
    if (t.starts_with("{{") && t.ends_with("}}") && t.find("{{", 2) == std::string_view::npos) {
      auto it = values.find(std::string(t.substr(2, t.size() - 4)));
      if (it != values.end() && it->second.empty()) continue;
    }

    if (!first_line) out += '\n';
    first_line = false;
    std::size_t pos = 0;
    while (pos < line.size()) {
      const auto open = line.find("{{", pos);
      if (open == std::string_view::npos) {
        out.append(line.substr(pos));
        break;
      }
      const auto close = line.find("}}", open + 2);
      out.append(line.substr(pos, open - pos));
      const std::string placeholder(line.substr(open + 2, close - open - 2));
      auto it = values.find(placeholder);
      if (it == values.end()) template_error(name, "no value for '{{" + placeholder + "}}'");
      out += it->second;
      pos = close + 2;
    }
  }
  return out;
}

std::string render_options(const data::AnswerKind& kind) {
  if (kind.is_integer()) return std::string(kCountingOptions);
  std::string out;
  for (std::size_t i = 0; i < kind.options.size(); ++i) {
    if (i > 0) out += ", ";
    out += kind.options[i];
  }
  return out;
}

std::optional<ModelRequest> build_stage1(const data::QARecord& record, Strategy strategy,
                                         const exemplars::ExemplarSet& exemplars,
                                         const PromptTemplateSet& templates,
                                         const PromptOptions& options) {
  if (!is_two_stage(strategy)) return std::nullopt;
  check_exemplars_belong(record, exemplars);

  std::map<std::string, std::string> values = {
      {"question", record.question},
      {"options", templates.render("answer_options_block", {{"options", render_options(record.answer_kind)}})},
  };
  const bool with_exemplars = stage1_uses_exemplars(strategy);
  if (with_exemplars) values["exemplars"] = render_exemplars(exemplars, templates);

  ModelRequest req;
  req.stage = Stage::One;
  req.text = templates.render(with_exemplars ? "stage1_with_exemplars" : "stage1_base", values);
  req.tag = {record.question_id, strategy, Stage::One, 0};
  req.decode = options.decode;
  return req;
}

ModelRequest build_stage2(const data::QARecord& record, Strategy strategy,
                          std::optional<std::string_view> instruction,
                          const exemplars::ExemplarSet& exemplars, const PromptTemplateSet& templates,
                          const PromptOptions& options) {
  check_exemplars_belong(record, exemplars);
  if (is_two_stage(strategy) && !instruction) {
    throw Error(ErrorCode::MissingInstruction, record.question_id + " (" + std::string(to_string(strategy)) + ")");
  }
  if (!is_two_stage(strategy) && instruction) {
    throw Error(ErrorCode::MissingInstruction, "zero-shot takes no instruction (" + record.question_id + ")");
  }

  std::map<std::string, std::string> values = {
      {"question", record.question},
      {"options", templates.render("answer_options_block", {{"options", render_options(record.answer_kind)}})},
      {"instruction", instruction ? std::string(*instruction) : std::string()},
  };
  const bool with_exemplars = stage2_uses_exemplars(strategy);
  if (with_exemplars) values["exemplars"] = render_exemplars(exemplars, templates);

  ModelRequest req;
  req.stage = Stage::Two;
  req.text = templates.render(with_exemplars ? "stage2_with_exemplars" : "stage2_base", values);
  req.text += "\n";
  req.text += templates.get("tag_directive");
  if (with_exemplars && options.attach_exemplar_images) {
    for (const auto& e : exemplars.exemplars) req.images.push_back(e.image_path);
  }
  req.images.push_back(record.image_path);
  req.tag = {record.question_id, strategy, Stage::Two, 0};
  req.decode = options.decode;
  return req;
}

ModelRequest make_repair_request(const ModelRequest& original, const PromptTemplateSet& templates) {
  ModelRequest req = original;
  req.text += "\n\n";
  req.text += templates.get("repair_suffix");
  req.tag.attempt = original.tag.attempt + 1;
  return req;
}

std::string extract_answer(std::string_view response_text) {
  constexpr std::string_view kStart = "<start>";
  constexpr std::string_view kEnd = "<end>";
  const auto start = response_text.find(kStart);
  if (start == std::string_view::npos) throw Error(ErrorCode::MissingAnswerTags, "no <start> tag");
  const auto begin = start + kStart.size();
  const auto end = response_text.find(kEnd, begin);
  if (end == std::string_view::npos) throw Error(ErrorCode::UnterminatedTag, "<start> without a later <end>");
  const auto inner = trim(response_text.substr(begin, end - begin));
  if (inner.empty()) throw Error(ErrorCode::EmptyAnswer, "tags enclose no answer");
  return std::string(inner);
}

}  // namespace instruct_icl::prompting
