#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "instruct_icl/dataset.hpp"
#include "instruct_icl/exemplars.hpp"

namespace instruct_icl::prompting {

enum class Strategy { ZeroShot, AIC, IIC, BIC };

inline constexpr std::array<Strategy, 4> kAllStrategies = {Strategy::ZeroShot, Strategy::AIC,
                                                            Strategy::IIC, Strategy::BIC};

// CLI / file spelling: zero-shot, aic, iic, bic.
std::string_view to_string(Strategy s);
// Report column label: zero-shot, AIC, IIC, BIC.
std::string_view display_label(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

inline bool is_two_stage(Strategy s) { return s != Strategy::ZeroShot; }
inline bool stage1_uses_exemplars(Strategy s) { return s == Strategy::IIC || s == Strategy::BIC; }
inline bool stage2_uses_exemplars(Strategy s) { return s == Strategy::AIC || s == Strategy::BIC; }

// Named text templates with {{placeholder}} slots. Each template must use
// exactly its declared placeholder set; this is checked when parsed.
class PromptTemplateSet {
 public:
  static PromptTemplateSet parse(std::string_view text);
  static PromptTemplateSet load(const std::filesystem::path& path);
  // The templates shipped in data/templates/default.txt, compiled in.
  static const PromptTemplateSet& defaults();

  static const std::map<std::string, std::set<std::string>, std::less<>>& declared_placeholders();

  const std::string& get(std::string_view name) const;
  // A line holding nothing but one placeholder is dropped when that
  // placeholder's value is empty.
  std::string render(std::string_view name, const std::map<std::string, std::string>& values) const;

  // From a "version: ..." preamble line; "unversioned" when absent.
  const std::string& version() const { return version_; }
  // SHA-256 of the source text.
  const std::string& digest() const { return digest_; }

 private:
  std::map<std::string, std::string, std::less<>> templates_;
  std::string version_;
  std::string digest_;
};

enum class Stage { One = 1, Two = 2 };

struct RequestTag {
  std::string question_id;
  Strategy strategy = Strategy::ZeroShot;
  Stage stage = Stage::Two;
  // 0 for the first send, 1 for the tag-repair resend.
  int attempt = 0;

  bool operator==(const RequestTag&) const = default;
};

struct DecodeParams {
  double temperature = 0.0;
  int max_output_tokens = 1024;

  bool operator==(const DecodeParams&) const = default;
};

struct ModelRequest {
  Stage stage = Stage::Two;
  std::string text;
  // Empty for stage one. For stage two the target image is always last.
  std::vector<std::filesystem::path> images;
  RequestTag tag;
  DecodeParams decode;
};

struct PromptOptions {
  DecodeParams decode;
  // Stage-two exemplar images for AIC/BIC. Exemplar text is rendered either way.
  bool attach_exemplar_images = true;
};

struct PromptBundle {
  std::string question_id;
  Strategy strategy = Strategy::ZeroShot;
  exemplars::ExemplarSet exemplar_set;
  std::optional<ModelRequest> stage1;
  ModelRequest stage2;
};

// Options rendered into the answer_options_block for this record.
std::string render_options(const data::AnswerKind& kind);

// nullopt for ZeroShot. Stage one never carries images.
std::optional<ModelRequest> build_stage1(const data::QARecord& record, Strategy strategy,
                                         const exemplars::ExemplarSet& exemplars,
                                         const PromptTemplateSet& templates,
                                         const PromptOptions& options = {});

// instruction must be present exactly when the strategy is two-stage
// (MissingInstruction otherwise); it is embedded verbatim.
ModelRequest build_stage2(const data::QARecord& record, Strategy strategy,
                          std::optional<std::string_view> instruction,
                          const exemplars::ExemplarSet& exemplars, const PromptTemplateSet& templates,
                          const PromptOptions& options = {});

// The stage-two request resent with repair_suffix appended.
ModelRequest make_repair_request(const ModelRequest& original, const PromptTemplateSet& templates);

// Trimmed text between the first "<start>" and the next "<end>".
// Throws MissingAnswerTags, UnterminatedTag or EmptyAnswer.
std::string extract_answer(std::string_view response_text);

}  // namespace instruct_icl::prompting
