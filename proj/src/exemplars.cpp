#include "instruct_icl/exemplars.hpp"

#include <algorithm>
#include <map>

#include "instruct_icl/error.hpp"

namespace instruct_icl::exemplars {
namespace {

struct Candidate {
  const data::QARecord* record;
  double similarity;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  if (a.record->image_id != b.record->image_id) return a.record->image_id < b.record->image_id;
  return a.record->question_id < b.record->question_id;
}

Exemplar to_exemplar(const Candidate& c) {
  return Exemplar{c.record->question_id, c.record->image_id, c.record->image_path,
                  c.record->question,    c.record->ground_truth, c.similarity};
}

}  // namespace

ExemplarSet select_exemplars(const data::QARecord& target, const data::Dataset& pool,
                             const retrieval::EmbeddingIndex& index) {
  std::vector<const data::QARecord*> eligible;
  for (const auto& r : pool) {
    if (r.question_type == target.question_type && r.image_id != target.image_id) {
      if (!index.contains(r.image_id)) throw Error(ErrorCode::IndexMissingImage, r.image_id);
      eligible.push_back(&r);
    }
  }
  if (eligible.empty()) {
    throw Error(ErrorCode::EmptyPool, "no " + std::string(data::to_string(target.question_type)) +
                                          " pool records for " + target.question_id);
  }

  // One scan over the whole index ranks every image; only eligible images
  // are then read back out of the ranking.
  const auto target_vec = index.vector(target.image_id);
  const auto ranking = index.query_top_k(target_vec, index.size(), {target.image_id});
  std::map<std::string_view, double> image_score;
  for (const auto& hit : ranking) image_score.emplace(hit.image_id, hit.score);

  std::vector<Candidate> ranked;
  ranked.reserve(eligible.size());
  for (const auto* r : eligible) ranked.push_back({r, image_score.at(r->image_id)});
  std::sort(ranked.begin(), ranked.end(), ranks_before);

  ExemplarSet out;
  out.target_question_id = target.question_id;

  if (target.answer_kind.is_integer()) {
    const auto n = std::min(kCountingExemplars, ranked.size());
    for (std::size_t i = 0; i < n; ++i) out.exemplars.push_back(to_exemplar(ranked[i]));
    return out;
  }

  // First hit per answer in ranking order is that class's argmax.
  std::map<std::string_view, const Candidate*> best;
  for (const auto& c : ranked) best.emplace(c.record->ground_truth, &c);

  std::vector<Candidate> chosen;
  for (const auto& option : target.answer_kind.options) {
    if (auto it = best.find(option); it != best.end()) {
      chosen.push_back(*it->second);
    } else {
      out.missing_classes.push_back(option);
    }
  }
  std::sort(chosen.begin(), chosen.end(), ranks_before);
  for (const auto& c : chosen) out.exemplars.push_back(to_exemplar(c));
  return out;
}

}  // namespace instruct_icl::exemplars
