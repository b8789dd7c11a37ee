#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "instruct_icl/dataset.hpp"
#include "instruct_icl/vector_index.hpp"

namespace instruct_icl::exemplars {

struct Exemplar {
  std::string question_id;
  std::string image_id;
  std::filesystem::path image_path;
  std::string question;
  std::string answer;
  double similarity = 0.0;

  bool operator==(const Exemplar&) const = default;
};

struct ExemplarSet {
  std::string target_question_id;
  // Descending similarity.
  std::vector<Exemplar> exemplars;
  // Categorical options with no same-type pool record carrying that answer,
  // in option order.
  std::vector<std::string> missing_classes;

  bool operator==(const ExemplarSet&) const = default;
};

inline constexpr std::size_t kCountingExemplars = 2;

// Categorical targets get the most similar pool record for every answer
// option; counting targets get the two most similar pool records. Only pool
// records of the target's question type are candidates, and every record on
// the target's own image is excluded. Similarity ties resolve by image_id,
// then question_id, ascending.
//
// Throws EmptyPool when no candidate remains, IndexMissingImage when the
// target or a candidate image has no embedding.
ExemplarSet select_exemplars(const data::QARecord& target, const data::Dataset& pool,
                             const retrieval::EmbeddingIndex& index);

}  // namespace instruct_icl::exemplars
