#pragma once
// Shared helpers for the unit and acceptance tests: scratch directories,
// random data generators and brute-force oracles written independently of
// the library's own ranking and selection code.

#include <algorithm>
#include <cstdio>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "instruct_icl/dataset.hpp"
#include "instruct_icl/vector_index.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path data_dir() { return fs::path(INSTRUCT_ICL_DATA_DIR); }
inline fs::path fixture_dir() { return data_dir() / "fixture"; }

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("instruct-icl-" + tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

// ---- retrieval oracle -------------------------------------------------------

struct OracleHit {
  std::string id;
  double score;
};

inline double oracle_cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += double(a[i]) * double(b[i]);
  for (float x : a) aa += double(x) * double(x);
  for (float x : b) bb += double(x) * double(x);
  double s = ab / (std::sqrt(aa) * std::sqrt(bb));
  return std::clamp(s, -1.0, 1.0);
}

// Scores every candidate, sorts the whole list and truncates.
inline std::vector<OracleHit> oracle_top_k(const std::vector<instruct_icl::retrieval::EmbeddingRecord>& recs,
                                           const std::vector<float>& target, std::size_t k,
                                           const std::set<std::string>& exclude) {
  std::vector<OracleHit> all;
  for (const auto& r : recs) {
    if (exclude.count(r.image_id)) continue;
    all.push_back({r.image_id, oracle_cosine(target, r.vector)});
  }
  std::stable_sort(all.begin(), all.end(), [](const OracleHit& x, const OracleHit& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.id < y.id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// Random records; roughly one in eight rows duplicates an earlier vector so
// exact score ties are exercised.
inline std::vector<instruct_icl::retrieval::EmbeddingRecord> random_records(std::mt19937_64& rng,
                                                                             std::size_t n,
                                                                             std::size_t dim) {
  std::normal_distribution<float> nd;
  std::uniform_int_distribution<int> coin(0, 7);
  std::vector<instruct_icl::retrieval::EmbeddingRecord> recs;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < n; ++i) {
    instruct_icl::retrieval::EmbeddingRecord r;
    r.image_id = "img" + std::to_string(order[i]);
    if (i > 0 && coin(rng) == 0) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      r.vector = recs[pick(rng)].vector;
    } else {
      r.vector.resize(dim);
      do {
        for (auto& v : r.vector) v = nd(rng);
      } while (std::all_of(r.vector.begin(), r.vector.end(), [](float v) { return v == 0.0f; }));
    }
    recs.push_back(std::move(r));
  }
  return recs;
}

// ---- exemplar selection oracle ---------------------------------------------

struct OracleSelection {
  std::vector<std::string> question_ids;
  std::vector<std::string> missing;
};

// Enumerates every same-type candidate off the target image and picks, by a
// linear scan with an explicit "better than" predicate, either one best per
// option or the best two overall.
inline OracleSelection oracle_select(const instruct_icl::data::QARecord& target,
                                     const instruct_icl::data::Dataset& pool,
                                     const instruct_icl::retrieval::EmbeddingIndex& index) {
  struct Cand {
    const instruct_icl::data::QARecord* rec;
    double sim;
  };
  const auto tv = index.vector(target.image_id);
  std::vector<float> t(tv.begin(), tv.end());
  std::vector<Cand> cands;
  for (const auto& r : pool) {
    if (r.question_type != target.question_type || r.image_id == target.image_id) continue;
    const auto v = index.vector(r.image_id);
    cands.push_back({&r, oracle_cosine(t, std::vector<float>(v.begin(), v.end()))});
  }
  auto better = [](const Cand& a, const Cand& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    if (a.rec->image_id != b.rec->image_id) return a.rec->image_id < b.rec->image_id;
    return a.rec->question_id < b.rec->question_id;
  };
  std::vector<Cand> chosen;
  OracleSelection out;
  if (target.answer_kind.is_integer()) {
    for (int round = 0; round < 2; ++round) {
      const Cand* best = nullptr;
      for (const auto& c : cands) {
        bool taken = false;
        for (const auto& x : chosen) taken |= (x.rec == c.rec);
        if (taken) continue;
        if (!best || better(c, *best)) best = &c;
      }
      if (best) chosen.push_back(*best);
    }
  } else {
    for (const auto& opt : target.answer_kind.options) {
      const Cand* best = nullptr;
      for (const auto& c : cands) {
        if (c.rec->ground_truth != opt) continue;
        if (!best || better(c, *best)) best = &c;
      }
      if (best) {
        chosen.push_back(*best);
      } else {
        out.missing.push_back(opt);
      }
    }
    std::sort(chosen.begin(), chosen.end(), better);
  }
  for (const auto& c : chosen) out.question_ids.push_back(c.rec->question_id);
  return out;
}

// One randomized (target, pool, index) instance. Pools mix question types,
// may put records on the target's own image, share vectors between images
// and put several questions on one image, so every tie-break path is hit.
struct SelectionInstance {
  instruct_icl::data::QARecord target;
  instruct_icl::data::Dataset pool;
  instruct_icl::retrieval::EmbeddingIndex index;
};

inline SelectionInstance random_selection_instance(std::mt19937_64& rng, bool counting) {
  using instruct_icl::data::AnswerKind;
  using instruct_icl::data::QARecord;
  using instruct_icl::data::QuestionType;
  std::uniform_int_distribution<int> n_images_d(2, 40);
  std::uniform_int_distribution<int> dim_d(2, 24);
  const int n_images = n_images_d(rng);
  const std::size_t dim = static_cast<std::size_t>(dim_d(rng));
  auto recs = random_records(rng, static_cast<std::size_t>(n_images), dim);

  const QuestionType qtype = counting ? QuestionType::SimpleCounting : QuestionType::DensityEstimation;
  const QuestionType other = counting ? QuestionType::ComplexCounting : QuestionType::BuildingCondition;
  const std::vector<std::string> dens = {"low", "moderate", "high"};
  const std::vector<std::string> bc = {"flooded", "non-flooded"};

  auto make = [&](const std::string& qid, const std::string& image, QuestionType t, std::string gt) {
    QARecord r;
    r.question_id = qid;
    r.image_id = image;
    r.image_path = image + ".png";
    r.question = "question about " + image;
    r.question_type = t;
    if (instruct_icl::data::is_counting(t)) {
      r.answer_kind = AnswerKind::integer();
    } else {
      r.answer_kind = AnswerKind::categorical(t == QuestionType::DensityEstimation ? dens : bc);
    }
    r.ground_truth = std::move(gt);
    return r;
  };
  auto random_answer = [&](QuestionType t) -> std::string {
    if (instruct_icl::data::is_counting(t)) return std::to_string(std::uniform_int_distribution<int>(0, 9)(rng));
    const auto& opts = t == QuestionType::DensityEstimation ? dens : bc;
    // Skew towards the first options so some classes go missing.
    std::uniform_int_distribution<std::size_t> pick(0, opts.size() - 1);
    return opts[std::min(pick(rng), pick(rng))];
  };

  std::vector<QARecord> pool;
  std::uniform_int_distribution<int> per_image(0, 3);
  std::uniform_int_distribution<int> coin(0, 3);
  int q = 0;
  for (const auto& r : recs) {
    const int m = per_image(rng);
    for (int j = 0; j < m; ++j) {
      const QuestionType t = coin(rng) == 0 ? other : qtype;
      char qid[16];
      std::snprintf(qid, sizeof qid, "q%04d", q++);
      pool.push_back(make(qid, r.image_id, t, random_answer(t)));
    }
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  // Make sure at least one candidate survives the target exclusion.
  const std::string target_image = recs[0].image_id;
  pool.push_back(make("q_extra", recs[1].image_id, qtype, random_answer(qtype)));

  SelectionInstance inst;
  inst.target = make("target", target_image, qtype, random_answer(qtype));
  inst.pool = instruct_icl::data::Dataset(std::move(pool));
  inst.index = instruct_icl::retrieval::build_index(std::move(recs));
  return inst;
}

}  // namespace testing_support
