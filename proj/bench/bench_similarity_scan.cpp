// Serial vs OpenMP similarity scan, and the full top-k query on both routes.
#include <benchmark/benchmark.h>

#include <map>
#include <random>
#include <vector>

#include "instruct_icl/kernels/similarity_scan.hpp"
#include "instruct_icl/vector_index.hpp"

namespace {

using instruct_icl::retrieval::EmbeddingIndex;
using instruct_icl::retrieval::EmbeddingRecord;
using instruct_icl::retrieval::ScanPolicy;

struct Fixture {
  EmbeddingIndex index;
  std::vector<float> matrix;
  std::vector<double> norms;
  std::vector<float> target;
};

const Fixture& fixture(std::size_t rows, std::size_t dim) {
  static std::map<std::pair<std::size_t, std::size_t>, Fixture> cache;
  auto& f = cache[{rows, dim}];
  if (!f.matrix.empty()) return f;
  std::mt19937 rng(7);
  std::normal_distribution<float> dist;
  std::vector<EmbeddingRecord> records;
  for (std::size_t r = 0; r < rows; ++r) {
    EmbeddingRecord rec{"img_" + std::to_string(r), std::vector<float>(dim)};
    for (auto& v : rec.vector) v = dist(rng);
    f.matrix.insert(f.matrix.end(), rec.vector.begin(), rec.vector.end());
    f.norms.push_back(instruct_icl::kernels::norm(rec.vector));
    records.push_back(std::move(rec));
  }
  f.target.resize(dim);
  for (auto& v : f.target) v = dist(rng);
  f.index = instruct_icl::retrieval::build_index(std::move(records));
  return f;
}

template <bool Parallel>
void BM_ScoreRows(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)), 512);
  const double tn = instruct_icl::kernels::norm(f.target);
  std::vector<double> out(f.norms.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      instruct_icl::kernels::score_rows_parallel(f.matrix, f.norms, f.target, tn, out);
    } else {
      instruct_icl::kernels::score_rows_serial(f.matrix, f.norms, f.target, tn, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <ScanPolicy Policy>
void BM_QueryTopK(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)), 512);
  for (auto _ : state) {
    auto hits = f.index.query_top_k(f.target, 16, {}, Policy);
    benchmark::DoNotOptimize(hits.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ScoreRows<false>)->Name("score_rows/serial")->Arg(2188)->Arg(20000);
BENCHMARK(BM_ScoreRows<true>)->Name("score_rows/openmp")->Arg(2188)->Arg(20000);
BENCHMARK(BM_QueryTopK<ScanPolicy::Serial>)->Name("query_top_k/serial")->Arg(2188)->Arg(20000);
BENCHMARK(BM_QueryTopK<ScanPolicy::Parallel>)->Name("query_top_k/openmp")->Arg(2188)->Arg(20000);

BENCHMARK_MAIN();
