#include "instruct_icl/kernels/similarity_scan.hpp"

#include <omp.h>

#include <cstdint>

namespace instruct_icl::kernels {

void score_rows_serial(std::span<const float> matrix, std::span<const double> row_norms,
                       std::span<const float> target, double target_norm, std::span<double> out) {
  const std::size_t dim = target.size();
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = cosine_from_parts(dot(matrix.subspan(r * dim, dim), target), target_norm, row_norms[r]);
  }
}

void score_rows_parallel(std::span<const float> matrix, std::span<const double> row_norms,
                         std::span<const float> target, double target_norm, std::span<double> out) {
  const std::size_t dim = target.size();
  const auto rows = static_cast<std::int64_t>(out.size());
  // Below a few thousand multiply-adds the fork/join costs more than the scan.
  const bool worth_it = out.size() * dim >= 16384;
#pragma omp parallel for schedule(static) if (worth_it)
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto row = static_cast<std::size_t>(r);
    out[row] = cosine_from_parts(dot(matrix.subspan(row * dim, dim), target), target_norm, row_norms[row]);
  }
}

}  // namespace instruct_icl::kernels
