#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace instruct_icl::kernels {

// Dot products and norms accumulate in double over float storage. Both scan
// routes below call these per row, so each row's score is bit-identical
// regardless of which route produced it.
inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

inline double norm(std::span<const float> a) {
  double acc = 0.0;
  for (float v : a) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

inline double cosine_from_parts(double dot_ab, double norm_a, double norm_b) {
  const double s = dot_ab / (norm_a * norm_b);
  return s > 1.0 ? 1.0 : (s < -1.0 ? -1.0 : s);
}

// Scores every row of a row-major [rows x dim] matrix against target.
// out.size() must equal rows; row_norms holds the precomputed row norms.
void score_rows_serial(std::span<const float> matrix, std::span<const double> row_norms,
                       std::span<const float> target, double target_norm, std::span<double> out);

void score_rows_parallel(std::span<const float> matrix, std::span<const double> row_norms,
                         std::span<const float> target, double target_norm, std::span<double> out);

}  // namespace instruct_icl::kernels
