#pragma once

#include <cstddef>

namespace prodretrieve::kernels {

// All dot products in the library go through these two functions. Both use
// the same eight-lane accumulation order, so dot() and dot_block<Q>() agree
// bit-for-bit and blocking or threading never changes a distance value.

inline constexpr std::size_t kLanes = 8;

inline float combine_lanes(const float* acc) {
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

inline float dot(const float* a, const float* b, std::size_t dim) {
  float acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= dim; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  }
  const std::size_t rem = dim - i;
  for (std::size_t l = 0; l < rem && l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  return combine_lanes(acc);
}

/// out[j] = dot(queries[j], row) for j < Q; one pass over `row`.
template <std::size_t Q>
inline void dot_block(const float* const* queries, const float* row, std::size_t dim, float* out) {
  float acc[Q][kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= dim; i += kLanes) {
    for (std::size_t j = 0; j < Q; ++j) {
      for (std::size_t l = 0; l < kLanes; ++l) acc[j][l] += queries[j][i + l] * row[i + l];
    }
  }
  const std::size_t rem = dim - i;
  for (std::size_t j = 0; j < Q; ++j) {
    for (std::size_t l = 0; l < rem && l < kLanes; ++l) acc[j][l] += queries[j][i + l] * row[i + l];
    out[j] = combine_lanes(acc[j]);
  }
}

}  // namespace prodretrieve::kernels
