#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "casc/core/error.hpp"

namespace casc {

// 1-based nearest rank of the p-th percentile in a list of n values:
// ceil(p/100 * n), clamped to [1, n].
inline std::size_t nearest_rank(double percent, std::size_t n) {
  if (n == 0) fail(ErrorKind::contract, "nearest_rank: empty value list");
  const double raw = std::ceil(percent * static_cast<double>(n) / 100.0 - 1e-9);
  if (raw <= 1.0) return 1;
  const auto rank = static_cast<std::size_t>(raw);
  return std::min(rank, n);
}

// Nearest-rank percentile of an unsorted value list.
template <typename T>
T percentile_nearest_rank(std::span<const T> values, double percent) {
  std::vector<T> sorted(values.begin(), values.end());
  const std::size_t k = nearest_rank(percent, sorted.size()) - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  return sorted[k];
}

template <typename T>
T percentile_nearest_rank(const std::vector<T>& values, double percent) {
  return percentile_nearest_rank(std::span<const T>(values), percent);
}

}  // namespace casc
