#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "casc/core/error.hpp"
#include "casc/core/rng.hpp"

namespace casc::pipeline {

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// Split sizes: floor(n * f_i), then the remainder goes one by one to the
// largest fractional parts (earlier split wins ties).
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * fractions[i];
    const double fl = std::floor(exact + 1e-9);
    sizes[i] = static_cast<std::size_t>(fl);
    frac[i] = exact - fl;
    used += sizes[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[order[k % 3]];
  return sizes;
}

// Seeded Fisher-Yates shuffle, then contiguous cuts.
inline DatasetSplit split_dataset(std::vector<std::string> ids, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double total = 0.0;
  std::size_t nonzero = 0;
  for (double f : fractions) {
    if (f < 0.0) fail(ErrorKind::config, "split fractions must be non-negative");
    total += f;
    nonzero += f > 0.0;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::config, "split fractions must sum to 1");
  if (ids.size() < nonzero) fail(ErrorKind::config, "fewer volumes than non-empty splits");
  const auto sizes = split_sizes(ids.size(), fractions);
  for (int i = 0; i < 3; ++i) {
    if (fractions[i] > 0.0 && sizes[i] == 0) fail(ErrorKind::config, "split leaves a requested subset empty");
  }
  std::sort(ids.begin(), ids.end());  // independent of directory listing order
  Rng rng(mix_seed(seed, "split"));
  for (std::size_t i = ids.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(ids[i - 1], ids[j]);
  }
  DatasetSplit s;
  auto it = ids.begin();
  s.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  s.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  s.test.assign(it, ids.end());
  return s;
}

}  // namespace casc::pipeline
