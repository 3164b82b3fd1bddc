#pragma once

#include <cmath>
#include <vector>

#include "casc/core/grid.hpp"

namespace casc {

// Brain area: voxels with nonzero original intensity.
inline Mask3D brain_mask(const Volume& volume) {
  const auto& v = volume.voxels;
  Mask3D mask(v.depth(), v.rows(), v.cols());
  for (std::size_t i = 0; i < v.size(); ++i) mask[i] = v[i] != 0.0f ? 1 : 0;
  return mask;
}

inline Mask2D brain_mask(const Image2D& slice) {
  Mask2D mask(slice.rows(), slice.cols());
  for (std::size_t i = 0; i < slice.size(); ++i) mask[i] = slice[i] != 0.0f ? 1 : 0;
  return mask;
}

// Per-volume z-scoring of brain voxels with population statistics.
// Background stays exactly 0. A brain with std below 1e-8 maps to 0.
inline Volume normalize_brain(const Volume& volume) {
  Volume out = volume;
  auto& vox = out.voxels;
  double sum = 0.0;
  std::size_t n = 0;
  for (float x : vox.values()) {
    if (x != 0.0f) {
      sum += x;
      ++n;
    }
  }
  if (n == 0) return out;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (float x : vox.values()) {
    if (x != 0.0f) ss += (x - mean) * (x - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  for (auto& x : vox.values()) {
    if (x == 0.0f) continue;
    x = sd < 1e-8 ? 0.0f : static_cast<float>((x - mean) / sd);
  }
  return out;
}

inline std::vector<Image2D> extract_slices(const Volume& volume) {
  std::vector<Image2D> slices;
  slices.reserve(volume.voxels.depth());
  for (std::size_t d = 0; d < volume.voxels.depth(); ++d) slices.push_back(volume.voxels.slice(d));
  return slices;
}

// Inverse of extract_slices for any plane type.
template <typename T>
Grid3<T> stack(const std::vector<Grid2<T>>& planes) {
  if (planes.empty()) return {};
  Grid3<T> out(planes.size(), planes.front().rows(), planes.front().cols());
  for (std::size_t d = 0; d < planes.size(); ++d) out.set_slice(d, planes[d]);
  return out;
}

inline Volume stack_volume(const std::vector<Image2D>& slices, std::string id = {}, Spacing spacing = {}) {
  return Volume{std::move(id), stack(slices), spacing};
}

}  // namespace casc
