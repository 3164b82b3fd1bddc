#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "casc/core/error.hpp"

namespace casc {

// Dense row-major 2D grid.
template <typename T>
class Grid2 {
 public:
  using value_type = T;

  Grid2() = default;
  Grid2(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid2(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) fail(ErrorKind::shape, "Grid2: payload size does not match shape");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const Grid2& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  template <typename U>
  bool same_shape(const Grid2<U>& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid2&, const Grid2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Dense row-major 3D grid indexed (depth, row, col); axis 0 is the axial axis.
template <typename T>
class Grid3 {
 public:
  using value_type = T;

  Grid3() = default;
  Grid3(std::size_t depth, std::size_t rows, std::size_t cols, T fill = T{})
      : depth_(depth), rows_(rows), cols_(cols), data_(depth * rows * cols, fill) {}
  Grid3(std::size_t depth, std::size_t rows, std::size_t cols, std::vector<T> data)
      : depth_(depth), rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != depth_ * rows_ * cols_) fail(ErrorKind::shape, "Grid3: payload size does not match shape");
  }

  std::size_t depth() const noexcept { return depth_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane_size() const noexcept { return rows_ * cols_; }
  std::array<std::size_t, 3> shape() const noexcept { return {depth_, rows_, cols_}; }

  T& operator()(std::size_t d, std::size_t r, std::size_t c) { return data_[(d * rows_ + r) * cols_ + c]; }
  const T& operator()(std::size_t d, std::size_t r, std::size_t c) const {
    return data_[(d * rows_ + r) * cols_ + c];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::span<T> plane(std::size_t d) { return std::span<T>(data_).subspan(d * plane_size(), plane_size()); }
  std::span<const T> plane(std::size_t d) const {
    return std::span<const T>(data_).subspan(d * plane_size(), plane_size());
  }

  Grid2<T> slice(std::size_t d) const {
    auto p = plane(d);
    return Grid2<T>(rows_, cols_, std::vector<T>(p.begin(), p.end()));
  }

  void set_slice(std::size_t d, const Grid2<T>& s) {
    if (s.rows() != rows_ || s.cols() != cols_) fail(ErrorKind::shape, "Grid3::set_slice: plane shape mismatch");
    auto dst = plane(d);
    std::copy(s.values().begin(), s.values().end(), dst.begin());
  }

  template <typename U>
  bool same_shape(const Grid3<U>& other) const noexcept {
    return depth_ == other.depth() && rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  std::size_t depth_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Image2D = Grid2<float>;
using Mask2D = Grid2<std::uint8_t>;
using Mask3D = Grid3<std::uint8_t>;

// Voxel size in mm along (depth, rows, cols).
struct Spacing {
  double dz = 1.0;
  double dy = 1.0;
  double dx = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct Volume {
  std::string id;
  Grid3<float> voxels;
  Spacing spacing;

  friend bool operator==(const Volume&, const Volume&) = default;
};

template <typename T>
std::size_t count_nonzero(std::span<const T> values) {
  std::size_t n = 0;
  for (const auto& v : values) n += (v != T{}) ? 1 : 0;
  return n;
}

template <typename G>
std::size_t popcount(const G& mask) {
  return count_nonzero(mask.values());
}

}  // namespace casc
