#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "casc/core/error.hpp"
#include "casc/core/grid.hpp"
#include "casc/core/percentile.hpp"
#include "casc/core/rng.hpp"

namespace casc {

struct ClassProbabilities {
  std::vector<double> probs;
};

// Class-activation map at some resolution, tagged with the layers it came from.
struct CamMap {
  Grid2<double> values;
  std::vector<std::string> layer_ids;
};

struct AugmentedSlice {
  Image2D pixels;
  Mask2D applied_mask;
  int label = 0;
};

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::shape, "cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) fail(ErrorKind::invalid_embedding, "cosine_similarity: zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Softmax over cosine similarities between one image embedding and each class text embedding.
inline ClassProbabilities clip_probabilities(std::span<const double> image_embedding,
                                             const std::vector<std::vector<double>>& text_embeddings) {
  if (text_embeddings.size() < 2) fail(ErrorKind::contract, "clip_probabilities: need at least two classes");
  std::vector<double> sims;
  sims.reserve(text_embeddings.size());
  for (const auto& g : text_embeddings) sims.push_back(cosine_similarity(image_embedding, g));
  // Similarities are bounded by 1, so exp() cannot overflow; shifting by the max keeps it tidy anyway.
  const double top = *std::max_element(sims.begin(), sims.end());
  double total = 0.0;
  for (auto& s : sims) {
    s = std::exp(s - top);
    total += s;
  }
  for (auto& s : sims) s /= total;
  return ClassProbabilities{std::move(sims)};
}

// argmax with ties going to class 0.
inline int assign_label(const ClassProbabilities& p) {
  if (p.probs.size() != 2) fail(ErrorKind::contract, "assign_label: expected two classes");
  return p.probs[1] > p.probs[0] ? 1 : 0;
}

namespace detail {

inline void check_channels(const std::vector<Grid2<float>>& channels) {
  if (channels.empty()) fail(ErrorKind::contract, "layer_cam: empty channel set");
  for (const auto& ch : channels) {
    if (!ch.same_shape(channels.front())) fail(ErrorKind::shape, "layer_cam: channel shapes differ");
  }
}

inline double spatial_mean(const Grid2<float>& g) {
  double s = 0.0;
  for (float v : g.values()) s += v;
  return g.size() == 0 ? 0.0 : s / static_cast<double>(g.size());
}

}  // namespace detail

// Q = sum_k w_k * ReLU(G_k), with w_k the spatial mean of G_k.
inline CamMap layer_cam(const std::vector<Grid2<float>>& channel_gradients, std::string layer_id = {}) {
  detail::check_channels(channel_gradients);
  const auto& first = channel_gradients.front();
  Grid2<double> q(first.rows(), first.cols(), 0.0);
  for (const auto& g : channel_gradients) {
    const double w = detail::spatial_mean(g);
    for (std::size_t i = 0; i < g.size(); ++i) q[i] += w * std::max(0.0, static_cast<double>(g[i]));
  }
  CamMap cam{std::move(q), {}};
  if (!layer_id.empty()) cam.layer_ids.push_back(std::move(layer_id));
  return cam;
}

// Elementwise-weighted variant: Q = ReLU(sum_k ReLU(G_k) * A_k), A_k the channel activations.
inline CamMap layer_cam_elementwise(const std::vector<Grid2<float>>& channel_gradients,
                                    const std::vector<Grid2<float>>& activations, std::string layer_id = {}) {
  detail::check_channels(channel_gradients);
  if (activations.size() != channel_gradients.size())
    fail(ErrorKind::shape, "layer_cam_elementwise: activation/gradient channel count mismatch");
  const auto& first = channel_gradients.front();
  Grid2<double> q(first.rows(), first.cols(), 0.0);
  for (std::size_t k = 0; k < channel_gradients.size(); ++k) {
    const auto& g = channel_gradients[k];
    const auto& a = activations[k];
    if (!a.same_shape(g)) fail(ErrorKind::shape, "layer_cam_elementwise: activation shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) q[i] += std::max(0.0, static_cast<double>(g[i])) * a[i];
  }
  for (auto& v : q.values()) v = std::max(0.0, v);
  CamMap cam{std::move(q), {}};
  if (!layer_id.empty()) cam.layer_ids.push_back(std::move(layer_id));
  return cam;
}

// Bilinear resize with corner alignment: output corners sample input corners exactly.
inline Grid2<double> resize_bilinear(const Grid2<double>& src, std::size_t rows, std::size_t cols) {
  if (src.rows() == rows && src.cols() == cols) return src;
  Grid2<double> out(rows, cols, 0.0);
  if (src.size() == 0) return out;
  auto coord = [](std::size_t i, std::size_t out_n, std::size_t in_n) {
    if (out_n <= 1 || in_n <= 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
  };
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = coord(r, rows, src.rows());
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t y1 = std::min(y0 + 1, src.rows() - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = coord(c, cols, src.cols());
      const auto x0 = static_cast<std::size_t>(std::floor(x));
      const std::size_t x1 = std::min(x0 + 1, src.cols() - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = src(y0, x0) * (1.0 - fx) + src(y0, x1) * fx;
      const double bottom = src(y1, x0) * (1.0 - fx) + src(y1, x1) * fx;
      out(r, c) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

// Min-max normalization to [0,1]; a constant map becomes all zeros.
inline Grid2<double> min_max_normalize(const Grid2<double>& g) {
  Grid2<double> out(g.rows(), g.cols(), 0.0);
  if (g.size() == 0) return out;
  const auto [lo_it, hi_it] = std::minmax_element(g.values().begin(), g.values().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = (g[i] - lo) / (hi - lo);
  return out;
}

// Normalize each layer, upsample to the slice grid, fuse by elementwise max.
inline CamMap fuse_and_upsample(const std::vector<CamMap>& layers, std::size_t rows, std::size_t cols) {
  if (layers.empty()) fail(ErrorKind::contract, "fuse_and_upsample: no layers");
  CamMap fused{Grid2<double>(rows, cols, 0.0), {}};
  for (const auto& layer : layers) {
    auto up = resize_bilinear(min_max_normalize(layer.values), rows, cols);
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double v = std::clamp(up[i], 0.0, 1.0);
      fused.values[i] = std::max(fused.values[i], v);
    }
    fused.layer_ids.insert(fused.layer_ids.end(), layer.layer_ids.begin(), layer.layer_ids.end());
  }
  return fused;
}

// Top-alpha% of brain pixels by CAM value: strictly above the nearest-rank
// (100 - alpha)-th percentile of the CAM restricted to the brain.
inline Mask2D threshold_mask(const CamMap& cam, double alpha, const Mask2D& brain) {
  if (alpha < 0.0 || alpha > 100.0) fail(ErrorKind::contract, "threshold_mask: alpha outside [0,100]");
  if (!cam.values.same_shape(brain)) fail(ErrorKind::shape, "threshold_mask: cam/brain shape mismatch");
  Mask2D out(brain.rows(), brain.cols(), 0);
  std::vector<double> inside;
  for (std::size_t i = 0; i < brain.size(); ++i) {
    if (brain[i]) inside.push_back(cam.values[i]);
  }
  if (inside.empty()) return out;
  const double cut = percentile_nearest_rank(inside, 100.0 - alpha);
  for (std::size_t i = 0; i < brain.size(); ++i) out[i] = (brain[i] && cam.values[i] > cut) ? 1 : 0;
  return out;
}

struct Box {
  std::size_t row_min = 0, col_min = 0, row_max = 0, col_max = 0;  // inclusive

  std::size_t height() const { return row_max - row_min + 1; }
  std::size_t width() const { return col_max - col_min + 1; }
  bool contains(std::size_t r, std::size_t c) const {
    return r >= row_min && r <= row_max && c >= col_min && c <= col_max;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

// Tight bounds of the set pixels, or nullopt when the mask is empty.
inline std::optional<Box> bounding_box(const Mask2D& m) {
  std::optional<Box> box;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!m(r, c)) continue;
      if (!box) {
        box = Box{r, c, r, c};
      } else {
        box->row_min = std::min(box->row_min, r);
        box->row_max = std::max(box->row_max, r);
        box->col_min = std::min(box->col_min, c);
        box->col_max = std::max(box->col_max, c);
      }
    }
  }
  return box;
}

namespace detail {

// Summed-area table with a zero guard row/column.
class BrainIntegral {
 public:
  explicit BrainIntegral(const Mask2D& m) : cols_(m.cols() + 1), sums_((m.rows() + 1) * (m.cols() + 1), 0) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) {
        at(r + 1, c + 1) = at(r, c + 1) + at(r + 1, c) - at(r, c) + (m(r, c) ? 1 : 0);
      }
    }
  }
  long long count(const Box& b) const {
    return at(b.row_max + 1, b.col_max + 1) - at(b.row_min, b.col_max + 1) - at(b.row_max + 1, b.col_min) +
           at(b.row_min, b.col_min);
  }

 private:
  long long& at(std::size_t r, std::size_t c) { return sums_[r * cols_ + c]; }
  long long at(std::size_t r, std::size_t c) const { return sums_[r * cols_ + c]; }
  std::size_t cols_;
  std::vector<long long> sums_;
};

// Seeded rectangle inside the brain bounding box whose brain coverage is as
// close as possible to alpha% of the brain; stops early once within 2%.
inline Mask2D random_brain_rectangle(const Mask2D& brain, double alpha, std::uint64_t seed) {
  Mask2D out(brain.rows(), brain.cols(), 0);
  const auto bbox = bounding_box(brain);
  if (!bbox || alpha <= 0.0) return out;
  const BrainIntegral integral(brain);
  const long long total = integral.count(*bbox);
  const double target = alpha / 100.0 * static_cast<double>(total);
  const double tolerance = 0.02 * static_cast<double>(total);
  if (std::llround(target) == 0) return out;

  Rng rng(seed);
  Box best = *bbox;
  double best_err = std::abs(static_cast<double>(total) - target);
  const auto bh = static_cast<long long>(bbox->height());
  const auto bw = static_cast<long long>(bbox->width());
  for (int attempt = 0; attempt < 64 && best_err > tolerance; ++attempt) {
    const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    const auto center_r = static_cast<long long>(bbox->row_min + rng.below(static_cast<std::uint64_t>(bh)));
    const auto center_c = static_cast<long long>(bbox->col_min + rng.below(static_cast<std::uint64_t>(bw)));
    for (long long h = 1; h <= bh; ++h) {
      const long long w = std::clamp<long long>(std::llround(static_cast<double>(h) * aspect), 1, bw);
      long long r0 = std::clamp<long long>(center_r - h / 2, static_cast<long long>(bbox->row_min),
                                           static_cast<long long>(bbox->row_max) - h + 1);
      long long c0 = std::clamp<long long>(center_c - w / 2, static_cast<long long>(bbox->col_min),
                                           static_cast<long long>(bbox->col_max) - w + 1);
      const Box cand{static_cast<std::size_t>(r0), static_cast<std::size_t>(c0), static_cast<std::size_t>(r0 + h - 1),
                     static_cast<std::size_t>(c0 + w - 1)};
      const double err = std::abs(static_cast<double>(integral.count(cand)) - target);
      if (err < best_err) {
        best_err = err;
        best = cand;
      }
    }
  }
  for (std::size_t r = best.row_min; r <= best.row_max; ++r) {
    for (std::size_t c = best.col_min; c <= best.col_max; ++c) out(r, c) = brain(r, c);
  }
  return out;
}

}  // namespace detail

// Builds one augmented sample: positives lose their top-alpha% CAM region,
// negatives lose a seeded rectangle covering about alpha% of the brain.
inline AugmentedSlice amda_augment(const Image2D& slice, int label, const std::optional<CamMap>& cam, double alpha,
                                   std::uint64_t rng_seed, const Mask2D& brain) {
  if (!brain.same_shape(slice)) fail(ErrorKind::shape, "amda_augment: brain/slice shape mismatch");
  if (label != 0 && label != 1) fail(ErrorKind::contract, "amda_augment: label must be 0 or 1");
  AugmentedSlice out;
  out.label = label;
  if (label == 1) {
    if (!cam) fail(ErrorKind::contract, "amda_augment: positive slice requires a CAM");
    out.applied_mask = threshold_mask(*cam, alpha, brain);
  } else {
    out.applied_mask = detail::random_brain_rectangle(brain, alpha, rng_seed);
  }
  out.pixels = slice;
  for (std::size_t i = 0; i < slice.size(); ++i) {
    if (out.applied_mask[i]) out.pixels[i] = 0.0f;
  }
  return out;
}

inline AugmentedSlice amda_augment(const Image2D& slice, int label, const std::optional<CamMap>& cam, double alpha,
                                   std::uint64_t rng_seed) {
  Mask2D brain(slice.rows(), slice.cols());
  for (std::size_t i = 0; i < slice.size(); ++i) brain[i] = slice[i] != 0.0f ? 1 : 0;
  return amda_augment(slice, label, cam, alpha, rng_seed, brain);
}

}  // namespace casc
