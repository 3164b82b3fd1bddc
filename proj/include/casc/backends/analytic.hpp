#pragma once

// Deterministic closed-form stand-ins for the learned components. They are
// built so that bright compact blobs behave like tumors end to end; they do
// not imitate real model quality.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "casc/backends/backend.hpp"
#include "casc/core/percentile.hpp"
#include "casc/labeling.hpp"

namespace casc::backends {

struct AnalyticOptions {
  double tau = 0.5;              // region-grow tolerance below the fg intensity
  double smoothing_sigma = 1.0;  // pixels, for pseudo-gradients
  double hyper_angle_deg = 6.0;  // angle between the tissue and tumor text directions
};

namespace analytic {

// Embedding layout: bin 0 flags an image without brain pixels, bins 1..32
// hold sqrt-normalized counts of brain intensities over [-4, 12) in 0.5 steps.
inline constexpr std::size_t kHistBins = 32;
inline constexpr double kHistLo = -4.0;
inline constexpr double kHistStep = 0.5;
inline constexpr std::size_t kEmbeddingDim = kHistBins + 1;
// Bins whose lower edge lies in [-2, 2) are "typical tissue"; from 2 upward "hyperintense".
inline constexpr std::size_t kTissueFirst = 1 + 4, kTissueLast = 1 + 11;
inline constexpr std::size_t kHyperFirst = 1 + 12, kHyperLast = kHistBins;

inline std::size_t intensity_bin(double v) {
  const double idx = std::floor((v - kHistLo) / kHistStep);
  return 1 + static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(kHistBins - 1)));
}

inline std::vector<double> tissue_direction() {
  std::vector<double> g(kEmbeddingDim, 0.0);
  const double w = 1.0 / std::sqrt(static_cast<double>(kTissueLast - kTissueFirst + 1));
  for (std::size_t b = kTissueFirst; b <= kTissueLast; ++b) g[b] = w;
  return g;
}

inline std::vector<double> hyper_direction() {
  std::vector<double> g(kEmbeddingDim, 0.0);
  const double w = 1.0 / std::sqrt(static_cast<double>(kHyperLast - kHyperFirst + 1));
  for (std::size_t b = kHyperFirst; b <= kHyperLast; ++b) g[b] = w;
  return g;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& x : k) x /= total;
  return k;
}

// Separable Gaussian blur with zero padding.
inline Grid2<double> gaussian_blur(const Grid2<double>& src, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const auto rows = static_cast<long>(src.rows()), cols = static_cast<long>(src.cols());
  Grid2<double> tmp(src.rows(), src.cols(), 0.0), out(src.rows(), src.cols(), 0.0);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const long cc = c + i;
        if (cc >= 0 && cc < cols) s += k[i + radius] * src(r, cc);
      }
      tmp(r, c) = s;
    }
  }
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const long rr = r + i;
        if (rr >= 0 && rr < rows) s += k[i + radius] * tmp(rr, c);
      }
      out(r, c) = s;
    }
  }
  return out;
}

// Smoothed deviation of brain intensities from the slice's brain median; zero outside the brain.
inline Grid2<double> smoothed_deviation(const Image2D& slice, double sigma) {
  std::vector<float> brain;
  for (float v : slice.values()) {
    if (v != 0.0f) brain.push_back(v);
  }
  Grid2<double> dev(slice.rows(), slice.cols(), 0.0);
  if (brain.empty()) return dev;
  const double median = percentile_nearest_rank(brain, 50.0);
  for (std::size_t i = 0; i < slice.size(); ++i) {
    if (slice[i] != 0.0f) dev[i] = slice[i] - median;
  }
  return gaussian_blur(dev, sigma);
}

inline Image2D to_float(const Grid2<double>& g) {
  Image2D out(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<float>(g[i]);
  return out;
}

inline Grid2<double> average_pool2(const Grid2<double>& g) {
  const std::size_t rows = (g.rows() + 1) / 2, cols = (g.cols() + 1) / 2;
  Grid2<double> out(rows, cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      int n = 0;
      for (std::size_t dr = 0; dr < 2; ++dr) {
        for (std::size_t dc = 0; dc < 2; ++dc) {
          const std::size_t rr = 2 * r + dr, cc = 2 * c + dc;
          if (rr < g.rows() && cc < g.cols()) {
            s += g(rr, cc);
            ++n;
          }
        }
      }
      out(r, c) = s / n;
    }
  }
  return out;
}

// Otsu threshold over a value list using a 256-bin histogram on [min, max].
// Returns nullopt for fewer than two distinct values.
inline std::optional<double> otsu_threshold(const std::vector<float>& values) {
  if (values.empty()) return std::nullopt;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return std::nullopt;
  constexpr int kBins = 256;
  const double width = (hi - lo) / kBins;
  std::vector<double> hist(kBins, 0.0);
  for (float v : values) {
    const int b = std::min(kBins - 1, static_cast<int>((v - lo) / width));
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[b];
    sum0 += b * hist[b];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return lo + width * (best_bin + 1);
}

}  // namespace analytic

class AnalyticBackend : public Backend {
 public:
  explicit AnalyticBackend(AnalyticOptions options = {}) : options_(options) {}

  const AnalyticOptions& options() const { return options_; }

  BackendDescriptor describe() const override {
    BackendDescriptor d;
    d.kind = BackendKind::analytic;
    d.capabilities = {Capability::embed_image,     Capability::embed_text,       Capability::train_classifier,
                      Capability::gradient_maps,   Capability::segment_prompted, Capability::train_segmenter,
                      Capability::predict_volume};
    d.layer_ids = {"full", "half"};
    return d;
  }

  // Hellinger embedding of the brain intensity histogram; no brain -> unit vector on bin 0.
  std::vector<double> embed_image(const Image2D& image) const override {
    using namespace analytic;
    std::vector<double> e(kEmbeddingDim, 0.0);
    std::size_t n = 0;
    for (float v : image.values()) {
      if (v == 0.0f) continue;
      e[intensity_bin(v)] += 1.0;
      ++n;
    }
    if (n == 0) {
      e[0] = 1.0;
      return e;
    }
    for (std::size_t b = 1; b < kEmbeddingDim; ++b) e[b] = std::sqrt(e[b] / static_cast<double>(n));
    return e;
  }

  // Prompts mentioning a tumor or hyperintensity map to the tumor direction, all others to typical tissue.
  std::vector<double> embed_text(const std::string& text) const override {
    using namespace analytic;
    const bool tumor = text.find("tumor") != std::string::npos || text.find("hyperintens") != std::string::npos;
    auto tissue = tissue_direction();
    if (!tumor) return tissue;
    const auto hyper = hyper_direction();
    const double theta = options_.hyper_angle_deg * std::numbers::pi / 180.0;
    for (std::size_t i = 0; i < tissue.size(); ++i) tissue[i] = std::cos(theta) * tissue[i] + std::sin(theta) * hyper[i];
    return tissue;
  }

  ModelState train_classifier(const std::vector<LabeledImage>& samples, std::uint64_t seed) const override {
    if (samples.empty()) fail(ErrorKind::empty_pool, "train_classifier: no samples");
    std::size_t positives = 0;
    for (const auto& s : samples) positives += s.label == 1;
    return {{"model", "analytic-classifier"},
            {"trained", true},
            {"samples", samples.size()},
            {"positives", positives},
            {"seed", seed},
            {"sigma", options_.smoothing_sigma}};
  }

  ClassifierOutput classify_with_maps(const ModelState& classifier, const Image2D& slice) const override {
    if (!classifier.is_object() || classifier.value("model", "") != "analytic-classifier" ||
        !classifier.value("trained", false)) {
      fail(ErrorKind::state, "classify_with_maps: classifier is not trained");
    }
    const double sigma = classifier.value("sigma", options_.smoothing_sigma);
    const auto dev = analytic::smoothed_deviation(slice, sigma);
    std::size_t brain = 0, hot = 0;
    for (std::size_t i = 0; i < slice.size(); ++i) {
      if (slice[i] == 0.0f) continue;
      ++brain;
      hot += dev[i] > 1.0;
    }
    ClassifierOutput out;
    const double frac = brain ? static_cast<double>(hot) / static_cast<double>(brain) : 0.0;
    out.probability = 1.0 - std::exp(-frac / 0.01);

    Grid2<double> act(slice.rows(), slice.cols(), 0.0);
    for (std::size_t i = 0; i < slice.size(); ++i) act[i] = std::max(0.0, static_cast<double>(slice[i]));
    act = analytic::gaussian_blur(act, sigma);

    out.layers.push_back(LayerMaps{"full", {analytic::to_float(dev)}, {analytic::to_float(act)}});
    out.layers.push_back(LayerMaps{
        "half", {analytic::to_float(analytic::average_pool2(dev))}, {analytic::to_float(analytic::average_pool2(act))}});
    return out;
  }

  // Region grow from the fg point over pixels at least (fg intensity - tau),
  // clipped to the box. A bg corner whose own intensity fails that test blocks
  // itself and its 4-neighbours.
  Mask2D segment_prompted(const Image2D& slice, const PromptSet& prompts) const override {
    const auto& fg = prompts.foreground();
    if (fg.row >= slice.rows() || fg.col >= slice.cols())
      fail(ErrorKind::contract, "segment_prompted: fg point outside image");
    const Box& box = prompts.box;
    if (box.row_min > box.row_max || box.col_min > box.col_max || box.row_max >= slice.rows() ||
        box.col_max >= slice.cols()) {
      fail(ErrorKind::contract, "segment_prompted: box outside image");
    }
    Mask2D out(slice.rows(), slice.cols(), 0);
    if (!box.contains(fg.row, fg.col)) return out;
    const double cut = static_cast<double>(slice(fg.row, fg.col)) - options_.tau;
    auto accepts = [&](std::size_t r, std::size_t c) { return static_cast<double>(slice(r, c)) >= cut; };

    Mask2D blocked(slice.rows(), slice.cols(), 0);
    for (std::size_t i = 1; i < prompts.points.size(); ++i) {
      const auto& p = prompts.points[i];
      if (p.label != PointLabel::bg || p.row >= slice.rows() || p.col >= slice.cols() || accepts(p.row, p.col)) continue;
      blocked(p.row, p.col) = 1;
      if (p.row > 0) blocked(p.row - 1, p.col) = 1;
      if (p.row + 1 < slice.rows()) blocked(p.row + 1, p.col) = 1;
      if (p.col > 0) blocked(p.row, p.col - 1) = 1;
      if (p.col + 1 < slice.cols()) blocked(p.row, p.col + 1) = 1;
    }

    std::vector<std::pair<std::size_t, std::size_t>> stack{{fg.row, fg.col}};
    out(fg.row, fg.col) = 1;
    while (!stack.empty()) {
      const auto [r, c] = stack.back();
      stack.pop_back();
      auto visit = [&](std::size_t rr, std::size_t cc) {
        if (!box.contains(rr, cc) || out(rr, cc) || blocked(rr, cc) || !accepts(rr, cc)) return;
        out(rr, cc) = 1;
        stack.emplace_back(rr, cc);
      };
      if (r > 0) visit(r - 1, c);
      visit(r + 1, c);
      if (c > 0) visit(r, c - 1);
      visit(r, c + 1);
    }
    return out;
  }

  // Learns the 3D bounding box covering every training label.
  ModelState train_segmenter(const std::vector<SegmentationSample>& samples, std::uint64_t seed) const override {
    if (samples.empty()) fail(ErrorKind::empty_pool, "train_segmenter: empty training pool");
    bool any = false;
    std::size_t z0 = 0, z1 = 0, r0 = 0, r1 = 0, c0 = 0, c1 = 0;
    for (const auto& s : samples) {
      if (!s.label.same_shape(s.volume.voxels)) fail(ErrorKind::shape, "train_segmenter: label/volume shape mismatch");
      const auto& m = s.label;
      for (std::size_t d = 0; d < m.depth(); ++d) {
        for (std::size_t r = 0; r < m.rows(); ++r) {
          for (std::size_t c = 0; c < m.cols(); ++c) {
            if (!m(d, r, c)) continue;
            if (!any) {
              z0 = z1 = d;
              r0 = r1 = r;
              c0 = c1 = c;
              any = true;
            }
            z0 = std::min(z0, d);
            z1 = std::max(z1, d);
            r0 = std::min(r0, r);
            r1 = std::max(r1, r);
            c0 = std::min(c0, c);
            c1 = std::max(c1, c);
          }
        }
      }
    }
    ModelState state{{"model", "analytic-segmenter"}, {"trained", true}, {"samples", samples.size()}, {"seed", seed}};
    state["box"] = any ? nlohmann::json{z0, r0, c0, z1, r1, c1} : nlohmann::json(nullptr);
    return state;
  }

  // Otsu threshold of brain voxels inside the learned box.
  Mask3D predict_volume(const ModelState& segmenter, const Volume& volume) const override {
    if (!segmenter.is_object() || segmenter.value("model", "") != "analytic-segmenter" ||
        !segmenter.value("trained", false)) {
      fail(ErrorKind::state, "predict_volume: segmenter is not trained");
    }
    const auto& v = volume.voxels;
    Mask3D out(v.depth(), v.rows(), v.cols(), 0);
    if (segmenter.at("box").is_null()) return out;
    const auto b = segmenter.at("box").get<std::vector<std::size_t>>();
    const std::size_t z1 = std::min(b[3], v.depth() - 1), r1 = std::min(b[4], v.rows() - 1),
                      c1 = std::min(b[5], v.cols() - 1);
    std::vector<float> inside;
    for (std::size_t d = b[0]; d <= z1; ++d)
      for (std::size_t r = b[1]; r <= r1; ++r)
        for (std::size_t c = b[2]; c <= c1; ++c)
          if (v(d, r, c) != 0.0f) inside.push_back(v(d, r, c));
    const auto t = analytic::otsu_threshold(inside);
    if (!t) return out;
    for (std::size_t d = b[0]; d <= z1; ++d)
      for (std::size_t r = b[1]; r <= r1; ++r)
        for (std::size_t c = b[2]; c <= c1; ++c)
          if (v(d, r, c) != 0.0f && v(d, r, c) > *t) out(d, r, c) = 1;
    return out;
  }

 private:
  AnalyticOptions options_;
};

}  // namespace casc::backends
