#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/core/error.hpp"
#include "casc/core/grid.hpp"
#include "casc/labeling.hpp"

namespace casc {

enum class PointLabel { fg, bg };

struct PromptPoint {
  std::size_t row = 0;
  std::size_t col = 0;
  PointLabel label = PointLabel::fg;

  friend bool operator==(const PromptPoint&, const PromptPoint&) = default;
};

// One box plus one foreground point and four background box corners.
struct PromptSet {
  Box box;
  std::array<PromptPoint, 5> points;  // points[0] is the fg point

  const PromptPoint& foreground() const { return points[0]; }
  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

// Labels 4-connected components; returns labels (0 = background) and component sizes (index 0 unused).
inline std::vector<std::uint32_t> label_components(const Mask2D& mask, std::vector<std::size_t>& sizes) {
  std::vector<std::uint32_t> labels(mask.size(), 0);
  sizes.assign(1, 0);
  std::vector<std::size_t> stack;
  const std::size_t rows = mask.rows(), cols = mask.cols();
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || labels[start]) continue;
    const auto id = static_cast<std::uint32_t>(sizes.size());
    sizes.push_back(0);
    labels[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++sizes[id];
      const std::size_t r = i / cols, c = i % cols;
      auto visit = [&](std::size_t j) {
        if (mask[j] && !labels[j]) {
          labels[j] = id;
          stack.push_back(j);
        }
      };
      if (r > 0) visit(i - cols);
      if (r + 1 < rows) visit(i + cols);
      if (c > 0) visit(i - 1);
      if (c + 1 < cols) visit(i + 1);
    }
  }
  return labels;
}

// Largest 4-connected component. Equal sizes resolve to the component met first in row-major order.
inline Mask2D extract_roi(const Mask2D& mask) {
  std::vector<std::size_t> sizes;
  const auto labels = label_components(mask, sizes);
  Mask2D out(mask.rows(), mask.cols(), 0);
  std::uint32_t best = 0;
  for (std::uint32_t id = 1; id < sizes.size(); ++id) {
    if (best == 0 || sizes[id] > sizes[best]) best = id;
  }
  if (best == 0) return out;
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = labels[i] == best ? 1 : 0;
  return out;
}

inline Box pad_box(const Box& b, std::size_t padding, std::size_t rows, std::size_t cols) {
  Box out = b;
  out.row_min = b.row_min >= padding ? b.row_min - padding : 0;
  out.col_min = b.col_min >= padding ? b.col_min - padding : 0;
  out.row_max = std::min(rows - 1, b.row_max + padding);
  out.col_max = std::min(cols - 1, b.col_max + padding);
  return out;
}

inline PromptSet prompts_from(const Box& box, std::size_t fg_row, std::size_t fg_col) {
  PromptSet p;
  p.box = box;
  p.points[0] = {fg_row, fg_col, PointLabel::fg};
  p.points[1] = {box.row_min, box.col_min, PointLabel::bg};
  p.points[2] = {box.row_min, box.col_max, PointLabel::bg};
  p.points[3] = {box.row_max, box.col_min, PointLabel::bg};
  p.points[4] = {box.row_max, box.col_max, PointLabel::bg};
  return p;
}

// Box = tight bounds of the ROI (optionally padded); fg = floor of the box
// center, snapped to the nearest ROI pixel when the center falls outside it.
inline PromptSet build_prompts(const Mask2D& roi, std::size_t padding = 0) {
  const auto tight = bounding_box(roi);
  if (!tight) fail(ErrorKind::no_roi, "build_prompts: empty ROI");
  std::size_t fg_r = (tight->row_min + tight->row_max) / 2;
  std::size_t fg_c = (tight->col_min + tight->col_max) / 2;
  if (!roi(fg_r, fg_c)) {
    long long best = std::numeric_limits<long long>::max();
    std::size_t br = 0, bc = 0;
    for (std::size_t r = tight->row_min; r <= tight->row_max; ++r) {
      for (std::size_t c = tight->col_min; c <= tight->col_max; ++c) {
        if (!roi(r, c)) continue;
        const long long dr = static_cast<long long>(r) - static_cast<long long>(fg_r);
        const long long dc = static_cast<long long>(c) - static_cast<long long>(fg_c);
        const long long d2 = dr * dr + dc * dc;
        if (d2 < best) {
          best = d2;
          br = r;
          bc = c;
        }
      }
    }
    fg_r = br;
    fg_c = bc;
  }
  const Box box = padding ? pad_box(*tight, padding, roi.rows(), roi.cols()) : *tight;
  return prompts_from(box, fg_r, fg_c);
}

inline nlohmann::json to_json(const PromptSet& p) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& pt : p.points) {
    points.push_back({{"rc", {pt.row, pt.col}}, {"label", pt.label == PointLabel::fg ? "fg" : "bg"}});
  }
  return {{"box", {p.box.row_min, p.box.col_min, p.box.row_max, p.box.col_max}}, {"points", points}};
}

inline PromptSet prompt_set_from_json(const nlohmann::json& j) {
  PromptSet p;
  const auto box = j.at("box").get<std::vector<std::size_t>>();
  if (box.size() != 4) fail(ErrorKind::protocol, "prompt box must have 4 entries");
  p.box = Box{box[0], box[1], box[2], box[3]};
  const auto& pts = j.at("points");
  if (!pts.is_array() || pts.size() != 5) fail(ErrorKind::protocol, "prompt set must have 5 points");
  int fg_count = 0;
  std::size_t bg_index = 1;
  for (const auto& pj : pts) {
    const auto rc = pj.at("rc").get<std::vector<std::size_t>>();
    if (rc.size() != 2) fail(ErrorKind::protocol, "prompt point rc must have 2 entries");
    const auto label = pj.at("label").get<std::string>();
    if (label == "fg") {
      p.points[0] = {rc[0], rc[1], PointLabel::fg};
      ++fg_count;
    } else if (label == "bg") {
      if (bg_index > 4) fail(ErrorKind::protocol, "prompt set must have exactly 4 bg points");
      p.points[bg_index++] = {rc[0], rc[1], PointLabel::bg};
    } else {
      fail(ErrorKind::protocol, "prompt point label must be fg or bg");
    }
  }
  if (fg_count != 1) fail(ErrorKind::protocol, "prompt set must have exactly one fg point");
  return p;
}

// Structural invariants of a prompt set against a slice of the given size.
inline bool is_valid(const PromptSet& p, std::size_t rows, std::size_t cols) {
  const auto& b = p.box;
  if (b.row_min > b.row_max || b.col_min > b.col_max || b.row_max >= rows || b.col_max >= cols) return false;
  if (p.points[0].label != PointLabel::fg || !b.contains(p.points[0].row, p.points[0].col)) return false;
  for (std::size_t i = 1; i < 5; ++i) {
    const auto& pt = p.points[i];
    if (pt.label != PointLabel::bg) return false;
    const bool corner = (pt.row == b.row_min || pt.row == b.row_max) && (pt.col == b.col_min || pt.col == b.col_max);
    if (!corner) return false;
  }
  return true;
}

}  // namespace casc
