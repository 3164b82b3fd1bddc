#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "casc/backends/backend.hpp"
#include "casc/core/error.hpp"
#include "casc/core/grid.hpp"
#include "casc/labeling.hpp"
#include "casc/prompting.hpp"

namespace casc {

enum class PseudoLabelSource { cam_sam, self_train_round1, sam_reseg };

enum class SliceOrigin { empty_by_label, segmented, fallback_empty };

inline const char* to_string(PseudoLabelSource s) {
  switch (s) {
    case PseudoLabelSource::cam_sam: return "cam_sam";
    case PseudoLabelSource::self_train_round1: return "self_train_round1";
    case PseudoLabelSource::sam_reseg: return "sam_reseg";
  }
  return "?";
}

inline const char* to_string(SliceOrigin o) {
  switch (o) {
    case SliceOrigin::empty_by_label: return "empty_by_label";
    case SliceOrigin::segmented: return "segmented";
    case SliceOrigin::fallback_empty: return "fallback_empty";
  }
  return "?";
}

struct PseudoLabel {
  Mask3D mask;
  PseudoLabelSource source = PseudoLabelSource::cam_sam;
  std::vector<SliceOrigin> per_slice_origin;
};

// Stacks per-slice segmenter outputs. `positive_masks` holds one entry per
// label-1 slice in slice order; nullopt marks a slice where no prompt could be built.
inline PseudoLabel assemble(const Volume& volume, const std::vector<int>& slice_labels,
                            const std::vector<std::optional<Mask2D>>& positive_masks,
                            PseudoLabelSource source = PseudoLabelSource::cam_sam) {
  const auto& v = volume.voxels;
  if (slice_labels.size() != v.depth()) fail(ErrorKind::shape, "assemble: one label per slice required");
  const auto positives = static_cast<std::size_t>(std::count(slice_labels.begin(), slice_labels.end(), 1));
  if (positive_masks.size() != positives) fail(ErrorKind::shape, "assemble: one mask per positive slice required");
  PseudoLabel out{Mask3D(v.depth(), v.rows(), v.cols(), 0), source, {}};
  std::size_t k = 0;
  for (std::size_t d = 0; d < v.depth(); ++d) {
    if (slice_labels[d] != 1) {
      out.per_slice_origin.push_back(SliceOrigin::empty_by_label);
      continue;
    }
    const auto& m = positive_masks[k++];
    if (!m) {
      out.per_slice_origin.push_back(SliceOrigin::fallback_empty);
      continue;
    }
    if (m->rows() != v.rows() || m->cols() != v.cols()) fail(ErrorKind::shape, "assemble: slice mask shape mismatch");
    out.mask.set_slice(d, *m);
    out.per_slice_origin.push_back(SliceOrigin::segmented);
  }
  return out;
}

struct CamPromptOptions {
  double roi_threshold = 0.5;  // on the fused [0,1] CAM
  std::size_t box_padding = 0;
  std::size_t fallback_box = 9;
};

// Prompt set from a fused CAM: largest component of the thresholded brain CAM,
// or, when that is empty, the CAM argmax with a fixed-size box around it.
// nullopt when the CAM carries no activation at all.
inline std::optional<PromptSet> prompts_from_cam(const CamMap& cam, const Mask2D& brain, const CamPromptOptions& opt) {
  const auto& q = cam.values;
  Mask2D hot(q.rows(), q.cols(), 0);
  for (std::size_t i = 0; i < q.size(); ++i) hot[i] = (brain[i] && q[i] > opt.roi_threshold) ? 1 : 0;
  const auto roi = extract_roi(hot);
  if (popcount(roi) > 0) return build_prompts(roi, opt.box_padding);

  if (q.size() == 0) return std::nullopt;
  const auto it = std::max_element(q.values().begin(), q.values().end());
  if (!(*it > 0.0)) return std::nullopt;
  const auto idx = static_cast<std::size_t>(it - q.values().begin());
  const std::size_t r = idx / q.cols(), c = idx % q.cols();
  const std::size_t half = opt.fallback_box / 2;
  const Box box = pad_box(Box{r, c, r, c}, half, q.rows(), q.cols());
  return prompts_from(box, r, c);
}

// Re-derives a pseudo-label from a 3D prediction by prompting the segmenter on
// every slice the prediction touches.
inline PseudoLabel resegment_via_prompts(const Mask3D& prediction, const Volume& volume,
                                         const backends::Backend& segmenter, std::size_t box_padding = 0) {
  const auto& v = volume.voxels;
  if (!prediction.same_shape(v)) fail(ErrorKind::shape, "resegment_via_prompts: prediction/volume shape mismatch");
  PseudoLabel out{Mask3D(v.depth(), v.rows(), v.cols(), 0), PseudoLabelSource::sam_reseg, {}};
  for (std::size_t d = 0; d < v.depth(); ++d) {
    const Mask2D plane = prediction.slice(d);
    if (popcount(plane) == 0) {
      out.per_slice_origin.push_back(SliceOrigin::empty_by_label);
      continue;
    }
    const auto prompts = build_prompts(extract_roi(plane), box_padding);
    try {
      out.mask.set_slice(d, segmenter.segment_prompted(v.slice(d), prompts));
    } catch (const Error& e) {
      fail(ErrorKind::backend, "volume " + volume.id + " slice " + std::to_string(d) + ": " + e.what());
    }
    out.per_slice_origin.push_back(SliceOrigin::segmented);
  }
  return out;
}

}  // namespace casc
