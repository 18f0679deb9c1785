#pragma once

#include <string>
#include <vector>

#include "voxray/render.hpp"
#include "voxray/scene.hpp"

namespace voxray {

enum class Reject { None, NoCoverage, HighEntropy };

struct SegmentMask {
  std::vector<int> pixels;  // linear indices, v * width + u
};

struct SegmentResult {
  int pseudo_class = kIgnore;
  double seg_entropy = 0.0;
  VecX mean_prob;            // mean over agreeing pixels
  Reject reject = Reject::None;
};

struct SegmentMaskSet {
  int width = 0, height = 0;
  std::vector<SegmentMask> masks;
  std::vector<SegmentResult> results;  // filled by confidence_sampler
};

struct PixelPseudoLabels {
  int width = 0, height = 0;
  std::vector<int> labels;  // class id or kIgnore
};

/// Label-agnostic masks from the ground-truth instance map: one mask per
/// 4-connected instance component, boundaries perturbed by up to
/// `perturbation` morphological steps with per-pixel noise.
SegmentMaskSet oracle_masks(const LabelImage& img, uint64_t seed,
                            int perturbation);

/// The segment-wise confidence sampler: majority argmax per segment,
/// entropy of the agreeing-pixel mean distribution, threshold gate.
/// Accepted segments stamp their class onto all their pixels; overlaps
/// resolve to the lower-entropy segment (ties to the smaller index).
PixelPseudoLabels confidence_sampler(const RayBundle& bundle,
                                     SegmentMaskSet& masks,
                                     double entropy_threshold);

/// Projection baseline: per-point 3D pseudo-labels from segment-majority
/// voting over projected points' 3D predictions.
std::vector<int> perspective_baseline(const Scan& scan,
                                      const CameraModel& cam,
                                      const std::vector<int>& point_preds,
                                      const SegmentMaskSet& masks);

/// Mask-free ablation: per-pixel argmax gated by pixel entropy.
PixelPseudoLabels nosam_pseudolabels(const RayBundle& bundle, int width,
                                     int height, double entropy_threshold);

// Mask files: a 16-bit PGM of segment ids (0 = background) plus an
// optional ASCII sidecar of overlapping masks as RLE pixel ranges,
// one line per segment: "id: start,len start,len ...".
void save_masks(const SegmentMaskSet& masks, const std::string& pgm_path,
                const std::string& sidecar_path = "");
SegmentMaskSet load_masks(const std::string& pgm_path,
                          const std::string& sidecar_path = "");

}  // namespace voxray
