#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxray/pseudo.hpp"
#include "voxray/render.hpp"
#include "voxray/scene.hpp"

namespace voxray {

struct ConfusionMatrix {
  int classes = 0;
  std::vector<int64_t> counts;      // classes x classes, pred-major rows
  std::vector<int64_t> void_preds;  // target class hit by an ignore pred

  explicit ConfusionMatrix(int c)
      : classes(c), counts(static_cast<size_t>(c) * c, 0), void_preds(c, 0) {}

  void add(int pred, int target);
  int64_t total() const;

  /// IoU per class; absent when the class appears in neither preds nor
  /// targets.
  std::vector<std::optional<double>> per_class_iou() const;
  double miou() const;  // mean over defined classes
};

struct MiouResult {
  std::vector<std::optional<double>> per_class;
  double miou = 0.0;
};

MiouResult miou(const std::vector<int>& preds,
                const std::vector<int>& targets, int classes);

/// Fig.-style dumps: semantic PPM, entropy PGM (255/ln C scale),
/// two-color correctness PPM, pseudo-label PPM.
void dump_images(const RayBundle& bundle, const PixelPseudoLabels& pseudo,
                 const LabelImage& gt, const std::string& out_prefix);

/// Pixels within `band_px` (Chebyshev) of a ground-truth instance
/// boundary.
std::vector<bool> boundary_band(const LabelImage& img, int band_px);

struct ParallaxRow {
  double offset = 0.0;
  double ray_acc = 0.0, persp_acc = 0.0;          // all labeled pixels
  double ray_boundary_acc = 0.0, persp_boundary_acc = 0.0;
};

/// Geometry diagnostic using oracle 3D semantics: compares ray-based and
/// projection-based pixel pseudo-labels against ground truth per camera
/// offset. One row per offset, averaged over seeds.
std::vector<ParallaxRow> parallax_report(const SceneConfig& base_config,
                                         const std::vector<double>& offsets,
                                         const std::vector<uint64_t>& seeds,
                                         int band_px = 2);

}  // namespace voxray
