#pragma once

#include <string>
#include <vector>

#include "voxray/backbone.hpp"
#include "voxray/eval.hpp"
#include "voxray/heads.hpp"
#include "voxray/loss.hpp"
#include "voxray/pseudo.hpp"
#include "voxray/render.hpp"
#include "voxray/scene.hpp"

namespace voxray {

enum class TrainMode { Full, SupOnly, Perspective, NoSam };

TrainMode parse_mode(const std::string& name);  // throws ConfigError
std::string mode_name(TrainMode mode);

struct TrainConfig {
  int epochs = 12;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double labeled_fraction = 0.1;
  uint64_t seed = 1;
  TrainMode mode = TrainMode::Full;
  int threads = 1;

  // Model shape
  int feat_dim = 16;
  int hidden_dim = 32;
  double kappa = 0.3;

  // Grid / rendering scale for the toy scenes
  int res_r = 28, res_a = 48, res_h = 10;
  CylBounds grid_bounds{0.0, 26.0, -2.5, 4.5};
  int samples_per_ray = 96;
  double near_plane = 1.0;
  double far_plane = 30.0;
  int mask_perturbation = 1;

  LossWeights weights;
};

/// key=value file; unknown keys are a ConfigError.
TrainConfig load_train_config(const std::string& path);

/// Serializes every field as key=value, one per line, for run logging.
std::string train_config_text(const TrainConfig& cfg);

/// One scene's files loaded from a dataset directory.
struct SceneRecord {
  Scan scan;               // labels stripped for the unlabeled cue
  std::vector<int> gt_labels;
  LabelImage image;
  SegmentMaskSet masks;
  CameraModel cam;
};

struct Dataset {
  std::vector<SceneRecord> train;  // labeled flag per index
  std::vector<bool> labeled;
  std::vector<SceneRecord> val;
  int classes = 0;
};

/// Trainable state: backbone + both heads + SGD momentum buffers.
struct TrainState {
  MiniVoxNet backbone;
  VoxHead vox_head;
  NerfHead nerf_head;

  MiniVoxNetGrads backbone_g, backbone_m;
  VoxHeadGrads vox_g, vox_m;
  NerfHeadGrads nerf_g, nerf_m;

  static TrainState init(const TrainConfig& cfg, int classes, uint64_t seed);
  void sgd_step(double lr, double momentum);
};

struct LossBreakdown {
  double l3d_vox = 0.0, l3d_nerf = 0.0, l2d = 0.0, total = 0.0;
  int accepted_segments = 0, pseudo_pixels = 0;
};

/// One optimizer step on a (labeled, unlabeled) scene pair. In SupOnly
/// mode `unlabeled` is ignored.
LossBreakdown train_step(TrainState& state, const TrainConfig& cfg,
                         const SceneRecord& labeled,
                         const std::vector<int>& labels,
                         const SceneRecord* unlabeled, int epoch);

/// Per-point predictions on a scan using only backbone + vox head
/// (the uni-modal inference path).
std::vector<int> infer_points(const TrainState& state, const TrainConfig& cfg,
                              const Scan& scan);

MiouResult evaluate(const TrainState& state, const TrainConfig& cfg,
                    const Dataset& data);

struct ExperimentResult {
  MiouResult val;
  std::vector<LossBreakdown> epoch_losses;
  std::string report;  // ASCII table
};

Dataset load_dataset(const std::string& dir, const TrainConfig& cfg,
                     double labeled_fraction, uint64_t split_seed);

ExperimentResult run_experiment(const TrainConfig& cfg, Dataset& data,
                                const std::string& out_dir = "");

/// Writes scans, label/instance images, masks and calibration for
/// `count` train + `val_count` validation scenes.
void generate_dataset(const SceneConfig& scfg, int count, int val_count,
                      uint64_t seed, int mask_perturbation,
                      const std::string& dir);

}  // namespace voxray
