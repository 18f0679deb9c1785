#pragma once

#include <string>
#include <vector>

#include "voxray/grid.hpp"
#include "voxray/scene.hpp"

namespace voxray {

inline constexpr double kTruncExpMax = 15.0;

inline double trunc_exp(double x) {
  return std::exp(x < kTruncExpMax ? x : kTruncExpMax);
}
// Hard truncation: zero gradient at and beyond the clamp.
inline double trunc_exp_grad(double x) {
  return x < kTruncExpMax ? std::exp(x) : 0.0;
}

/// 2-layer MLP: feature -> (C class logits, 1 raw density). Density is
/// passed through a truncated exponential.
struct NerfHead {
  int feat_dim = 16;
  int classes = 6;
  int hidden_dim = 64;
  MatX W1;  // hidden_dim x feat_dim
  VecX b1;
  MatX W2;  // (classes + 1) x hidden_dim
  VecX b2;

  static NerfHead init(int feat_dim, int classes, int hidden_dim,
                       uint64_t seed);
};

struct NerfHeadGrads {
  MatX W1, W2;
  VecX b1, b2;
  void init_like(const NerfHead& head);
  void zero();
};

struct NerfSampleCache {
  VecX feature;
  VecX hidden;       // post-ReLU
  double raw_density = 0.0;
};

struct NerfOutput {
  VecX logits;       // classes
  double density = 0.0;
};

NerfOutput nerf_head_forward(const NerfHead& head, const VecX& feature,
                             NerfSampleCache* cache = nullptr);

/// Backprop through one sample. Accumulates weight grads; returns the
/// gradient w.r.t. the input feature.
VecX nerf_head_backward(const NerfHead& head, const NerfSampleCache& cache,
                        const VecX& dlogits, double ddensity,
                        NerfHeadGrads& grads);

/// Linear per-voxel classifier.
struct VoxHead {
  int feat_dim = 16;
  int classes = 6;
  MatX W;  // classes x feat_dim
  VecX b;

  static VoxHead init(int feat_dim, int classes, uint64_t seed);
};

struct VoxHeadGrads {
  MatX W;
  VecX b;
  void init_like(const VoxHead& head);
  void zero();
};

/// Logits for every occupied cell, classes x occupied().
MatX vox_head_forward(const VoxHead& head, const CylGrid& grid);

/// Slot of each point's containing cell, -1 for out-of-bounds points.
std::vector<int> point_slots(const CylGrid& grid, const Scan& scan);

/// Per-point class predictions; out-of-bounds points get kIgnore.
std::vector<int> vox_head_point_predictions(const VoxHead& head,
                                            const CylGrid& grid,
                                            const Scan& scan);

/// Accumulates weight grads and per-cell feature grads from per-cell
/// logit grads.
void vox_head_backward(const VoxHead& head, const CylGrid& grid,
                       const MatX& dlogits, VoxHeadGrads& grads,
                       MatX& feat_grads);

void save_nerf_head(const NerfHead& head, const std::string& path);
NerfHead load_nerf_head(const std::string& path);
void save_vox_head(const VoxHead& head, const std::string& path);
VoxHead load_vox_head(const std::string& path);

}  // namespace voxray
